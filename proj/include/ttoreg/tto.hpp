#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttoreg/field.hpp"
#include "ttoreg/loss.hpp"
#include "ttoreg/network.hpp"
#include "ttoreg/optim.hpp"
#include "ttoreg/volume.hpp"

namespace ttoreg {

enum class TtoMode { Scratch, Inter, Intra };
enum class RunStatus { Converged, Capped, Diverged };

const char* to_string(TtoMode m) noexcept;
TtoMode parse_tto_mode(const std::string& text);
const char* to_string(RunStatus s) noexcept;
RunStatus parse_run_status(const std::string& text);

struct TtoSettings {
  LossConfig loss;
  ConvergenceRule rule;
  AdamSettings adam;
};

/// Starting point of a run: a checkpoint, or a fresh initialization of
/// `arch` with `seed` (scratch mode).
struct TtoStart {
  std::optional<ModelParameters> checkpoint;
  ArchitectureSpec arch;
  std::uint64_t seed = 0;

  static TtoStart from(const ModelParameters& p) { return {p, p.arch, p.seed}; }
  static TtoStart fresh(const ArchitectureSpec& arch, std::uint64_t seed) { return {std::nullopt, arch, seed}; }
  Provenance provenance() const noexcept { return checkpoint ? checkpoint->provenance : Provenance::None; }
};

struct TTORun {
  TtoMode mode = TtoMode::Inter;
  Provenance start_provenance = Provenance::None;
  std::vector<double> loss_trace;
  std::vector<double> wall_trace_ms;  // cumulative, one entry per trace entry
  int iterations = 0;                 // == loss_trace.size()
  double wall_ms = 0.0;
  RunStatus status = RunStatus::Converged;
  std::string error;  // set when diverged
  std::size_t best_iteration = 0;
  ModelParameters result;  // snapshot at the best loss
  DisplacementField final_field;

  double initial_loss() const { return loss_trace.empty() ? 0.0 : loss_trace.front(); }
  double best_loss() const { return loss_trace.empty() ? 0.0 : loss_trace[best_iteration]; }
  /// Running minimum of the loss trace.
  std::vector<double> best_trace() const;
};

/// Alternates loss/gradient evaluation and Adam steps on one pair until the
/// convergence rule fires. The start checkpoint is never modified. A
/// non-finite loss or gradient ends the run with status Diverged and the
/// trace so far. Throws ConfigError when the start provenance does not fit
/// the mode, ShapeError on incompatible inputs.
TTORun tto_run(const TtoStart& start, const Volume& moving, const Volume& fixed, const TtoSettings& settings,
               TtoMode mode);

/// Fraction 1: inter from the population model; fraction k > 1: intra from
/// the fraction k-1 result. Stops after the first diverged run.
std::vector<TTORun> run_fraction_sequence(const ModelParameters& population, std::span<const ImagePair> fractions,
                                          const TtoSettings& settings);

/// `run.json`, `trace.csv`, `model.ckpt.{json,raw}` and `field.{json,raw}`.
void write_run(const TTORun& run, const std::filesystem::path& dir, const std::string& subject = {},
               int fraction = 0);

/// Trace CSV with columns iteration,loss,wall_ms.
void write_trace_csv(std::span<const double> loss, std::span<const double> wall_ms,
                     const std::filesystem::path& path);

/// Metadata and trace of a run directory; `result`/`final_field` are loaded
/// too.
TTORun read_run(const std::filesystem::path& dir);

}  // namespace ttoreg
