#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ttoreg/loss.hpp"
#include "ttoreg/network.hpp"
#include "ttoreg/volume.hpp"

namespace ttoreg {

struct AdamSettings {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;

  friend bool operator==(const AdamSettings&, const AdamSettings&) = default;
};

struct OptimizerState {
  std::vector<float> first_moment;
  std::vector<float> second_moment;
  std::int64_t step_count = 0;
  AdamSettings settings;

  static OptimizerState for_parameters(std::size_t count, const AdamSettings& settings = {});

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// In-place Adam update with bias correction. A gradient that is exactly
/// zero everywhere leaves parameters and moments untouched (only the step
/// counter advances). Throws DivergenceError on a non-finite gradient and
/// ShapeError on length mismatch.
void adam_update(std::span<float> params, std::span<const float> grads, OptimizerState& state);

std::pair<ModelParameters, OptimizerState> adam_step(const ModelParameters& params, std::span<const float> grads,
                                                     const OptimizerState& state);

/// A loss change smaller than `min_delta` is no decrease; `patience`
/// consecutive no-decrease iterations mean convergence. `max_iters` caps
/// the number of loss evaluations.
struct ConvergenceRule {
  double min_delta = 0.005;
  int patience = 50;
  int max_iters = 2000;

  void validate() const;

  static ConvergenceRule scratch() { return {0.005, 50, 2000}; }
  static ConvergenceRule warm_start() { return {0.005, 50, 500}; }
};

struct ConvergenceVerdict {
  bool converged = false;
  bool capped = false;
  std::size_t stop_iteration = 0;  // 0-based trace index; meaningful when stopped()

  bool stopped() const noexcept { return converged || capped; }
};

/// Incremental form of check_convergence. The reference level is the loss
/// at the last counted decrease; an iteration is a decrease only when it
/// undercuts that level by at least min_delta.
class ConvergenceMonitor {
 public:
  explicit ConvergenceMonitor(ConvergenceRule rule);

  /// Feeds the next loss; returns the verdict after it. Once stopped, the
  /// verdict is frozen.
  ConvergenceVerdict push(double loss);

  const ConvergenceVerdict& verdict() const noexcept { return verdict_; }
  double reference() const noexcept { return reference_; }

 private:
  ConvergenceRule rule_;
  ConvergenceVerdict verdict_;
  std::size_t seen_ = 0;
  int streak_ = 0;
  double reference_ = 0.0;
};

ConvergenceVerdict check_convergence(std::span<const double> trace, const ConvergenceRule& rule);

struct ImagePair {
  Volume moving;
  Volume fixed;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainingResult {
  ModelParameters params;
  OptimizerState optimizer;
  std::vector<EpochRecord> epochs;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// epochs x |cohort| single-pair Adam steps. Epoch e visits the pairs in a
/// permutation derived from (seed, e), so a run resumed from a saved
/// TrainingResult continues exactly as an uninterrupted one. Throws
/// DivergenceError naming the epoch and pair on a non-finite loss.
TrainingResult train_population(std::span<const ImagePair> cohort, const ArchitectureSpec& arch,
                                const LossConfig& cfg, int epochs, std::uint64_t seed,
                                const AdamSettings& adam = {}, const TrainingResult* resume = nullptr,
                                const EpochCallback& on_epoch = {});

/// Visiting order of epoch `epoch`.
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch);

}  // namespace ttoreg
