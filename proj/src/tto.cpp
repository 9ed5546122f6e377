#include "ttoreg/tto.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ttoreg/config.hpp"
#include "ttoreg/error.hpp"
#include "ttoreg/io.hpp"

namespace ttoreg {

const char* to_string(TtoMode m) noexcept {
  switch (m) {
    case TtoMode::Scratch: return "scratch";
    case TtoMode::Inter: return "inter";
    case TtoMode::Intra: return "intra";
  }
  return "?";
}

TtoMode parse_tto_mode(const std::string& text) {
  if (text == "scratch") return TtoMode::Scratch;
  if (text == "inter") return TtoMode::Inter;
  if (text == "intra") return TtoMode::Intra;
  throw ConfigError("unknown mode '" + text + "' (expected scratch, inter or intra)");
}

const char* to_string(RunStatus s) noexcept {
  switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::Capped: return "capped";
    case RunStatus::Diverged: return "diverged";
  }
  return "?";
}

RunStatus parse_run_status(const std::string& text) {
  if (text == "converged") return RunStatus::Converged;
  if (text == "capped") return RunStatus::Capped;
  if (text == "diverged") return RunStatus::Diverged;
  throw FormatError("unknown run status '" + text + "'");
}

std::vector<double> TTORun::best_trace() const {
  std::vector<double> out(loss_trace.size());
  double best = INFINITY;
  for (std::size_t i = 0; i < loss_trace.size(); ++i) out[i] = best = std::min(best, loss_trace[i]);
  return out;
}

namespace {

void check_start(const TtoStart& start, TtoMode mode) {
  const Provenance p = start.provenance();
  bool ok = false;
  switch (mode) {
    case TtoMode::Scratch: ok = !start.checkpoint.has_value(); break;
    case TtoMode::Inter: ok = p == Provenance::Population; break;
    case TtoMode::Intra: ok = p == Provenance::Individualized || p == Provenance::Fractional; break;
  }
  if (!ok) {
    throw ConfigError(std::string(to_string(mode)) + " mode cannot start from a " +
                      (start.checkpoint ? to_string(p) : "fresh") + " model");
  }
}

}  // namespace

TTORun tto_run(const TtoStart& start, const Volume& moving, const Volume& fixed, const TtoSettings& settings,
               TtoMode mode) {
  check_start(start, mode);
  settings.loss.validate();
  settings.rule.validate();
  settings.adam.validate();
  check_inputs(start.arch, moving.dims(), fixed.dims());

  ModelParameters params = start.checkpoint ? *start.checkpoint : init_params(start.arch, start.seed);
  params.validate();

  TTORun run;
  run.mode = mode;
  run.start_provenance = start.provenance();
  OptimizerState state = OptimizerState::for_parameters(params.blob.size(), settings.adam);
  ConvergenceMonitor monitor(settings.rule);
  ModelParameters best = params;
  double best_loss = INFINITY;

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  try {
    for (;;) {
      const LossAndGradients lg = loss_and_gradients(params, moving, fixed, settings.loss);
      run.loss_trace.push_back(lg.loss);
      run.wall_trace_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
      if (lg.loss < best_loss) {
        best_loss = lg.loss;
        best.blob = params.blob;
        run.best_iteration = run.loss_trace.size() - 1;
      }
      const ConvergenceVerdict v = monitor.push(lg.loss);
      if (v.stopped()) {
        run.status = v.converged ? RunStatus::Converged : RunStatus::Capped;
        break;
      }
      adam_update(params.blob, lg.gradients, state);
    }
  } catch (const DivergenceError& e) {
    run.status = RunStatus::Diverged;
    run.error = e.what();
  }
  run.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  run.iterations = static_cast<int>(run.loss_trace.size());

  best.provenance = mode == TtoMode::Intra ? Provenance::Fractional : Provenance::Individualized;
  run.result = std::move(best);
  // With no finite loss at all the start parameters themselves are
  // unusable; report the identity transform instead of a non-finite field.
  run.final_field = run.loss_trace.empty() ? DisplacementField(fixed.dims()) : forward(run.result, moving, fixed);
  return run;
}

std::vector<TTORun> run_fraction_sequence(const ModelParameters& population, std::span<const ImagePair> fractions,
                                          const TtoSettings& settings) {
  if (fractions.empty()) throw ConfigError("fraction sequence is empty");
  for (const ImagePair& p : fractions) {
    if (!(p.moving.dims() == fractions.front().moving.dims()) || !(p.fixed.dims() == p.moving.dims())) {
      throw ShapeError("fraction pairs do not share dims");
    }
  }
  std::vector<TTORun> runs;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const TtoStart start = TtoStart::from(k == 0 ? population : runs.back().result);
    runs.push_back(tto_run(start, fractions[k].moving, fractions[k].fixed, settings,
                           k == 0 ? TtoMode::Inter : TtoMode::Intra));
    if (runs.back().status == RunStatus::Diverged) break;
  }
  return runs;
}

void write_trace_csv(std::span<const double> loss, std::span<const double> wall_ms,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,loss,wall_ms\n";
  char buf[96];
  for (std::size_t i = 0; i < loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.3f\n", i, loss[i], i < wall_ms.size() ? wall_ms[i] : 0.0);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_run(const TTORun& run, const std::filesystem::path& dir, const std::string& subject, int fraction) {
  std::filesystem::create_directories(dir);
  write_trace_csv(run.loss_trace, run.wall_trace_ms, dir / "trace.csv");
  save_checkpoint(run.result, dir / "model");
  save_field(run.final_field, dir / "field");
  Json meta{{"subject", subject},
            {"fraction", fraction},
            {"mode", to_string(run.mode)},
            {"start_provenance", to_string(run.start_provenance)},
            {"status", to_string(run.status)},
            {"iterations", run.iterations},
            {"wall_ms", run.wall_ms},
            {"initial_loss", run.initial_loss()},
            {"best_loss", run.best_loss()},
            {"final_loss", run.loss_trace.empty() ? 0.0 : run.loss_trace.back()},
            {"best_iteration", run.best_iteration},
            {"error", run.error}};
  write_json_file(meta, dir / "run.json");
}

TTORun read_run(const std::filesystem::path& dir) {
  const Json j = read_json_file(dir / "run.json");
  TTORun run;
  try {
    run.mode = parse_tto_mode(j.at("mode").get<std::string>());
    run.start_provenance = parse_provenance(j.at("start_provenance").get<std::string>());
    run.status = parse_run_status(j.at("status").get<std::string>());
    run.iterations = j.at("iterations").get<int>();
    run.wall_ms = j.at("wall_ms").get<double>();
    run.best_iteration = j.at("best_iteration").get<std::size_t>();
    run.error = j.at("error").get<std::string>();
  } catch (const Json::exception& e) {
    throw FormatError((dir / "run.json").string() + ": " + e.what());
  }
  std::ifstream in(dir / "trace.csv");
  if (!in) throw IoError("missing " + (dir / "trace.csv").string());
  std::string line;
  std::getline(in, line);
  if (line != "iteration,loss,wall_ms") throw FormatError((dir / "trace.csv").string() + ": bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string it, loss, wall;
    if (!std::getline(row, it, ',') || !std::getline(row, loss, ',') || !std::getline(row, wall)) {
      throw FormatError((dir / "trace.csv").string() + ": malformed row '" + line + "'");
    }
    run.loss_trace.push_back(std::stod(loss));
    run.wall_trace_ms.push_back(std::stod(wall));
  }
  if (static_cast<int>(run.loss_trace.size()) != run.iterations) {
    throw FormatError(dir.string() + ": trace length disagrees with run.json iterations");
  }
  run.result = load_checkpoint(dir / "model");
  run.final_field = load_field(dir / "field");
  return run;
}

}  // namespace ttoreg
