#include "ttoreg/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "ttoreg/error.hpp"

namespace ttoreg {

void AdamSettings::validate() const {
  if (!std::isfinite(learning_rate) || learning_rate < 0) throw ConfigError("learning_rate must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw ConfigError("Adam epsilon must be > 0");
}

OptimizerState OptimizerState::for_parameters(std::size_t count, const AdamSettings& settings) {
  settings.validate();
  OptimizerState s;
  s.first_moment.assign(count, 0.0f);
  s.second_moment.assign(count, 0.0f);
  s.settings = settings;
  return s;
}

void adam_update(std::span<float> params, std::span<const float> grads, OptimizerState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeError("Adam: parameter, gradient and moment lengths differ");
  }
  bool all_zero = true;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) throw DivergenceError("non-finite gradient at parameter " + std::to_string(i));
    all_zero = all_zero && grads[i] == 0.0f;
  }
  ++state.step_count;
  if (all_zero) return;

  const AdamSettings& a = state.settings;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(a.beta1, t);
  const double c2 = 1.0 - std::pow(a.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = a.beta1 * state.first_moment[i] + (1.0 - a.beta1) * g;
    const double v = a.beta2 * state.second_moment[i] + (1.0 - a.beta2) * g * g;
    state.first_moment[i] = static_cast<float>(m);
    state.second_moment[i] = static_cast<float>(v);
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    params[i] = static_cast<float>(params[i] - a.learning_rate * m_hat / (std::sqrt(v_hat) + a.epsilon));
  }
}

std::pair<ModelParameters, OptimizerState> adam_step(const ModelParameters& params, std::span<const float> grads,
                                                     const OptimizerState& state) {
  std::pair<ModelParameters, OptimizerState> out{params, state};
  adam_update(out.first.blob, grads, out.second);
  return out;
}

void ConvergenceRule::validate() const {
  if (!(min_delta > 0) || !std::isfinite(min_delta)) throw ConfigError("min_delta must be > 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_iters < patience) throw ConfigError("max_iters must be >= patience");
}

ConvergenceMonitor::ConvergenceMonitor(ConvergenceRule rule) : rule_(rule) { rule_.validate(); }

ConvergenceVerdict ConvergenceMonitor::push(double loss) {
  if (verdict_.stopped()) return verdict_;
  const std::size_t t = seen_++;
  if (t == 0) {
    reference_ = loss;
  } else if (reference_ - loss >= rule_.min_delta) {
    reference_ = loss;
    streak_ = 0;
  } else {
    ++streak_;
  }
  if (streak_ >= rule_.patience) {
    verdict_.converged = true;
    verdict_.stop_iteration = t;
  } else if (seen_ >= static_cast<std::size_t>(rule_.max_iters)) {
    verdict_.capped = true;
    verdict_.stop_iteration = t;
  }
  return verdict_;
}

ConvergenceVerdict check_convergence(std::span<const double> trace, const ConvergenceRule& rule) {
  ConvergenceMonitor monitor(rule);
  for (double loss : trace) {
    if (monitor.push(loss).stopped()) break;
  }
  return monitor.verdict();
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainingResult train_population(std::span<const ImagePair> cohort, const ArchitectureSpec& arch,
                                const LossConfig& cfg, int epochs, std::uint64_t seed, const AdamSettings& adam,
                                const TrainingResult* resume, const EpochCallback& on_epoch) {
  if (cohort.empty()) throw ConfigError("training cohort is empty");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  cfg.validate();
  for (const auto& pair : cohort) check_inputs(arch, pair.moving.dims(), pair.fixed.dims());
  if (!(cohort.front().moving.dims() == cohort.back().moving.dims())) {
    throw ShapeError("training pairs do not share dims");
  }

  TrainingResult result;
  if (resume != nullptr) {
    if (!(resume->params.arch == arch)) throw ConfigError("resume checkpoint architecture differs");
    result = *resume;
  } else {
    result.params = init_params(arch, seed);
    result.optimizer = OptimizerState::for_parameters(result.params.blob.size(), adam);
  }
  result.params.provenance = Provenance::Population;

  using clock = std::chrono::steady_clock;
  for (int epoch = static_cast<int>(result.epochs.size()); epoch < epochs; ++epoch) {
    const auto start = clock::now();
    double sum = 0.0;
    for (std::size_t index : epoch_order(cohort.size(), seed, epoch)) {
      const ImagePair& pair = cohort[index];
      LossAndGradients lg;
      try {
        lg = loss_and_gradients(result.params, pair.moving, pair.fixed, cfg);
        adam_update(result.params.blob, lg.gradients, result.optimizer);
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", pair " +
                              std::to_string(index) + ": " + e.what());
      }
      sum += lg.loss;
    }
    EpochRecord record{epoch, sum / static_cast<double>(cohort.size()),
                       std::chrono::duration<double, std::milli>(clock::now() - start).count()};
    result.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return result;
}

}  // namespace ttoreg
