#include "ttoreg/network.hpp"

#include <cmath>
#include <random>

#include "ttoreg/error.hpp"
#include "ttoreg/kernels.hpp"

namespace ttoreg {

ArchitectureSpec ArchitectureSpec::plain_cnn(int cascade_stages) {
  ArchitectureSpec a;
  a.kind = ArchKind::PlainCnn;
  a.cascade_stages = cascade_stages;
  return a;
}

ArchitectureSpec ArchitectureSpec::encoder_decoder(int cascade_stages) {
  ArchitectureSpec a;
  a.kind = ArchKind::EncoderDecoder;
  a.conv_layers = 5;
  a.cascade_stages = cascade_stages;
  return a;
}

std::vector<ConvShape> ArchitectureSpec::stage_layers() const {
  const int f = filters;
  std::vector<ConvShape> layers;
  if (kind == ArchKind::PlainCnn) {
    layers.push_back({2, f, 1, true});
    for (int i = 0; i < conv_layers - 2; ++i) layers.push_back({f, f, 1, true});
    layers.push_back({f, 3, 1, false});
  } else {
    layers = {{2, f, 1, true}, {f, f, 2, true}, {f, f, 1, true}, {2 * f, f, 1, true}, {f, 3, 1, false}};
  }
  return layers;
}

std::size_t ArchitectureSpec::stage_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : stage_layers()) n += l.parameter_count();
  return n;
}

std::size_t ArchitectureSpec::parameter_count() const {
  return stage_parameter_count() * static_cast<std::size_t>(cascade_stages);
}

std::string ArchitectureSpec::label() const {
  std::string s = to_string(kind);
  if (cascade_stages > 1) s += " x" + std::to_string(cascade_stages);
  return s;
}

void ArchitectureSpec::validate() const {
  if (filters < 1) throw ConfigError("filters must be >= 1");
  if (cascade_stages < 1) throw ConfigError("cascade_stages must be >= 1");
  if (kind == ArchKind::PlainCnn && conv_layers < 2) throw ConfigError("plain-cnn needs at least 2 layers");
  if (!std::isfinite(leaky_slope) || leaky_slope < 0 || leaky_slope >= 1) {
    throw ConfigError("leaky_slope must lie in [0, 1)");
  }
}

const char* to_string(ArchKind kind) noexcept {
  return kind == ArchKind::PlainCnn ? "plain-cnn" : "encoder-decoder";
}

ArchKind parse_arch_kind(const std::string& text) {
  if (text == "plain-cnn") return ArchKind::PlainCnn;
  if (text == "encoder-decoder") return ArchKind::EncoderDecoder;
  throw ConfigError("unknown architecture kind '" + text + "'");
}

const char* to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::Population: return "population";
    case Provenance::Individualized: return "individualized";
    case Provenance::Fractional: return "fractional";
    case Provenance::None: break;
  }
  return "none";
}

Provenance parse_provenance(const std::string& text) {
  if (text == "none") return Provenance::None;
  if (text == "population") return Provenance::Population;
  if (text == "individualized") return Provenance::Individualized;
  if (text == "fractional") return Provenance::Fractional;
  throw ConfigError("unknown provenance '" + text + "'");
}

void ModelParameters::validate() const {
  arch.validate();
  if (blob.size() != arch.parameter_count()) {
    throw FormatError("parameter blob holds " + std::to_string(blob.size()) + " values, " + arch.label() +
                      " needs " + std::to_string(arch.parameter_count()));
  }
  for (std::size_t i = 0; i < blob.size(); ++i) {
    if (!std::isfinite(blob[i])) throw FormatError("non-finite parameter at index " + std::to_string(i));
  }
}

ModelParameters init_params(const ArchitectureSpec& arch, std::uint64_t seed) {
  arch.validate();
  ModelParameters p;
  p.arch = arch;
  p.seed = seed;
  p.blob.assign(arch.parameter_count(), 0.0f);
  std::mt19937_64 rng(seed);
  const auto layers = arch.stage_layers();
  std::size_t offset = 0;
  for (int stage = 0; stage < arch.cascade_stages; ++stage) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const bool last = l + 1 == layers.size();
      if (!last) {
        const double bound = std::sqrt(1.0 / (static_cast<double>(layers[l].in_channels) * 27.0));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < layers[l].weight_count(); ++i) {
          p.blob[offset + i] = static_cast<float>(dist(rng));
        }
      }
      offset += layers[l].parameter_count();
    }
  }
  return p;
}

void check_inputs(const ArchitectureSpec& arch, const Dims& moving, const Dims& fixed) {
  if (!(moving == fixed)) {
    throw ShapeError("moving and fixed dims differ: " + to_string(moving) + " vs " + to_string(fixed));
  }
  const int m = arch.size_multiple();
  if (moving.nx % m != 0 || moving.ny % m != 0 || moving.nz % m != 0) {
    throw ShapeError(arch.label() + " needs every dimension divisible by " + std::to_string(m) + ", got " +
                     to_string(moving));
  }
}

namespace {

template <typename T>
struct LayerView {
  ConvShape shape;
  std::span<const T> weights;
  std::span<const T> bias;
  std::span<T> grad_weights;
  std::span<T> grad_bias;
};

// Activations of one stage, kept for the backward pass.
template <typename T>
struct StageState {
  Tensor<T> input;
  std::vector<Tensor<T>> acts;
  Tensor<T> concat;  // encoder-decoder only
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.channels() + b.channels(), a.dims());
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  return out;
}

template <typename T>
class StageNetwork {
 public:
  StageNetwork(const ArchitectureSpec& arch, std::span<const T> params, std::span<T> grads)
      : arch_(arch), slope_(static_cast<T>(arch.leaky_slope)) {
    std::size_t offset = 0;
    for (const auto& shape : arch.stage_layers()) {
      LayerView<T> v{shape, params.subspan(offset, shape.weight_count()),
                     params.subspan(offset + shape.weight_count(), shape.out_channels), {}, {}};
      if (!grads.empty()) {
        v.grad_weights = grads.subspan(offset, shape.weight_count());
        v.grad_bias = grads.subspan(offset + shape.weight_count(), shape.out_channels);
      }
      layers_.push_back(v);
      offset += shape.parameter_count();
    }
  }

  Tensor<T> forward(Tensor<T> input, StageState<T>& state) const {
    state.input = std::move(input);
    state.acts.assign(layers_.size(), Tensor<T>());
    if (arch_.kind == ArchKind::PlainCnn) {
      const Tensor<T>* x = &state.input;
      for (std::size_t l = 0; l < layers_.size(); ++l) {
        apply(l, *x, state.acts[l]);
        x = &state.acts[l];
      }
    } else {
      apply(0, state.input, state.acts[0]);
      apply(1, state.acts[0], state.acts[1]);
      apply(2, state.acts[1], state.acts[2]);
      Tensor<T> up;
      kernels::upsample2_forward(state.acts[2], up);
      state.concat = concat_channels(up, state.acts[0]);
      apply(3, state.concat, state.acts[3]);
      apply(4, state.acts[3], state.acts[4]);
    }
    return state.acts.back();
  }

  /// Accumulates parameter gradients; returns d/d input when requested.
  Tensor<T> backward(const StageState<T>& state, Tensor<T> grad_out, bool want_input_grad) const {
    if (arch_.kind == ArchKind::PlainCnn) {
      Tensor<T> g = std::move(grad_out);
      for (std::size_t l = layers_.size(); l-- > 0;) {
        const Tensor<T>& in = l == 0 ? state.input : state.acts[l - 1];
        g = back(l, in, state.acts[l], std::move(g), l > 0 || want_input_grad);
      }
      return g;
    }
    Tensor<T> g3 = back(4, state.acts[3], state.acts[4], std::move(grad_out), true);
    Tensor<T> gcat = back(3, state.concat, state.acts[3], std::move(g3), true);
    const int f = state.acts[2].channels();
    Tensor<T> gup(f, state.acts[0].dims());
    Tensor<T> g0(f, state.acts[0].dims());
    std::copy(gcat.data(), gcat.data() + gup.size(), gup.data());
    std::copy(gcat.data() + gup.size(), gcat.data() + gcat.size(), g0.data());
    Tensor<T> g2(f, state.acts[2].dims());
    kernels::upsample2_backward(gup, g2);
    Tensor<T> g1 = back(2, state.acts[1], state.acts[2], std::move(g2), true);
    Tensor<T> g0b = back(1, state.acts[0], state.acts[1], std::move(g1), true);
    for (std::size_t i = 0; i < g0.size(); ++i) g0.data()[i] += g0b.data()[i];
    return back(0, state.input, state.acts[0], std::move(g0), want_input_grad);
  }

 private:
  void apply(std::size_t l, const Tensor<T>& in, Tensor<T>& out) const {
    const auto& v = layers_[l];
    kernels::conv3d_forward(in, v.weights, v.bias, v.shape.out_channels, v.shape.stride, out);
    if (v.shape.activation) kernels::leaky_relu_forward(out, slope_);
  }

  Tensor<T> back(std::size_t l, const Tensor<T>& in, const Tensor<T>& out, Tensor<T> grad, bool want_input) const {
    const auto& v = layers_[l];
    if (v.shape.activation) kernels::leaky_relu_backward(out, slope_, grad);
    Tensor<T> grad_in;
    if (want_input) grad_in = Tensor<T>(in.channels(), in.dims());
    kernels::conv3d_backward(in, v.weights, v.shape.stride, grad, want_input ? &grad_in : nullptr,
                             v.grad_weights, v.grad_bias);
    return grad_in;
  }

  const ArchitectureSpec& arch_;
  T slope_;
  std::vector<LayerView<T>> layers_;
};

template <typename T>
double similarity_forward(const Tensor<T>& fixed, const Tensor<T>& moved, const LossConfig& cfg) {
  if (cfg.similarity == Similarity::Mse) return kernels::mse_forward<T>(fixed.values(), moved.values());
  return kernels::ncc_forward(fixed, moved, cfg.ncc_window);
}

template <typename T>
void similarity_backward(const Tensor<T>& fixed, const Tensor<T>& moved, const LossConfig& cfg,
                         Tensor<T>& grad_moved) {
  if (cfg.similarity == Similarity::Mse) {
    kernels::mse_backward<T>(fixed.values(), moved.values(), 1.0, grad_moved.values());
  } else {
    kernels::ncc_backward(fixed, moved, cfg.ncc_window, 1.0, grad_moved);
  }
}

}  // namespace

template <typename T>
NetworkEvaluation<T> evaluate_network(const ArchitectureSpec& arch, std::span<const T> blob,
                                      const Tensor<T>& moving, const Tensor<T>& fixed, const LossConfig* cfg,
                                      bool with_gradients) {
  arch.validate();
  check_inputs(arch, moving.dims(), fixed.dims());
  if (blob.size() != arch.parameter_count()) throw ShapeError("parameter blob does not match architecture");
  const bool backward = with_gradients && cfg != nullptr;
  const std::size_t per_stage = arch.stage_parameter_count();
  const int stages = arch.cascade_stages;

  NetworkEvaluation<T> result;
  if (backward) result.gradients.assign(blob.size(), T(0));

  std::vector<StageNetwork<T>> nets;
  for (int k = 0; k < stages; ++k) {
    std::span<T> grads = backward ? std::span<T>(result.gradients).subspan(k * per_stage, per_stage) : std::span<T>();
    nets.emplace_back(arch, blob.subspan(k * per_stage, per_stage), grads);
  }

  // composed[k] is the field entering stage k (composed[0] = 0, unused).
  std::vector<Tensor<T>> composed(stages + 1);
  std::vector<Tensor<T>> stage_fields(stages);
  std::vector<StageState<T>> states(stages);
  for (int k = 0; k < stages; ++k) {
    Tensor<T> warped;
    if (k == 0) {
      warped = moving;
    } else {
      kernels::warp_forward(moving, composed[k], warped);
    }
    stage_fields[k] = nets[k].forward(concat_channels(warped, fixed), states[k]);
    if (k == 0) {
      composed[1] = stage_fields[0];
    } else {
      kernels::compose_forward(composed[k], stage_fields[k], composed[k + 1]);
    }
  }
  result.field = composed[stages];
  if (cfg == nullptr) return result;

  Tensor<T> moved;
  kernels::warp_forward(moving, result.field, moved);
  result.similarity = similarity_forward(fixed, moved, *cfg);
  result.regularization = cfg->lambda > 0 ? kernels::smoothness_forward(result.field) : 0.0;
  result.loss = result.similarity + cfg->lambda * result.regularization;
  if (!backward || !std::isfinite(result.loss)) return result;

  Tensor<T> grad_moved(1, moving.dims());
  similarity_backward(fixed, moved, *cfg, grad_moved);
  Tensor<T> grad_field(3, moving.dims());
  kernels::warp_backward<T>(moving, result.field, grad_moved, nullptr, &grad_field);
  if (cfg->lambda > 0) kernels::smoothness_backward(result.field, cfg->lambda, grad_field);

  for (int k = stages - 1; k >= 0; --k) {
    Tensor<T> grad_prev;
    Tensor<T> grad_stage;
    if (k == 0) {
      grad_stage = std::move(grad_field);
    } else {
      grad_prev = Tensor<T>(3, moving.dims());
      grad_stage = Tensor<T>(3, moving.dims());
      kernels::compose_backward(composed[k], stage_fields[k], grad_field, &grad_prev, &grad_stage);
    }
    Tensor<T> grad_input = nets[k].backward(states[k], std::move(grad_stage), k > 0);
    if (k > 0) {
      Tensor<T> grad_warped(1, moving.dims());
      std::copy(grad_input.data(), grad_input.data() + grad_warped.size(), grad_warped.data());
      kernels::warp_backward<T>(moving, composed[k], grad_warped, nullptr, &grad_prev);
      grad_field = std::move(grad_prev);
    }
  }
  return result;
}

template NetworkEvaluation<float> evaluate_network<float>(const ArchitectureSpec&, std::span<const float>,
                                                          const Tensor<float>&, const Tensor<float>&,
                                                          const LossConfig*, bool);
template NetworkEvaluation<double> evaluate_network<double>(const ArchitectureSpec&, std::span<const double>,
                                                            const Tensor<double>&, const Tensor<double>&,
                                                            const LossConfig*, bool);

DisplacementField forward(const ModelParameters& params, const Volume& moving, const Volume& fixed) {
  check_inputs(params.arch, moving.dims(), fixed.dims());
  const auto eval = evaluate_network<float>(params.arch, params.blob, moving.to_tensor<float>(),
                                            fixed.to_tensor<float>(), nullptr, false);
  return DisplacementField::from_tensor(eval.field);
}

LossAndGradients loss_and_gradients(const ModelParameters& params, const Volume& moving, const Volume& fixed,
                                    const LossConfig& cfg) {
  cfg.validate();
  auto eval = evaluate_network<float>(params.arch, params.blob, moving.to_tensor<float>(),
                                      fixed.to_tensor<float>(), &cfg, true);
  if (!std::isfinite(eval.loss)) throw DivergenceError("loss is not finite");
  return {eval.loss, eval.similarity, eval.regularization, std::move(eval.gradients)};
}

double evaluate_loss(const ModelParameters& params, const Volume& moving, const Volume& fixed,
                     const LossConfig& cfg) {
  cfg.validate();
  const auto eval = evaluate_network<float>(params.arch, params.blob, moving.to_tensor<float>(),
                                            fixed.to_tensor<float>(), &cfg, false);
  if (!std::isfinite(eval.loss)) throw DivergenceError("loss is not finite");
  return eval.loss;
}

}  // namespace ttoreg
