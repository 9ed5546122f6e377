#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ttoreg/field.hpp"
#include "ttoreg/loss.hpp"
#include "ttoreg/tensor.hpp"
#include "ttoreg/volume.hpp"

namespace ttoreg {

enum class ArchKind { PlainCnn, EncoderDecoder };

/// One 3x3x3 convolution. Hidden layers are followed by LeakyReLU; the
/// final (field-producing) layer is linear.
struct ConvShape {
  int in_channels;
  int out_channels;
  int stride;
  bool activation;

  std::size_t weight_count() const noexcept {
    return static_cast<std::size_t>(in_channels) * static_cast<std::size_t>(out_channels) * 27;
  }
  std::size_t parameter_count() const noexcept { return weight_count() + static_cast<std::size_t>(out_channels); }
};

/// Network family, width and cascade depth.
///
/// plain-cnn: `conv_layers` convolutions, all `filters` wide except the
/// final 3-channel layer, no resampling. The canonical network is 9 hidden
/// layers of 16 filters plus the output layer.
///
/// encoder-decoder: two resolution levels. A full-resolution block, a
/// stride-2 block and a half-resolution block, then trilinear x2
/// upsampling, concatenation with the full-resolution features, one
/// fusing block and the output layer.
struct ArchitectureSpec {
  ArchKind kind = ArchKind::PlainCnn;
  int conv_layers = 10;  // plain-cnn only
  int filters = 16;
  double leaky_slope = 0.2;
  int cascade_stages = 1;

  static ArchitectureSpec plain_cnn(int cascade_stages = 1);
  static ArchitectureSpec encoder_decoder(int cascade_stages = 1);

  /// Layers of one cascade stage, in parameter-blob order.
  std::vector<ConvShape> stage_layers() const;
  std::size_t stage_parameter_count() const;
  std::size_t parameter_count() const;
  /// Every volume dimension must be a multiple of this.
  int size_multiple() const noexcept { return kind == ArchKind::EncoderDecoder ? 2 : 1; }

  /// Short descriptor, e.g. "plain-cnn" or "encoder-decoder x3".
  std::string label() const;

  void validate() const;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

const char* to_string(ArchKind kind) noexcept;
ArchKind parse_arch_kind(const std::string& text);

/// Where a parameter set came from along the population -> individualized
/// -> fractional chain. `None` marks a fresh initialization.
enum class Provenance { None, Population, Individualized, Fractional };

const char* to_string(Provenance p) noexcept;
Provenance parse_provenance(const std::string& text);

/// Flat parameter blob. Per stage, per layer: weights [out][in][kz][ky][kx]
/// then biases [out]; layers ascending, stages ascending.
struct ModelParameters {
  ArchitectureSpec arch;
  std::vector<float> blob;
  std::uint64_t seed = 0;
  Provenance provenance = Provenance::None;

  /// Throws FormatError if the blob length disagrees with arch or holds
  /// non-finite values.
  void validate() const;

  friend bool operator==(const ModelParameters&, const ModelParameters&) = default;
};

/// Deterministic in `seed`. Hidden weights ~ U[-a, a], a = sqrt(1 / fan_in),
/// hidden biases zero; the final layer of every stage is all zeros, so a
/// fresh model predicts the zero field.
ModelParameters init_params(const ArchitectureSpec& arch, std::uint64_t seed);

/// Predicted displacement field for the (moving, fixed) pair. Cascades
/// register the progressively warped moving image and compose the stage
/// fields.
DisplacementField forward(const ModelParameters& params, const Volume& moving, const Volume& fixed);

struct LossAndGradients {
  double loss = 0.0;
  double similarity = 0.0;
  double regularization = 0.0;
  std::vector<float> gradients;
};

/// Loss of the pair under the model and its exact gradient with respect to
/// every parameter. Throws DivergenceError if the loss is not finite.
LossAndGradients loss_and_gradients(const ModelParameters& params, const Volume& moving, const Volume& fixed,
                                    const LossConfig& cfg);

/// Loss only (no backward pass).
double evaluate_loss(const ModelParameters& params, const Volume& moving, const Volume& fixed,
                     const LossConfig& cfg);

// -- precision-generic engine ----------------------------------------------

template <typename T>
struct NetworkEvaluation {
  double loss = 0.0;
  double similarity = 0.0;
  double regularization = 0.0;
  Tensor<T> field;           // 3 channels
  std::vector<T> gradients;  // empty unless requested
};

/// Shared implementation behind forward / loss_and_gradients, instantiated
/// for float and double. With `cfg == nullptr` only the field is computed.
template <typename T>
NetworkEvaluation<T> evaluate_network(const ArchitectureSpec& arch, std::span<const T> blob,
                                      const Tensor<T>& moving, const Tensor<T>& fixed, const LossConfig* cfg,
                                      bool with_gradients);

/// Throws ShapeError when the pair cannot be fed to the architecture.
void check_inputs(const ArchitectureSpec& arch, const Dims& moving, const Dims& fixed);

}  // namespace ttoreg
