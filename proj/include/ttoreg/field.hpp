#pragma once

#include <array>
#include <span>
#include <vector>

#include "ttoreg/grid.hpp"
#include "ttoreg/tensor.hpp"
#include "ttoreg/volume.hpp"

namespace ttoreg {

using Vec3 = std::array<float, 3>;

/// Per-voxel displacement in voxel units, stored interleaved (ux, uy, uz)
/// in the same voxel order as Volume.
class DisplacementField {
 public:
  DisplacementField() = default;
  /// Zero field.
  explicit DisplacementField(Dims dims);
  /// Throws ShapeError / FormatError on length mismatch or non-finite values.
  DisplacementField(Dims dims, std::vector<float> interleaved);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t voxels() const noexcept { return dims_.voxels(); }
  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  Vec3 at(int x, int y, int z) const noexcept {
    const std::size_t i = 3 * dims_.index(x, y, z);
    return {data_[i], data_[i + 1], data_[i + 2]};
  }
  void set(int x, int y, int z, Vec3 v) noexcept {
    const std::size_t i = 3 * dims_.index(x, y, z);
    data_[i] = v[0];
    data_[i + 1] = v[1];
    data_[i + 2] = v[2];
  }

  /// Largest displacement magnitude over all voxels.
  double max_magnitude() const noexcept;
  bool is_zero() const noexcept;

  template <typename T>
  Tensor<T> to_tensor() const {
    Tensor<T> t(3, dims_);
    const std::size_t n = voxels();
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) t.data()[c * n + i] = static_cast<T>(data_[3 * i + c]);
    }
    return t;
  }

  template <typename T>
  static DisplacementField from_tensor(const Tensor<T>& t) {
    const std::size_t n = t.voxels();
    std::vector<float> v(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) v[3 * i + c] = static_cast<float>(t.data()[c * n + i]);
    }
    return DisplacementField(t.dims(), std::move(v));
  }

  friend bool operator==(const DisplacementField&, const DisplacementField&) = default;

 private:
  Dims dims_{};
  std::vector<float> data_;
};

/// output(x) = trilinear sample of v at x + u(x), clamped to the volume.
Volume warp_volume(const Volume& v, const DisplacementField& u);

/// Warps the indicator trilinearly, then thresholds at 0.5 (ties set).
Mask warp_mask(const Mask& m, const DisplacementField& u);

/// Field whose warp equals warping by u1 then by u2:
/// u(x) = u2(x) + sample(u1, x + u2(x)).
DisplacementField compose(const DisplacementField& u1, const DisplacementField& u2);

/// Regularizer R(u): mean over components of the squared forward-difference
/// gradient norm. Zero exactly for constant fields.
double smoothness(const DisplacementField& u);

}  // namespace ttoreg
