#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "ttoreg/grid.hpp"

namespace ttoreg {

/// Planar multi-channel 3D array, channel-major then x-fastest.
/// Used by the differentiable kernels; the public Volume and
/// DisplacementField types convert to and from it.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, Dims dims, T fill = T(0))
      : channels_(channels), dims_(dims), data_(static_cast<std::size_t>(channels) * dims.voxels(), fill) {}

  int channels() const noexcept { return channels_; }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t voxels() const noexcept { return dims_.voxels(); }
  std::size_t size() const noexcept { return data_.size(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  std::span<T> channel(int c) noexcept { return {data_.data() + c * voxels(), voxels()}; }
  std::span<const T> channel(int c) const noexcept { return {data_.data() + c * voxels(), voxels()}; }

  T& operator()(int c, int x, int y, int z) noexcept { return data_[c * voxels() + dims_.index(x, y, z)]; }
  const T& operator()(int c, int x, int y, int z) const noexcept {
    return data_[c * voxels() + dims_.index(x, y, z)];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Tensor& other) const noexcept {
    return channels_ == other.channels_ && dims_ == other.dims_;
  }

 private:
  int channels_ = 0;
  Dims dims_{};
  std::vector<T> data_;
};

}  // namespace ttoreg
