#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ttoreg/grid.hpp"
#include "ttoreg/tensor.hpp"

namespace ttoreg {

/// A 3D scalar image. Intensities are float32 and must be finite.
class Volume {
 public:
  Volume() = default;
  explicit Volume(Dims dims, Spacing spacing = {}, float fill = 0.0f);
  /// Throws ShapeError when data does not hold dims.voxels() values, or
  /// FormatError on non-finite values or non-positive spacing.
  Volume(Dims dims, Spacing spacing, std::vector<float> data);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::size_t voxels() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  float operator()(int x, int y, int z) const noexcept { return data_[dims_.index(x, y, z)]; }
  float& operator()(int x, int y, int z) noexcept { return data_[dims_.index(x, y, z)]; }

  template <typename T>
  Tensor<T> to_tensor() const {
    Tensor<T> t(1, dims_);
    for (std::size_t i = 0; i < data_.size(); ++i) t.data()[i] = static_cast<T>(data_[i]);
    return t;
  }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<float> data_;
};

/// Binary mask with values in {0, 1}.
class Mask {
 public:
  Mask() = default;
  explicit Mask(Dims dims, Spacing spacing = {});
  /// Throws FormatError if any value is outside {0, 1}.
  Mask(Dims dims, Spacing spacing, std::vector<std::uint8_t> data);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::size_t voxels() const noexcept { return data_.size(); }
  std::size_t count() const noexcept;
  bool none() const noexcept { return count() == 0; }

  std::span<const std::uint8_t> data() const noexcept { return data_; }

  bool operator()(int x, int y, int z) const noexcept { return data_[dims_.index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool on) noexcept { data_[dims_.index(x, y, z)] = on ? 1 : 0; }
  void set(std::size_t i, bool on) noexcept { data_[i] = on ? 1 : 0; }
  bool at(std::size_t i) const noexcept { return data_[i] != 0; }

  /// Indicator as a float volume (0.0 / 1.0).
  Volume to_volume() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<std::uint8_t> data_;
};

struct Structure {
  std::string name;
  Mask mask;

  friend bool operator==(const Structure&, const Structure&) = default;
};

/// Ordered named masks sharing the geometry of one reference volume.
class StructureSet {
 public:
  StructureSet() = default;
  StructureSet(Dims dims, Spacing spacing) : dims_(dims), spacing_(spacing) {}

  /// Throws ShapeError on geometry mismatch, ConfigError on a duplicate name.
  void add(std::string name, Mask mask);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::size_t size() const noexcept { return structures_.size(); }
  bool empty() const noexcept { return structures_.empty(); }
  const std::vector<Structure>& structures() const noexcept { return structures_; }
  const Structure& operator[](std::size_t i) const { return structures_[i]; }
  /// nullptr when absent.
  const Mask* find(const std::string& name) const;

  friend bool operator==(const StructureSet&, const StructureSet&) = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<Structure> structures_;
};

/// (x - min) / (max - min); a constant volume maps to zeros.
Volume normalize_intensity(const Volume& v);

struct CropWindow {
  std::array<int, 3> origin{0, 0, 0};
  Dims dims{};
};

/// Block-mean downsampling by integer factors, then crop. Spacing is
/// multiplied by the factor. Throws ShapeError if the crop window leaves
/// the downsampled extent.
Volume resample(const Volume& v, std::array<int, 3> factor, const CropWindow& crop);

}  // namespace ttoreg
