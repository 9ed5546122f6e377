#include "ttoreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ttoreg/error.hpp"

namespace ttoreg {

std::string to_string(const Dims& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

namespace {

void check_geometry(Dims dims, Spacing spacing) {
  if (!dims.positive()) throw ShapeError("dims must be positive, got " + to_string(dims));
  if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0) || !std::isfinite(spacing.sx) ||
      !std::isfinite(spacing.sy) || !std::isfinite(spacing.sz)) {
    throw FormatError("spacing must be finite and positive");
  }
}

}  // namespace

Volume::Volume(Dims dims, Spacing spacing, float fill)
    : dims_(dims), spacing_(spacing), data_(dims.voxels(), fill) {
  check_geometry(dims, spacing);
  if (!std::isfinite(fill)) throw FormatError("volume fill value is not finite");
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_geometry(dims, spacing);
  if (data_.size() != dims.voxels()) {
    throw ShapeError("volume payload holds " + std::to_string(data_.size()) + " values, dims " +
                     to_string(dims) + " need " + std::to_string(dims.voxels()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) throw FormatError("non-finite intensity at index " + std::to_string(i));
  }
}

Mask::Mask(Dims dims, Spacing spacing) : dims_(dims), spacing_(spacing), data_(dims.voxels(), 0) {
  check_geometry(dims, spacing);
}

Mask::Mask(Dims dims, Spacing spacing, std::vector<std::uint8_t> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_geometry(dims, spacing);
  if (data_.size() != dims.voxels()) {
    throw ShapeError("mask payload holds " + std::to_string(data_.size()) + " values, dims " +
                     to_string(dims) + " need " + std::to_string(dims.voxels()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (data_[i] > 1) throw FormatError("mask value outside {0,1} at index " + std::to_string(i));
  }
}

std::size_t Mask::count() const noexcept {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

Volume Mask::to_volume() const {
  std::vector<float> values(data_.size());
  std::transform(data_.begin(), data_.end(), values.begin(), [](std::uint8_t b) { return b ? 1.0f : 0.0f; });
  return Volume(dims_, spacing_, std::move(values));
}

void StructureSet::add(std::string name, Mask mask) {
  if (structures_.empty() && dims_ == Dims{}) {
    dims_ = mask.dims();
    spacing_ = mask.spacing();
  }
  if (!(mask.dims() == dims_) || !(mask.spacing() == spacing_)) {
    throw ShapeError("structure '" + name + "' geometry differs from its reference volume");
  }
  if (find(name) != nullptr) throw ConfigError("duplicate structure name '" + name + "'");
  structures_.push_back({std::move(name), std::move(mask)});
}

const Mask* StructureSet::find(const std::string& name) const {
  for (const auto& s : structures_) {
    if (s.name == name) return &s.mask;
  }
  return nullptr;
}

Volume normalize_intensity(const Volume& v) {
  const auto data = v.data();
  const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
  std::vector<float> out(data.size(), 0.0f);
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (range > 0) {
    const double lo_d = *lo;
    for (std::size_t i = 0; i < data.size(); ++i) {
      out[i] = static_cast<float>((static_cast<double>(data[i]) - lo_d) / range);
    }
  }
  return Volume(v.dims(), v.spacing(), std::move(out));
}

Volume resample(const Volume& v, std::array<int, 3> factor, const CropWindow& crop) {
  for (int f : factor) {
    if (f < 1) throw ConfigError("resample factor must be a positive integer");
  }
  const Dims& in = v.dims();
  const Dims down{in.nx / factor[0], in.ny / factor[1], in.nz / factor[2]};
  for (int a = 0; a < 3; ++a) {
    if (crop.origin[a] < 0 || crop.dims[a] < 1 || crop.origin[a] + crop.dims[a] > down[a]) {
      throw ShapeError("crop window exceeds downsampled extent " + to_string(down));
    }
  }
  const double block = static_cast<double>(factor[0]) * factor[1] * factor[2];
  std::vector<float> out(crop.dims.voxels());
  for (int z = 0; z < crop.dims.nz; ++z) {
    for (int y = 0; y < crop.dims.ny; ++y) {
      for (int x = 0; x < crop.dims.nx; ++x) {
        const int bx = (x + crop.origin[0]) * factor[0];
        const int by = (y + crop.origin[1]) * factor[1];
        const int bz = (z + crop.origin[2]) * factor[2];
        double sum = 0.0;
        for (int k = 0; k < factor[2]; ++k)
          for (int j = 0; j < factor[1]; ++j)
            for (int i = 0; i < factor[0]; ++i) sum += v(bx + i, by + j, bz + k);
        out[crop.dims.index(x, y, z)] = static_cast<float>(sum / block);
      }
    }
  }
  const Spacing& s = v.spacing();
  return Volume(crop.dims, {s.sx * factor[0], s.sy * factor[1], s.sz * factor[2]}, std::move(out));
}

}  // namespace ttoreg
