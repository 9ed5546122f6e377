#pragma once

#include <array>
#include <cstddef>
#include <string>

namespace ttoreg {

/// Voxel counts along x, y, z. Linear index is x + nx * (y + ny * z).
struct Dims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  constexpr std::size_t voxels() const noexcept {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  constexpr std::size_t index(int x, int y, int z) const noexcept {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(nx) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * static_cast<std::size_t>(z));
  }
  constexpr int operator[](int axis) const noexcept { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
  constexpr bool positive() const noexcept { return nx > 0 && ny > 0 && nz > 0; }

  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

/// Millimetres per voxel.
struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;

  constexpr double operator[](int axis) const noexcept { return axis == 0 ? sx : (axis == 1 ? sy : sz); }

  friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

std::string to_string(const Dims& d);

}  // namespace ttoreg
