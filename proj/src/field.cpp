#include "ttoreg/field.hpp"

#include <cmath>

#include "ttoreg/error.hpp"
#include "ttoreg/kernels.hpp"

namespace ttoreg {

DisplacementField::DisplacementField(Dims dims) : dims_(dims), data_(3 * dims.voxels(), 0.0f) {
  if (!dims.positive()) throw ShapeError("field dims must be positive, got " + to_string(dims));
}

DisplacementField::DisplacementField(Dims dims, std::vector<float> interleaved)
    : dims_(dims), data_(std::move(interleaved)) {
  if (!dims.positive()) throw ShapeError("field dims must be positive, got " + to_string(dims));
  if (data_.size() != 3 * dims.voxels()) {
    throw ShapeError("field payload holds " + std::to_string(data_.size()) + " components, dims " +
                     to_string(dims) + " need " + std::to_string(3 * dims.voxels()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) throw FormatError("non-finite displacement at component " + std::to_string(i));
  }
}

double DisplacementField::max_magnitude() const noexcept {
  double best = 0.0;
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    const double m = std::sqrt(static_cast<double>(data_[i]) * data_[i] +
                               static_cast<double>(data_[i + 1]) * data_[i + 1] +
                               static_cast<double>(data_[i + 2]) * data_[i + 2]);
    best = std::max(best, m);
  }
  return best;
}

bool DisplacementField::is_zero() const noexcept {
  for (float v : data_) {
    if (v != 0.0f) return false;
  }
  return true;
}

namespace {

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": dims " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

Volume warp_volume(const Volume& v, const DisplacementField& u) {
  require_same_dims(v.dims(), u.dims(), "warp_volume");
  const Tensor<float> src = v.to_tensor<float>();
  Tensor<float> out;
  kernels::warp_forward(src, u.to_tensor<float>(), out);
  return Volume(v.dims(), v.spacing(), std::vector<float>(out.values().begin(), out.values().end()));
}

Mask warp_mask(const Mask& m, const DisplacementField& u) {
  require_same_dims(m.dims(), u.dims(), "warp_mask");
  const Volume warped = warp_volume(m.to_volume(), u);
  Mask out(m.dims(), m.spacing());
  const auto values = warped.data();
  for (std::size_t i = 0; i < values.size(); ++i) out.set(i, values[i] >= 0.5f);
  return out;
}

DisplacementField compose(const DisplacementField& u1, const DisplacementField& u2) {
  require_same_dims(u1.dims(), u2.dims(), "compose");
  Tensor<float> out;
  kernels::compose_forward(u1.to_tensor<float>(), u2.to_tensor<float>(), out);
  return DisplacementField::from_tensor(out);
}

double smoothness(const DisplacementField& u) { return kernels::smoothness_forward(u.to_tensor<float>()); }

}  // namespace ttoreg
