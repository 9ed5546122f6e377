#include "ttoreg/loss.hpp"

#include <cmath>

#include "ttoreg/error.hpp"
#include "ttoreg/kernels.hpp"

namespace ttoreg {

void LossConfig::validate() const {
  if (ncc_window < 3 || ncc_window % 2 == 0) {
    throw ConfigError("ncc_window must be odd and >= 3, got " + std::to_string(ncc_window));
  }
  if (!std::isfinite(lambda) || lambda < 0) throw ConfigError("lambda must be finite and >= 0");
}

namespace {

void require_same_dims(const Dims& a, const Dims& b) {
  if (!(a == b)) throw ShapeError("loss inputs differ in dims: " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

double mse(const Volume& a, const Volume& b) {
  require_same_dims(a.dims(), b.dims());
  return kernels::mse_forward<float>(a.data(), b.data());
}

double ncc_loss(const Volume& a, const Volume& b, int window) {
  require_same_dims(a.dims(), b.dims());
  if (window < 1 || window % 2 == 0) throw ConfigError("ncc window must be odd");
  return kernels::ncc_forward(a.to_tensor<float>(), b.to_tensor<float>(), window);
}

double similarity_loss(const Volume& fixed, const Volume& moved, const LossConfig& cfg) {
  return cfg.similarity == Similarity::Mse ? mse(fixed, moved) : ncc_loss(fixed, moved, cfg.ncc_window);
}

double total_loss(const Volume& fixed, const Volume& moved, const DisplacementField& u, const LossConfig& cfg) {
  require_same_dims(fixed.dims(), u.dims());
  const double sim = similarity_loss(fixed, moved, cfg);
  if (cfg.lambda == 0.0) return sim;
  return sim + cfg.lambda * smoothness(u);
}

const char* to_string(Similarity s) noexcept { return s == Similarity::Mse ? "mse" : "ncc"; }

Similarity parse_similarity(const std::string& text) {
  if (text == "ncc") return Similarity::Ncc;
  if (text == "mse") return Similarity::Mse;
  throw ConfigError("unknown similarity '" + text + "' (expected ncc or mse)");
}

}  // namespace ttoreg
