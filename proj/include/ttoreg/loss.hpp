#pragma once

#include "ttoreg/field.hpp"
#include "ttoreg/volume.hpp"

namespace ttoreg {

enum class Similarity { Ncc, Mse };

/// Composite objective: similarity(fixed, moved) + lambda * smoothness(u).
struct LossConfig {
  Similarity similarity = Similarity::Ncc;
  int ncc_window = 5;
  double lambda = 1.0;

  /// Throws ConfigError unless the window is odd and >= 3 and lambda is
  /// finite and non-negative.
  void validate() const;
};

/// Mean squared voxelwise difference.
double mse(const Volume& a, const Volume& b);

/// Negative mean local normalized cross-correlation, in [-1, 1].
double ncc_loss(const Volume& a, const Volume& b, int window);

/// The similarity term alone, as configured.
double similarity_loss(const Volume& fixed, const Volume& moved, const LossConfig& cfg);

double total_loss(const Volume& fixed, const Volume& moved, const DisplacementField& u, const LossConfig& cfg);

const char* to_string(Similarity s) noexcept;
Similarity parse_similarity(const std::string& text);

}  // namespace ttoreg
