#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttoreg/volume.hpp"

namespace ttoreg {

/// 2|X∩Y| / (|X|+|Y|); nullopt when both masks are empty.
std::optional<double> dsc(const Mask& x, const Mask& y);

/// Set voxels with at least one unset face neighbour; voxels on the volume
/// border always qualify.
std::vector<std::array<int, 3>> boundary_voxels(const Mask& m);

/// Distance (mm) from every boundary voxel of `from` to the nearest boundary
/// voxel of `to`, in boundary_voxels order. Empty if either mask is empty.
std::vector<double> directed_boundary_distances(const Mask& from, const Mask& to, const Spacing& spacing);

/// Nearest-rank percentile: the ceil(q * n)-th smallest value, q in (0, 1].
double nearest_rank_percentile(std::vector<double> values, double q);

/// max(p95(X->Y), p95(Y->X)) over boundary distances in mm; nullopt when
/// either mask is empty.
std::optional<double> hd95(const Mask& x, const Mask& y, const Spacing& spacing);

struct StructureScore {
  std::string name;
  std::optional<double> dsc;
  std::optional<double> hd95;

  /// "" or a ';'-joined list of dsc_undefined / hd95_undefined.
  std::string flags() const;
};

/// Per-structure scores in truth order. Throws ConfigError unless both
/// sets carry the same names.
std::vector<StructureScore> score_structures(const StructureSet& predicted, const StructureSet& truth);

struct MeanWithExclusions {
  double mean = 0.0;  // NaN when count == 0
  int count = 0;
  int excluded = 0;
};

MeanWithExclusions mean_defined(std::span<const std::optional<double>> values);

struct ScoreSummary {
  MeanWithExclusions dsc;
  MeanWithExclusions hd95;
};

ScoreSummary summarize(std::span<const StructureScore> scores);

}  // namespace ttoreg
