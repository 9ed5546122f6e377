#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ttoreg/field.hpp"
#include "ttoreg/volume.hpp"

namespace ttoreg {

/// Knobs of a synthetic cohort. Subjects [0, n_train) form the training
/// split, the next n_test the test split; the last
/// round(ood_fraction * n_test) test subjects are out-of-distribution and
/// get their deformation amplitude multiplied by ood_scale.
struct CohortSpec {
  Dims dims{32, 32, 32};
  Spacing spacing{1.0, 1.0, 1.0};
  int n_train = 40;
  int n_test = 8;
  int n_structures = 4;
  int n_fractions = 2;
  double deformation_amplitude = 3.0;  // voxels, max |u|
  double smoothness_sigma = 4.0;       // voxels
  double drift_amplitude = 1.0;        // voxels, between consecutive fractions
  double noise_sigma = 0.02;           // additive, after normalization
  double ood_fraction = 0.25;
  double ood_scale = 2.0;
  std::uint64_t seed = 42;

  void validate() const;

  int n_subjects() const noexcept { return n_train + n_test; }
  int n_ood() const noexcept;
  bool is_test(int subject) const noexcept { return subject >= n_train; }
  bool is_ood(int subject) const noexcept;
  /// Amplitude of the subject's first-fraction field.
  double subject_amplitude(int subject) const noexcept;

  friend bool operator==(const CohortSpec&, const CohortSpec&) = default;
};

struct Phantom {
  Volume image;
  StructureSet structures;
  Mask body;
};

/// Body ellipsoid with soft-edged ellipsoidal organs of distinct
/// intensities and mild interior texture, normalized to [0, 1]. Organ masks
/// are the r <= 1 supports; organs keep a one-voxel gap from each other and
/// lie inside the body. Throws ConfigError when the organs cannot be placed.
Phantom generate_phantom(const CohortSpec& spec, int subject);

/// Smoothed white noise, windowed to zero on the volume border and scaled so
/// that max |u| equals `amplitude` (a zero amplitude gives the zero field).
DisplacementField smooth_random_field(Dims dims, double sigma, double amplitude, std::uint64_t seed);

/// fraction 1: the subject's deformation G_1 (OOD subjects amplified).
/// fraction k >= 2: the drift applied on top of G_{k-1}.
DisplacementField generate_smooth_field(const CohortSpec& spec, int subject, int fraction);

struct Fraction {
  Volume image;                  // warp(planning, truth_field) + noise
  DisplacementField truth_field;
  StructureSet truth_structures;  // warp_mask of the planning masks
};

struct Subject {
  int index = 0;
  std::string id;
  bool test = false;
  bool ood = false;
  Volume planning;
  StructureSet structures;
  std::vector<Fraction> fractions;
};

Subject generate_subject(const CohortSpec& spec, int subject);

struct Cohort {
  CohortSpec spec;
  std::vector<Subject> subjects;

  std::vector<const Subject*> split(bool test) const;
};

/// Subjects are independent; `workers` > 1 generates them concurrently
/// with identical results.
Cohort generate_cohort(const CohortSpec& spec, int workers = 1);

std::string subject_id(int subject);

/// Writes into a sibling temporary directory and renames it into place, so
/// a failure leaves no partial tree. Refuses to overwrite an existing path.
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);
Cohort read_cohort(const std::filesystem::path& dir);

}  // namespace ttoreg
