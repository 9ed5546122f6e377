#include "ttoreg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ttoreg/config.hpp"
#include "ttoreg/error.hpp"
#include "ttoreg/io.hpp"
#include "ttoreg/parallel.hpp"

namespace ttoreg {

namespace {

enum StreamTag : std::uint32_t { PhantomStream = 1, FieldStream = 2, NoiseStream = 3 };

std::mt19937_64 make_rng(std::uint64_t seed, int subject, StreamTag tag, int fraction = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(subject), static_cast<std::uint32_t>(tag),
                    static_cast<std::uint32_t>(fraction)};
  return std::mt19937_64(seq);
}

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;

  double radius(int x, int y, int z) const {
    const double dx = (x - center[0]) / radii[0];
    const double dy = (y - center[1]) / radii[1];
    const double dz = (z - center[2]) / radii[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }
};

// 1 inside r < 0.85, 0 beyond r > 1.15, linear in between.
double soft_edge(double r) { return std::clamp((1.15 - r) / 0.3, 0.0, 1.0); }

template <typename Fn>
void for_each_voxel(const Dims& d, Fn&& fn) {
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) fn(x, y, z, d.index(x, y, z));
}

// Separable Gaussian blur of one planar channel, clamp-to-edge.
void gaussian_blur(std::vector<double>& data, const Dims& d, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) total += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  for (double& k : kernel) k /= total;

  std::vector<double> tmp(data.size());
  for (int axis = 0; axis < 3; ++axis) {
    const int n = d[axis];
    for_each_voxel(d, [&](int x, int y, int z, std::size_t i) {
      std::array<int, 3> p{x, y, z};
      const int centre = p[axis];
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        p[axis] = std::clamp(centre + k, 0, n - 1);
        acc += kernel[k + radius] * data[d.index(p[0], p[1], p[2])];
      }
      tmp[i] = acc;
    });
    data.swap(tmp);
  }
}

}  // namespace

void CohortSpec::validate() const {
  if (!dims.positive() || dims.nx < 4 || dims.ny < 4 || dims.nz < 4) {
    throw ConfigError("synthetic dims must be >= 4 per axis, got " + to_string(dims));
  }
  for (int a = 0; a < 3; ++a) {
    if (!(spacing[a] > 0) || !std::isfinite(spacing[a])) throw ConfigError("spacing must be finite and > 0");
  }
  if (n_train < 0 || n_test < 0 || n_train + n_test < 1) throw ConfigError("cohort needs at least one subject");
  if (n_structures < 0) throw ConfigError("n_structures must be >= 0");
  if (n_fractions < 1) throw ConfigError("n_fractions must be >= 1");
  if (!(deformation_amplitude >= 0) || !(drift_amplitude >= 0) || !(noise_sigma >= 0)) {
    throw ConfigError("amplitudes and noise must be >= 0");
  }
  if (!(smoothness_sigma > 0)) throw ConfigError("smoothness_sigma must be > 0");
  if (!(ood_fraction >= 0 && ood_fraction <= 1)) throw ConfigError("ood_fraction must lie in [0, 1]");
  if (!(ood_scale > 0)) throw ConfigError("ood_scale must be > 0");
}

int CohortSpec::n_ood() const noexcept { return static_cast<int>(std::lround(ood_fraction * n_test)); }

bool CohortSpec::is_ood(int subject) const noexcept {
  return is_test(subject) && subject >= n_train + n_test - n_ood() && subject < n_subjects();
}

double CohortSpec::subject_amplitude(int subject) const noexcept {
  return is_ood(subject) ? deformation_amplitude * ood_scale : deformation_amplitude;
}

Phantom generate_phantom(const CohortSpec& spec, int subject) {
  spec.validate();
  const Dims d = spec.dims;
  auto rng = make_rng(spec.seed, subject, PhantomStream);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Ellipsoid body{};
  for (int a = 0; a < 3; ++a) {
    body.center[a] = 0.5 * (d[a] - 1) + uniform(-0.04, 0.04) * d[a];
    body.radii[a] = uniform(0.36, 0.44) * d[a];
  }

  std::vector<double> image(d.voxels(), 0.0);
  Mask body_mask(d, spec.spacing);
  std::array<double, 3> freq{}, phase{};
  for (int a = 0; a < 3; ++a) {
    freq[a] = 2.0 * std::numbers::pi * uniform(1.0, 2.5) / d[a];
    phase[a] = uniform(0.0, 2.0 * std::numbers::pi);
  }
  for_each_voxel(d, [&](int x, int y, int z, std::size_t i) {
    const double r = body.radius(x, y, z);
    const double texture = 0.05 * std::sin(freq[0] * x + phase[0]) * std::sin(freq[1] * y + phase[1]) *
                           std::sin(freq[2] * z + phase[2]);
    image[i] = (0.3 + texture) * soft_edge(r);
    if (r <= 1.0) body_mask.set(i, true);
  });

  // Organ placement: supports sit well inside the body and keep a one-voxel
  // gap from each other. A dead end restarts the whole layout.
  std::vector<double> levels(spec.n_structures);
  for (int k = 0; k < spec.n_structures; ++k) {
    levels[k] = 0.55 + 0.45 * (k + 0.5) / std::max(1, spec.n_structures);
  }
  std::shuffle(levels.begin(), levels.end(), rng);

  constexpr int kLayouts = 50;
  constexpr int kAttempts = 200;
  std::vector<Ellipsoid> organs;
  std::vector<Mask> supports;
  for (int layout = 0; layout < kLayouts && static_cast<int>(organs.size()) < spec.n_structures; ++layout) {
    organs.clear();
    supports.clear();
    std::vector<std::uint8_t> occupied(d.voxels(), 0);
    for (int k = 0; k < spec.n_structures; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
        Ellipsoid organ{};
        for (int a = 0; a < 3; ++a) {
          organ.radii[a] = std::max(1.5, uniform(0.08, 0.15) * d[a]);
          organ.center[a] = body.center[a] + uniform(-0.55, 0.55) * body.radii[a];
        }
        Mask support(d, spec.spacing);
        bool ok = true;
        for_each_voxel(d, [&](int x, int y, int z, std::size_t i) {
          if (!ok || organ.radius(x, y, z) > 1.0) return;
          if (occupied[i] || body.radius(x, y, z) > 0.9) ok = false;
          support.set(i, true);
        });
        if (!ok || support.count() < 8) continue;
        for_each_voxel(d, [&](int x, int y, int z, std::size_t) {
          if (!support(x, y, z)) return;
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int px = x + dx, py = y + dy, pz = z + dz;
                if (px < 0 || py < 0 || pz < 0 || px >= d.nx || py >= d.ny || pz >= d.nz) continue;
                occupied[d.index(px, py, pz)] = 1;
              }
        });
        organs.push_back(organ);
        supports.push_back(std::move(support));
        placed = true;
      }
      if (!placed) break;
    }
  }
  if (static_cast<int>(organs.size()) < spec.n_structures) {
    throw ConfigError("cannot place " + std::to_string(spec.n_structures) + " non-overlapping structures in " +
                      to_string(d) + " (subject " + std::to_string(subject) + ")");
  }

  StructureSet structures(d, spec.spacing);
  for (int k = 0; k < spec.n_structures; ++k) {
    for_each_voxel(d, [&](int x, int y, int z, std::size_t i) {
      const double w = soft_edge(organs[k].radius(x, y, z));
      if (w > 0.0) image[i] = (1.0 - w) * image[i] + w * levels[k];
    });
    char name[32];
    std::snprintf(name, sizeof name, "organ_%02d", k + 1);
    structures.add(name, std::move(supports[k]));
  }

  if (spec.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (std::size_t i = 0; i < image.size(); ++i) {
      if (!body_mask.at(i)) image[i] += noise(rng);
    }
  }

  std::vector<float> data(image.begin(), image.end());
  return Phantom{normalize_intensity(Volume(d, spec.spacing, std::move(data))), std::move(structures),
                 std::move(body_mask)};
}

DisplacementField smooth_random_field(Dims dims, double sigma, double amplitude, std::uint64_t seed) {
  if (!dims.positive()) throw ShapeError("field dims must be positive");
  if (!(sigma > 0)) throw ConfigError("sigma must be > 0");
  DisplacementField u(dims);
  if (amplitude == 0.0) return u;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = dims.voxels();
  std::array<std::vector<double>, 3> comp;
  for (auto& c : comp) {
    c.resize(n);
    for (double& v : c) v = normal(rng);
  }
  for (auto& c : comp) gaussian_blur(c, dims, sigma);

  auto window = [](int i, int len) {
    return len > 1 ? std::sin(std::numbers::pi * i / (len - 1)) : 0.0;
  };
  double max_mag = 0.0;
  for_each_voxel(dims, [&](int x, int y, int z, std::size_t i) {
    const double w = window(x, dims.nx) * window(y, dims.ny) * window(z, dims.nz);
    double m2 = 0.0;
    for (auto& c : comp) {
      c[i] *= w;
      m2 += c[i] * c[i];
    }
    max_mag = std::max(max_mag, std::sqrt(m2));
  });
  if (max_mag == 0.0) return u;
  const double scale = amplitude / max_mag;
  auto out = u.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) out[3 * i + c] = static_cast<float>(comp[c][i] * scale);
  }
  return u;
}

DisplacementField generate_smooth_field(const CohortSpec& spec, int subject, int fraction) {
  spec.validate();
  if (fraction < 1) throw ConfigError("fraction index starts at 1");
  const double amplitude = fraction == 1 ? spec.subject_amplitude(subject) : spec.drift_amplitude;
  auto rng = make_rng(spec.seed, subject, FieldStream, fraction);
  return smooth_random_field(spec.dims, spec.smoothness_sigma, amplitude, rng());
}

std::string subject_id(int subject) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%03d", subject);
  return buf;
}

Subject generate_subject(const CohortSpec& spec, int subject) {
  Phantom phantom = generate_phantom(spec, subject);
  Subject s;
  s.index = subject;
  s.id = subject_id(subject);
  s.test = spec.is_test(subject);
  s.ood = spec.is_ood(subject);
  s.planning = std::move(phantom.image);
  s.structures = std::move(phantom.structures);

  DisplacementField g;
  for (int k = 1; k <= spec.n_fractions; ++k) {
    DisplacementField step = generate_smooth_field(spec, subject, k);
    g = k == 1 ? std::move(step) : compose(g, step);
    Fraction f;
    f.image = warp_volume(s.planning, g);
    if (spec.noise_sigma > 0) {
      auto rng = make_rng(spec.seed, subject, NoiseStream, k);
      std::normal_distribution<double> noise(0.0, spec.noise_sigma);
      for (float& v : f.image.data()) v = static_cast<float>(v + noise(rng));
    }
    f.truth_structures = StructureSet(spec.dims, spec.spacing);
    for (const Structure& st : s.structures.structures()) f.truth_structures.add(st.name, warp_mask(st.mask, g));
    f.truth_field = g;
    s.fractions.push_back(std::move(f));
  }
  return s;
}

std::vector<const Subject*> Cohort::split(bool test) const {
  std::vector<const Subject*> out;
  for (const Subject& s : subjects) {
    if (s.test == test) out.push_back(&s);
  }
  return out;
}

Cohort generate_cohort(const CohortSpec& spec, int workers) {
  spec.validate();
  Cohort c;
  c.spec = spec;
  c.subjects.resize(static_cast<std::size_t>(spec.n_subjects()));
  parallel_for(c.subjects.size(), workers,
               [&](std::size_t i) { c.subjects[i] = generate_subject(spec, static_cast<int>(i)); });
  return c;
}

namespace {

std::string fraction_dir(int k) { return "fraction_" + std::to_string(k); }

void write_cohort_tree(const Cohort& cohort, const fs::path& root) {
  Json subjects = Json::array();
  for (const Subject& s : cohort.subjects) {
    const fs::path dir = root / s.id;
    fs::create_directories(dir);
    save_volume(s.planning, dir / "planning");
    save_structure_set(s.structures, dir / "structures");
    for (std::size_t k = 0; k < s.fractions.size(); ++k) {
      const fs::path fdir = dir / fraction_dir(static_cast<int>(k) + 1);
      fs::create_directories(fdir);
      save_volume(s.fractions[k].image, fdir / "image");
      save_field(s.fractions[k].truth_field, fdir / "truth_field");
      save_structure_set(s.fractions[k].truth_structures, fdir / "structures");
    }
    subjects.push_back(Json{{"id", s.id},
                            {"index", s.index},
                            {"split", s.test ? "test" : "train"},
                            {"ood", s.ood},
                            {"fractions", s.fractions.size()}});
  }
  write_json_file(Json{{"format", "ttoreg-cohort-1"}, {"spec", cohort.spec}, {"subjects", subjects}},
                  root / "cohort.json");
}

}  // namespace

void write_cohort(const Cohort& cohort, const fs::path& dir) {
  std::error_code ec;
  if (fs::exists(dir, ec)) throw IoError("refusing to overwrite existing " + dir.string());
  const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create " + parent.string() + ": " + ec.message());
  const fs::path tmp = parent / (dir.filename().string() + ".partial");
  fs::remove_all(tmp, ec);
  try {
    fs::create_directory(tmp);
    write_cohort_tree(cohort, tmp);
    fs::rename(tmp, dir);
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(tmp, ec);
    throw IoError(std::string("cohort write failed: ") + e.what());
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
}

Cohort read_cohort(const fs::path& dir) {
  const fs::path index = dir / "cohort.json";
  const Json j = read_json_file(index);
  if (!j.contains("spec") || !j.contains("subjects") || !j.at("subjects").is_array()) {
    throw FormatError(index.string() + ": expected spec and subjects");
  }
  Cohort c;
  from_json(j.at("spec"), c.spec);
  for (const Json& entry : j.at("subjects")) {
    Subject s;
    try {
      s.id = entry.at("id").get<std::string>();
      s.index = entry.at("index").get<int>();
      s.test = entry.at("split").get<std::string>() == "test";
      s.ood = entry.at("ood").get<bool>();
      const int fractions = entry.at("fractions").get<int>();
      const fs::path sdir = dir / s.id;
      s.planning = load_volume(sdir / "planning");
      s.structures = load_structure_set(sdir / "structures");
      for (int k = 1; k <= fractions; ++k) {
        const fs::path fdir = sdir / fraction_dir(k);
        s.fractions.push_back(Fraction{load_volume(fdir / "image"), load_field(fdir / "truth_field"),
                                       load_structure_set(fdir / "structures")});
      }
    } catch (const Json::exception& e) {
      throw FormatError(index.string() + ": bad subject entry: " + e.what());
    }
    c.subjects.push_back(std::move(s));
  }
  return c;
}

}  // namespace ttoreg
