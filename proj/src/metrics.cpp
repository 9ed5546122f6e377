#include "ttoreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ttoreg/error.hpp"

namespace ttoreg {

namespace {

void require_same_dims(const Mask& x, const Mask& y) {
  if (!(x.dims() == y.dims())) throw ShapeError("mask dims differ: " + to_string(x.dims()) + " vs " + to_string(y.dims()));
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Exact 1D squared distance transform (lower envelope of parabolas) along
// a strided line of samples spaced `step` apart into a contiguous `out`.
// Infinite samples are skipped.
void distance_transform_1d(const double* f, double* out, int n, std::ptrdiff_t stride, double step,
                           std::vector<int>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == kInf) continue;
    const double pq = q * step;
    while (k >= 0) {
      const double pv = v[k] * step;
      const double s = ((fq + pq * pq) - (f[v[k] * stride] + pv * pv)) / (2.0 * (pq - pv));
      if (s <= z[k]) {
        --k;
      } else {
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
    }
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) out[q] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    const double pq = q * step;
    while (z[j + 1] < pq) ++j;
    const double d = static_cast<double>(q - v[j]) * step;  // exactly 0 at a seed
    out[q] = d * d + f[v[j] * stride];
  }
}

// Squared Euclidean distance (mm^2) from every voxel to the nearest seed.
std::vector<double> squared_distance_map(const Dims& d, const std::vector<std::array<int, 3>>& seeds,
                                         const Spacing& spacing) {
  std::vector<double> f(d.voxels(), kInf);
  for (const auto& p : seeds) f[d.index(p[0], p[1], p[2])] = 0.0;
  std::vector<double> line;
  std::vector<int> v;
  std::vector<double> z;
  const std::array<std::ptrdiff_t, 3> stride{1, d.nx, static_cast<std::ptrdiff_t>(d.nx) * d.ny};
  for (int axis = 0; axis < 3; ++axis) {
    const int n = d[axis];
    line.resize(n);
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (int j = 0; j < d[a2]; ++j) {
      for (int i = 0; i < d[a1]; ++i) {
        double* base = f.data() + i * stride[a1] + j * stride[a2];
        distance_transform_1d(base, line.data(), n, stride[axis], spacing[axis], v, z);
        for (int q = 0; q < n; ++q) base[q * stride[axis]] = line[q];
      }
    }
  }
  return f;
}

}  // namespace

std::optional<double> dsc(const Mask& x, const Mask& y) {
  require_same_dims(x, y);
  std::size_t nx = 0, ny = 0, both = 0;
  for (std::size_t i = 0; i < x.voxels(); ++i) {
    const bool a = x.at(i), b = y.at(i);
    nx += a;
    ny += b;
    both += a && b;
  }
  if (nx + ny == 0) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(nx + ny);
}

std::vector<std::array<int, 3>> boundary_voxels(const Mask& m) {
  const Dims& d = m.dims();
  std::vector<std::array<int, 3>> out;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (!m(x, y, z)) continue;
        const bool edge = x == 0 || y == 0 || z == 0 || x == d.nx - 1 || y == d.ny - 1 || z == d.nz - 1;
        if (edge || !m(x - 1, y, z) || !m(x + 1, y, z) || !m(x, y - 1, z) || !m(x, y + 1, z) ||
            !m(x, y, z - 1) || !m(x, y, z + 1)) {
          out.push_back({x, y, z});
        }
      }
  return out;
}

std::vector<double> directed_boundary_distances(const Mask& from, const Mask& to, const Spacing& spacing) {
  require_same_dims(from, to);
  const auto src = boundary_voxels(from);
  const auto dst = boundary_voxels(to);
  if (src.empty() || dst.empty()) return {};
  const std::vector<double> d2 = squared_distance_map(to.dims(), dst, spacing);
  std::vector<double> out;
  out.reserve(src.size());
  for (const auto& p : src) out.push_back(std::sqrt(d2[to.dims().index(p[0], p[1], p[2])]));
  return out;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("percentile of an empty set");
  if (!(q > 0 && q <= 1)) throw ConfigError("percentile must lie in (0, 1]");
  std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

std::optional<double> hd95(const Mask& x, const Mask& y, const Spacing& spacing) {
  require_same_dims(x, y);
  if (x.none() || y.none()) return std::nullopt;
  const double xy = nearest_rank_percentile(directed_boundary_distances(x, y, spacing), 0.95);
  const double yx = nearest_rank_percentile(directed_boundary_distances(y, x, spacing), 0.95);
  return std::max(xy, yx);
}

std::string StructureScore::flags() const {
  std::string f;
  if (!dsc) f = "dsc_undefined";
  if (!hd95) f += f.empty() ? "hd95_undefined" : ";hd95_undefined";
  return f;
}

std::vector<StructureScore> score_structures(const StructureSet& predicted, const StructureSet& truth) {
  if (predicted.size() != truth.size()) throw ConfigError("structure sets differ in size");
  std::vector<StructureScore> out;
  for (const Structure& t : truth.structures()) {
    const Mask* p = predicted.find(t.name);
    if (p == nullptr) throw ConfigError("predicted set lacks structure '" + t.name + "'");
    out.push_back({t.name, dsc(*p, t.mask), hd95(*p, t.mask, truth.spacing())});
  }
  return out;
}

MeanWithExclusions mean_defined(std::span<const std::optional<double>> values) {
  MeanWithExclusions m;
  double sum = 0.0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++m.count;
    } else {
      ++m.excluded;
    }
  }
  m.mean = m.count > 0 ? sum / m.count : std::numeric_limits<double>::quiet_NaN();
  return m;
}

ScoreSummary summarize(std::span<const StructureScore> scores) {
  std::vector<std::optional<double>> d, h;
  for (const auto& s : scores) {
    d.push_back(s.dsc);
    h.push_back(s.hd95);
  }
  return {mean_defined(d), mean_defined(h)};
}

}  // namespace ttoreg
