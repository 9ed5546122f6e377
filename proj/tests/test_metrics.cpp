#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "ttoreg/error.hpp"
#include "ttoreg/metrics.hpp"

using namespace ttoreg;

namespace {

Mask from_points(Dims d, std::initializer_list<std::array<int, 3>> pts) {
  Mask m(d);
  for (const auto& p : pts) m.set(p[0], p[1], p[2], true);
  return m;
}

Mask box(Dims d, std::array<int, 3> lo, std::array<int, 3> hi) {
  Mask m(d);
  for (int z = lo[2]; z <= hi[2]; ++z)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int x = lo[0]; x <= hi[0]; ++x) m.set(x, y, z, true);
  return m;
}

}  // namespace

TEST_CASE("dsc examples") {
  const Dims d{4, 4, 4};
  const Mask x = box(d, {0, 0, 0}, {1, 1, 0});
  CHECK(dsc(x, x) == 1.0);
  CHECK(dsc(x, box(d, {2, 2, 2}, {3, 3, 3})) == 0.0);
  // |X| = |Y| = 4, |X ∩ Y| = 2.
  const Mask y = box(d, {1, 0, 0}, {2, 1, 0});
  CHECK(dsc(x, y) == 0.5);
  CHECK_FALSE(dsc(Mask(d), Mask(d)).has_value());
  CHECK(dsc(Mask(d), x) == 0.0);
}

TEST_CASE("hd95 examples") {
  const Dims d{6, 6, 2};
  const Mask x = from_points(d, {{0, 0, 0}});
  const Mask y = from_points(d, {{3, 4, 0}});
  CHECK(hd95(x, y, {}) == 5.0);
  CHECK(hd95(x, x, {}) == 0.0);
  CHECK_FALSE(hd95(Mask(d), x, {}).has_value());
  CHECK_FALSE(hd95(x, Mask(d), {}).has_value());
}

TEST_CASE("boundary uses 6-connectivity and the volume border") {
  const Dims d{5, 5, 5};
  // A 3x3x3 cube in the interior: all but the centre voxel are boundary.
  CHECK(boundary_voxels(box(d, {1, 1, 1}, {3, 3, 3})).size() == 26);
  // The full volume: only the border shell counts.
  CHECK(boundary_voxels(box(d, {0, 0, 0}, {4, 4, 4})).size() == 125 - 27);
}

TEST_CASE("nearest-rank percentile") {
  CHECK(nearest_rank_percentile({5.0}, 0.95) == 5.0);
  std::vector<double> v;
  for (int i = 1; i <= 20; ++i) v.push_back(21 - i);
  CHECK(nearest_rank_percentile(v, 0.95) == 19.0);  // ceil(19.0) = 19th smallest
  CHECK(nearest_rank_percentile(v, 1.0) == 20.0);
  v.push_back(100.0);
  CHECK(nearest_rank_percentile(v, 0.95) == 20.0);  // ceil(19.95) = 20th of 21
}

TEST_CASE("dsc and hd95 equal brute-force enumeration on 50 random pairs") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> fill(0.05, 0.6);
  const Spacing spacings[] = {{1, 1, 1}, {0.7, 1.3, 2.5}};
  for (int trial = 0; trial < 50; ++trial) {
    CAPTURE(trial);
    const Mask x = oracle::random_mask({8, 8, 8}, fill(rng), rng);
    const Mask y = oracle::random_mask({8, 8, 8}, fill(rng), rng);
    CHECK(*dsc(x, y) == oracle::brute_dsc(x, y));
    for (const Spacing& s : spacings) {
      const double got = *hd95(x, y, s);
      CHECK(std::abs(got - oracle::brute_hd95(x, y, s)) < 1e-6);
    }
    CHECK(*dsc(x, x) == 1.0);
    CHECK(*hd95(x, x, spacings[1]) == 0.0);
  }
}

TEST_CASE("directed distances match the brute-force oracle pointwise") {
  std::mt19937_64 rng(7);
  const Spacing s{1.5, 0.5, 2.0};
  for (int trial = 0; trial < 10; ++trial) {
    const Mask x = oracle::random_mask({7, 6, 5}, 0.1, rng);
    const Mask y = oracle::random_mask({7, 6, 5}, 0.3, rng);
    const auto got = directed_boundary_distances(x, y, s);
    const auto want = oracle::brute_directed(oracle::brute_boundary(x), oracle::brute_boundary(y), s);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-9);
  }
}

TEST_CASE("hd95 scales linearly with isotropic spacing") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Mask x = oracle::random_mask({8, 8, 8}, 0.2, rng);
    const Mask y = oracle::random_mask({8, 8, 8}, 0.2, rng);
    const double base = *hd95(x, y, {1, 1, 1});
    for (double k : {0.5, 2.0, 3.7}) CHECK(*hd95(x, y, {k, k, k}) == doctest::Approx(k * base).epsilon(1e-12));
  }
}

TEST_CASE("hd95 is symmetric and bounded by the Hausdorff distance") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Mask x = oracle::random_mask({8, 8, 8}, 0.15, rng);
    const Mask y = oracle::random_mask({8, 8, 8}, 0.25, rng);
    CHECK(*hd95(x, y, {}) == *hd95(y, x, {}));
    CHECK(*hd95(x, y, {}) <= oracle::brute_hausdorff(x, y, {}) + 1e-12);
  }
}

TEST_CASE("score_structures") {
  const Dims d{6, 6, 6};
  StructureSet truth(d, {}), pred(d, {});
  truth.add("a", box(d, {0, 0, 0}, {2, 2, 2}));
  truth.add("b", box(d, {3, 3, 3}, {5, 5, 5}));
  pred.add("a", box(d, {1, 0, 0}, {3, 2, 2}));
  pred.add("b", Mask(d));

  const auto scores = score_structures(pred, truth);
  REQUIRE(scores.size() == 2);
  CHECK(scores[0].name == "a");
  // 27 voxels each, overlap 2x3x3 = 18.
  CHECK(*scores[0].dsc == doctest::Approx(2.0 * 18 / 54));
  CHECK(*scores[0].hd95 == doctest::Approx(oracle::brute_hd95(pred[0].mask, truth[0].mask, {})));
  CHECK(scores[0].flags().empty());
  CHECK(*scores[1].dsc == 0.0);
  CHECK_FALSE(scores[1].hd95.has_value());
  CHECK(scores[1].flags() == "hd95_undefined");

  const auto same = score_structures(truth, truth);
  for (const auto& s : same) {
    CHECK(*s.dsc == 1.0);
    CHECK(*s.hd95 == 0.0);
  }

  const auto summary = summarize(scores);
  CHECK(summary.dsc.count == 2);
  CHECK(summary.hd95.count == 1);
  CHECK(summary.hd95.excluded == 1);
  CHECK(summary.dsc.mean == doctest::Approx((2.0 * 18 / 54) / 2));

  StructureSet renamed(d, {});
  renamed.add("a", truth[0].mask);
  renamed.add("c", truth[1].mask);
  CHECK_THROWS_AS(score_structures(renamed, truth), ConfigError);

  const std::vector<std::optional<double>> none{std::nullopt};
  CHECK(std::isnan(mean_defined(none).mean));
}
