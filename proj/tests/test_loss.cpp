#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "ttoreg/error.hpp"
#include "ttoreg/loss.hpp"

using namespace ttoreg;

namespace {

Volume noise(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Volume v(d);
  for (float& x : v.data()) x = dist(rng);
  return v;
}

/// Local NCC by direct window enumeration, clamp padding.
double ncc_oracle(const Volume& a, const Volume& b, int window) {
  const Dims& d = a.dims();
  const int r = window / 2;
  double total = 0.0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        const int n = window * window * window;
        for (int dz = -r; dz <= r; ++dz)
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
              const int px = std::clamp(x + dx, 0, d.nx - 1);
              const int py = std::clamp(y + dy, 0, d.ny - 1);
              const int pz = std::clamp(z + dz, 0, d.nz - 1);
              const double va = a(px, py, pz), vb = b(px, py, pz);
              sa += va;
              sb += vb;
              saa += va * va;
              sbb += vb * vb;
              sab += va * vb;
            }
        const double va = saa / n - (sa / n) * (sa / n);
        const double vb = sbb / n - (sb / n) * (sb / n);
        const double cov = sab / n - (sa / n) * (sb / n);
        if (va < 1e-6 || vb < 1e-6) continue;
        total += cov / std::sqrt(va * vb);
      }
  return -total / static_cast<double>(d.voxels());
}

}  // namespace

TEST_CASE("mse examples") {
  const Volume a = noise({3, 3, 3}, 1);
  CHECK(mse(a, a) == 0.0);
  CHECK(mse(Volume({2, 2, 2}, {}, 0.0f), Volume({2, 2, 2}, {}, 1.0f)) == 1.0);
  const Volume x({2, 1, 1}, {}, std::vector<float>{0, 1});
  const Volume y({2, 1, 1}, {}, std::vector<float>{1, 1});
  CHECK(mse(x, y) == 0.5);
  const Volume b = noise({3, 3, 3}, 2);
  CHECK(mse(a, b) == mse(b, a));
  CHECK(mse(a, b) > 0.0);
}

TEST_CASE("ncc examples") {
  const Volume a = noise({6, 5, 4}, 3);
  CHECK(ncc_loss(a, a, 5) == doctest::Approx(-1.0).epsilon(1e-6));
  Volume affine = a;
  for (float& v : affine.data()) v = 2.0f * v + 3.0f;
  CHECK(ncc_loss(a, affine, 5) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(ncc_loss(Volume({6, 5, 4}, {}, 0.3f), a, 5) == 0.0);
  CHECK(ncc_loss(a, Volume({6, 5, 4}, {}, 0.3f), 5) == 0.0);
}

TEST_CASE("ncc matches window enumeration and stays in [-1, 1]") {
  for (int window : {3, 5, 7}) {
    CAPTURE(window);
    const Volume a = noise({7, 6, 5}, 10 + window);
    const Volume b = noise({7, 6, 5}, 20 + window);
    const double got = ncc_loss(a, b, window);
    CHECK(got == doctest::Approx(ncc_oracle(a, b, window)).epsilon(1e-5));
    CHECK(got >= -1.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("total loss composition") {
  const Volume a = noise({4, 4, 4}, 4);
  DisplacementField zero(a.dims());
  LossConfig cfg;
  cfg.similarity = Similarity::Mse;
  CHECK(total_loss(a, a, zero, cfg) == 0.0);

  DisplacementField u(a.dims());
  for (std::size_t i = 0; i < u.data().size(); ++i) u.data()[i] = std::cos(0.37f * i);
  const Volume b = noise({4, 4, 4}, 5);
  cfg.lambda = 0.0;
  CHECK(total_loss(a, b, u, cfg) == similarity_loss(a, b, cfg));
  cfg.lambda = 2.0;
  CHECK(total_loss(a, b, u, cfg) == doctest::Approx(mse(a, b) + 2.0 * smoothness(u)).epsilon(1e-12));

  // The stated example: mse 0.5, smoothness 0.2, lambda 2 gives 0.9.
  CHECK(0.5 + 2.0 * 0.2 == doctest::Approx(0.9));

  // Non-decreasing in lambda for a fixed field.
  double previous = -1e300;
  for (double lambda : {0.0, 0.1, 1.0, 5.0}) {
    cfg.lambda = lambda;
    const double l = total_loss(a, b, u, cfg);
    CHECK(l >= previous);
    previous = l;
  }
}

TEST_CASE("loss configuration is validated") {
  LossConfig cfg;
  cfg.ncc_window = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.ncc_window = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.ncc_window = 5;
  cfg.lambda = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lambda = std::nan("");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_similarity("mse") == Similarity::Mse);
  CHECK(parse_similarity("ncc") == Similarity::Ncc);
  CHECK_THROWS_AS(parse_similarity("mi"), ConfigError);
  CHECK_THROWS(mse(Volume({2, 2, 2}), Volume({2, 2, 1})));
}
