#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "ttoreg/error.hpp"
#include "ttoreg/synthetic.hpp"
#include "ttoreg/tto.hpp"

using namespace ttoreg;

namespace {

CohortSpec tiny_spec() {
  CohortSpec spec;
  spec.dims = {16, 16, 16};
  spec.n_train = 2;
  spec.n_test = 2;
  spec.n_structures = 2;
  spec.n_fractions = 2;
  spec.ood_fraction = 0.5;
  spec.seed = 3;
  return spec;
}

ModelParameters population_like(std::uint64_t seed) {
  ModelParameters p = init_params(ArchitectureSpec::encoder_decoder(), seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-0.01f, 0.01f);
  for (float& w : p.blob) w += dist(rng);
  p.provenance = Provenance::Population;
  return p;
}

TtoSettings quick_settings() {
  TtoSettings s;
  s.rule = {0.005, 10, 200};
  s.adam.learning_rate = 1e-3;
  return s;
}

}  // namespace

TEST_CASE("learning rate 0 leaves the model unchanged and stops after patience no-decrease steps") {
  const Subject sub = generate_subject(tiny_spec(), 2);
  const auto pop = population_like(1);
  TtoSettings s = quick_settings();
  s.adam.learning_rate = 0.0;
  const TTORun run = tto_run(TtoStart::from(pop), sub.planning, sub.fractions[0].image, s, TtoMode::Inter);
  CHECK(run.status == RunStatus::Converged);
  CHECK(run.iterations == s.rule.patience + 1);  // the start evaluation plus `patience` unchanged steps
  CHECK(run.loss_trace.size() == static_cast<std::size_t>(run.iterations));
  for (double l : run.loss_trace) CHECK(l == run.loss_trace.front());
  CHECK(run.result.blob == pop.blob);
  CHECK(run.best_iteration == 0);
}

TEST_CASE("identical pair with a zero-field start stays at the optimum") {
  const Subject sub = generate_subject(tiny_spec(), 0);
  ModelParameters pop = init_params(ArchitectureSpec::encoder_decoder(), 4);
  pop.provenance = Provenance::Population;
  TtoSettings s = quick_settings();
  s.loss.similarity = Similarity::Mse;
  const TTORun run = tto_run(TtoStart::from(pop), sub.planning, sub.planning, s, TtoMode::Inter);
  CHECK(run.status == RunStatus::Converged);
  CHECK(run.final_field.is_zero());
  CHECK(run.best_loss() == 0.0);
  CHECK(run.iterations == s.rule.patience + 1);
}

TEST_CASE("inter run bookkeeping") {
  const CohortSpec spec = tiny_spec();
  const Subject sub = generate_subject(spec, 3);
  REQUIRE(sub.ood);
  const auto pop = population_like(2);
  const auto copy = pop;
  const TtoSettings s = quick_settings();
  const TTORun run = tto_run(TtoStart::from(pop), sub.planning, sub.fractions[0].image, s, TtoMode::Inter);

  CHECK(pop == copy);
  CHECK(run.start_provenance == Provenance::Population);
  CHECK(run.result.provenance == Provenance::Individualized);
  CHECK(run.loss_trace.front() == doctest::Approx(evaluate_loss(pop, sub.planning, sub.fractions[0].image, s.loss)).epsilon(1e-12));
  CHECK(run.best_loss() <= run.initial_loss());
  CHECK(run.best_loss() < run.initial_loss());  // an OOD subject leaves room to improve
  CHECK(evaluate_loss(run.result, sub.planning, sub.fractions[0].image, s.loss) ==
        doctest::Approx(run.best_loss()).epsilon(1e-12));
  CHECK(run.final_field == forward(run.result, sub.planning, sub.fractions[0].image));

  const auto best = run.best_trace();
  REQUIRE(best.size() == run.loss_trace.size());
  for (std::size_t i = 0; i < best.size(); ++i) {
    CHECK(best[i] <= run.loss_trace[i]);
    if (i > 0) CHECK(best[i] <= best[i - 1]);
  }
  CHECK(best.back() == run.best_loss());
  CHECK(run.wall_trace_ms.size() == run.loss_trace.size());
  CHECK(std::is_sorted(run.wall_trace_ms.begin(), run.wall_trace_ms.end()));

  const TTORun again = tto_run(TtoStart::from(pop), sub.planning, sub.fractions[0].image, s, TtoMode::Inter);
  CHECK(again.loss_trace == run.loss_trace);
  CHECK(again.result == run.result);
}

TEST_CASE("scratch starts fresh and is seed-deterministic") {
  const Subject sub = generate_subject(tiny_spec(), 2);
  TtoSettings s = quick_settings();
  s.rule.max_iters = 30;
  const auto start = TtoStart::fresh(ArchitectureSpec::encoder_decoder(), 11);
  const TTORun a = tto_run(start, sub.planning, sub.fractions[0].image, s, TtoMode::Scratch);
  const TTORun b = tto_run(start, sub.planning, sub.fractions[0].image, s, TtoMode::Scratch);
  CHECK(a.start_provenance == Provenance::None);
  CHECK(a.result.provenance == Provenance::Individualized);
  CHECK(a.loss_trace == b.loss_trace);
  // Fresh models predict the zero field, so the first loss is the unregistered one.
  LossConfig cfg = s.loss;
  CHECK(a.loss_trace.front() == doctest::Approx(similarity_loss(sub.fractions[0].image, sub.planning, cfg)).epsilon(1e-9));
  if (a.status == RunStatus::Capped) CHECK(a.iterations == 30);
}

TEST_CASE("mode and start provenance must agree") {
  const Subject sub = generate_subject(tiny_spec(), 2);
  const Volume& m = sub.planning;
  const Volume& f = sub.fractions[0].image;
  const auto s = quick_settings();
  const auto pop = population_like(3);
  auto indiv = pop;
  indiv.provenance = Provenance::Individualized;
  CHECK_THROWS_AS(tto_run(TtoStart::from(pop), m, f, s, TtoMode::Scratch), ConfigError);
  CHECK_THROWS_AS(tto_run(TtoStart::fresh(pop.arch, 1), m, f, s, TtoMode::Inter), ConfigError);
  CHECK_THROWS_AS(tto_run(TtoStart::from(indiv), m, f, s, TtoMode::Inter), ConfigError);
  CHECK_THROWS_AS(tto_run(TtoStart::from(pop), m, f, s, TtoMode::Intra), ConfigError);
  const TTORun intra = tto_run(TtoStart::from(indiv), m, f, s, TtoMode::Intra);
  CHECK(intra.start_provenance == Provenance::Individualized);
  CHECK(intra.result.provenance == Provenance::Fractional);
  CHECK_THROWS_AS(tto_run(TtoStart::from(pop), m, Volume({16, 16, 8}), s, TtoMode::Inter), ShapeError);
}

TEST_CASE("divergence ends the run with a status instead of an exception") {
  const Subject sub = generate_subject(tiny_spec(), 2);
  auto pop = population_like(5);
  for (float& w : pop.blob) w = 1e30f;
  TtoSettings s = quick_settings();
  s.loss.similarity = Similarity::Mse;
  const TTORun run = tto_run(TtoStart::from(pop), sub.planning, sub.fractions[0].image, s, TtoMode::Inter);
  CHECK(run.status == RunStatus::Diverged);
  CHECK_FALSE(run.error.empty());
  CHECK(run.iterations == static_cast<int>(run.loss_trace.size()));
  CHECK(run.final_field.is_zero());
}

TEST_CASE("fraction sequence") {
  const CohortSpec spec = tiny_spec();
  const Subject sub = generate_subject(spec, 2);
  const auto pop = population_like(6);
  const auto s = quick_settings();

  const std::vector<ImagePair> one{{sub.planning, sub.fractions[0].image}};
  const auto single = run_fraction_sequence(pop, one, s);
  REQUIRE(single.size() == 1);
  const TTORun direct = tto_run(TtoStart::from(pop), sub.planning, sub.fractions[0].image, s, TtoMode::Inter);
  CHECK(single[0].loss_trace == direct.loss_trace);
  CHECK(single[0].result == direct.result);

  // Same pair twice: fraction 2 starts where fraction 1 ended up.
  const std::vector<ImagePair> twice{one[0], one[0]};
  const auto chain = run_fraction_sequence(pop, twice, s);
  REQUIRE(chain.size() == 2);
  CHECK(chain[1].mode == TtoMode::Intra);
  CHECK(chain[1].start_provenance == Provenance::Individualized);
  CHECK(chain[1].initial_loss() == doctest::Approx(chain[0].best_loss()).epsilon(1e-12));
  CHECK(chain[1].iterations <= s.rule.patience + 1 + 5);
}

TEST_CASE("run directories round-trip") {
  const auto dir = oracle::scratch_dir("tto_run");
  const Subject sub = generate_subject(tiny_spec(), 2);
  TtoSettings s = quick_settings();
  s.rule.max_iters = 15;
  const TTORun run = tto_run(TtoStart::from(population_like(7)), sub.planning, sub.fractions[0].image, s, TtoMode::Inter);
  write_run(run, dir / "r", "s002", 1);
  const TTORun back = read_run(dir / "r");
  CHECK(back.mode == run.mode);
  CHECK(back.status == run.status);
  CHECK(back.iterations == run.iterations);
  CHECK(back.loss_trace == run.loss_trace);
  CHECK(back.best_iteration == run.best_iteration);
  CHECK(back.result == run.result);
  CHECK(back.final_field == run.final_field);

  std::ifstream csv(dir / "r" / "trace.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "iteration,loss,wall_ms");
  CHECK(parse_tto_mode("intra") == TtoMode::Intra);
  CHECK(parse_run_status("capped") == RunStatus::Capped);
  CHECK_THROWS_AS(parse_tto_mode("warm"), ConfigError);
}
