#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "ttoreg/benchmark.hpp"
#include "ttoreg/commands.hpp"
#include "ttoreg/config.hpp"
#include "ttoreg/error.hpp"
#include "ttoreg/io.hpp"

using namespace ttoreg;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.synth.dims = {16, 16, 16};
  cfg.synth.n_train = 2;
  cfg.synth.n_test = 2;
  cfg.synth.n_structures = 2;
  cfg.synth.n_fractions = 2;
  cfg.synth.ood_fraction = 0.5;
  cfg.synth.seed = 5;
  cfg.arch = ArchitectureSpec::encoder_decoder();
  cfg.scratch_rule = {0.005, 5, 25};
  cfg.warm_rule = {0.005, 5, 20};
  cfg.adam.learning_rate = 1e-3;
  cfg.epochs = 1;
  return cfg;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("run config JSON: defaults, round-trip and rejection of unknown keys") {
  const RunConfig defaults = Json::object().get<RunConfig>();
  CHECK(defaults.synth == CohortSpec{});
  CHECK(defaults.scratch_rule.max_iters == 2000);
  CHECK(defaults.warm_rule.max_iters == 500);
  CHECK(defaults.adam.learning_rate == 2e-4);
  CHECK(defaults.loss.similarity == Similarity::Ncc);

  const RunConfig cfg = tiny_config();
  const RunConfig back = Json(cfg).get<RunConfig>();
  CHECK(back.synth == cfg.synth);
  CHECK(back.arch == cfg.arch);
  CHECK(back.warm_rule.max_iters == 20);
  CHECK(back.adam == cfg.adam);

  CHECK_THROWS_AS(Json::parse(R"({"epochz": 3})").get<RunConfig>(), ConfigError);
  CHECK_THROWS_AS(Json::parse(R"({"synth": {"dims": [16, 16]}})").get<RunConfig>(), ConfigError);
  CHECK_THROWS_AS(Json::parse(R"({"epochs": "ten"})").get<RunConfig>(), ConfigError);
  CHECK_THROWS_AS(Json::parse(R"({"loss": {"ncc_window": 4}})").get<RunConfig>(), ConfigError);
  CHECK_THROWS_AS(Json::parse(R"({"convergence": {"warm": {}}})").get<RunConfig>(), ConfigError);

  // Switching the family picks that family's defaults.
  const auto ed = Json::parse(R"({"kind": "encoder-decoder", "cascade_stages": 3})").get<ArchitectureSpec>();
  CHECK(ed == ArchitectureSpec::encoder_decoder(3));
}

TEST_CASE("config files") {
  const auto dir = oracle::scratch_dir("cfg_files");
  write_json_file(Json(tiny_config()), dir / "c.json");
  CHECK(load_run_config(dir / "c.json").synth == tiny_config().synth);
  CHECK_FALSE(fs::exists(dir / "c.json.tmp"));
  std::ofstream(dir / "broken.json") << "{ nope";
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), FormatError);
  CHECK_THROWS_AS(load_run_config(dir / "absent.json"), IoError);
}

TEST_CASE("benchmark config JSON") {
  const auto b = Json::parse(R"({"base": {"epochs": 2},
                                 "architectures": [{"kind": "plain-cnn"}, {"kind": "encoder-decoder"}],
                                 "efficiency_architecture": 1})").get<BenchmarkConfig>();
  CHECK(b.architectures.size() == 2);
  CHECK(b.efficiency_architecture == 1);
  CHECK(b.base.epochs == 2);
  CHECK_THROWS_AS(Json::parse(R"({"architectures": [], "efficiency_architecture": 0})").get<BenchmarkConfig>(),
                  ConfigError);
  CHECK_THROWS_AS(Json::parse(R"({"architectures": [{"kind": "plain-cnn"}], "efficiency_architecture": 1})")
                      .get<BenchmarkConfig>(),
                  ConfigError);
  CHECK(b.run_config(0).epochs == 2);
  CHECK(b.run_config(1).arch.kind == ArchKind::EncoderDecoder);

  const auto per_arch = Json::parse(R"({"base": {"epochs": 2},
                                        "architectures": [{"kind": "plain-cnn"}, {"kind": "encoder-decoder"}],
                                        "epochs": [5, 7]})").get<BenchmarkConfig>();
  CHECK(per_arch.run_config(0).epochs == 5);
  CHECK(per_arch.run_config(1).epochs == 7);
  CHECK(Json(per_arch).get<BenchmarkConfig>().epochs == per_arch.epochs);
  CHECK_THROWS_AS(Json::parse(R"({"architectures": [{"kind": "plain-cnn"}], "epochs": [1, 2]})").get<BenchmarkConfig>(),
                  ConfigError);
  CHECK_THROWS_AS(Json::parse(R"({"architectures": [{"kind": "plain-cnn"}], "epochs": [-1]})").get<BenchmarkConfig>(),
                  ConfigError);
  CHECK_THROWS_AS(Json::parse(R"({"architectures": [{"kind": "plain-cnn"}], "epochs": 3})").get<BenchmarkConfig>(),
                  ConfigError);
  CHECK(architecture_dir(ArchitectureSpec::encoder_decoder(3)) == "encoder-decoder_x3");
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("histogram counts") {
  const Histogram h = make_histogram({0.0, 1.0, 2.0, 3.0, 4.0, 10.0}, 5);
  REQUIRE(h.counts.size() == 5);
  CHECK(h.lo == 0.0);
  CHECK(h.hi == 10.0);
  CHECK(h.counts == std::vector<int>{2, 2, 1, 0, 1});  // width 2, max in the last bin
  int total = 0;
  for (int c : h.counts) total += c;
  CHECK(total == 6);
  const Histogram flat = make_histogram({2.0, 2.0, 2.0}, 4);
  int flat_total = 0;
  for (int c : flat.counts) flat_total += c;
  CHECK(flat_total == 3);
  CHECK(make_histogram({}, 3).counts == std::vector<int>{0, 0, 0});
}

TEST_CASE("command pipeline: synth, train, tto, eval, report") {
  const auto dir = oracle::scratch_dir("pipeline");
  const RunConfig cfg = tiny_config();

  const Cohort cohort = cmd_synth(cfg, dir / "cohort");
  CHECK(fs::exists(dir / "cohort" / "cohort.json"));
  CHECK(cohort.subjects.size() == 4);
  CHECK_THROWS_AS(cmd_synth(cfg, dir / "cohort"), IoError);

  RunConfig zero = cfg;
  zero.epochs = 0;
  const TrainOutcome untrained = cmd_train(zero, cohort, dir / "train0");
  CHECK(load_checkpoint(untrained.checkpoint).blob == init_params(cfg.arch, cfg.seed).blob);

  const TrainOutcome trained = cmd_train(cfg, cohort, dir / "train");
  CHECK(lines(dir / "train" / "epochs.csv").size() == 2);
  const ModelParameters pop = load_checkpoint(trained.checkpoint);
  CHECK(pop.provenance == Provenance::Population);

  RunConfig more = cfg;
  more.epochs = 2;
  const TrainOutcome resumed = cmd_train(more, cohort, dir / "train", true);
  const TrainOutcome straight = cmd_train(more, cohort, dir / "train2");
  CHECK(load_checkpoint(resumed.checkpoint) == load_checkpoint(straight.checkpoint));

  const auto inter = cmd_tto(cfg, cohort, TtoMode::Inter, trained.checkpoint, dir / "inter");
  REQUIRE(inter.size() == 2);
  for (const auto& row : inter) {
    CHECK(row.mode == "inter");
    CHECK(row.fraction == 1);
    CHECK(row.status != "failed");
    CHECK(row.best_loss <= row.initial_loss);
  }
  CHECK(inter[1].ood);
  const auto summary = read_run_summary(dir / "inter" / "summary.csv");
  REQUIRE(summary.size() == 2);
  CHECK(summary[0].subject == inter[0].subject);
  CHECK(summary[0].iterations == inter[0].iterations);

  const auto intra = cmd_tto(cfg, cohort, TtoMode::Intra, dir / "inter", dir / "intra");
  REQUIRE(intra.size() == 2);
  CHECK(intra[0].fraction == 2);
  CHECK(intra[0].mode == "intra");

  const auto scratch = cmd_tto(cfg, cohort, TtoMode::Scratch, {}, dir / "scratch");
  CHECK(scratch.size() == 2);

  // A start checkpoint of the wrong architecture is rejected up front.
  save_checkpoint(init_params(ArchitectureSpec::plain_cnn(), 1), dir / "wrong");
  CHECK_THROWS_AS(cmd_tto(cfg, cohort, TtoMode::Inter, dir / "wrong", dir / "inter_wrong"), ConfigError);

  EvalOptions eo;
  eo.runs = dir / "inter";
  eo.baseline_checkpoint = trained.checkpoint;
  const auto evals = cmd_eval(eo, cohort, dir / "eval");
  REQUIRE(evals.size() == 2);
  CHECK(evals[0].scores.size() == 2);
  CHECK(evals[0].baseline.size() == 2);
  for (const char* f : {"metrics.csv", "baseline_metrics.csv", "comparison.csv", "subject_deltas.csv", "eval.json"})
    CHECK(fs::exists(dir / "eval" / f));
  CHECK(lines(dir / "eval" / "metrics.csv").front() == "subject,structure,dsc,hd95_mm,flags");

  const ReportOutcome rep = cmd_report({dir / "inter", dir / "intra"}, cohort, dir / "report");
  CHECK(rep.runs == 4);
  CHECK(rep.montages == 4);
  CHECK(fs::exists(dir / "report" / "summary.md"));
  CHECK(fs::exists(dir / "report" / "histograms.csv"));

  const ReportOutcome empty = cmd_report({}, cohort, dir / "report_empty");
  CHECK(empty.runs == 0);
  CHECK(fs::exists(dir / "report_empty" / "summary.md"));
}

TEST_CASE("command logging is optional") {
  std::ostringstream sink;
  CommandLog log{&sink};
  log << "x" << 1;
  CHECK(sink.str() == "x1");
  CommandLog quiet;
  quiet << "ignored";
}
