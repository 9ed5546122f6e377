// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Criteria 6-8 run the full benchmark from the shipped config.

#include <chrono>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "gradient_suite.hpp"
#include "oracles.hpp"
#include "ttoreg/benchmark.hpp"
#include "ttoreg/error.hpp"
#include "ttoreg/field.hpp"
#include "ttoreg/io.hpp"
#include "ttoreg/metrics.hpp"
#include "ttoreg/optim.hpp"
#include "ttoreg/synthetic.hpp"

using namespace ttoreg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

/// Collects the individual checks of one criterion.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failures_.push_back(what);
    }
  }
  void note(const std::string& line) { notes_.push_back(line); }
  bool pass() const { return pass_; }
  const std::vector<std::string>& failures() const { return failures_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  bool pass_ = true;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

Volume random_volume(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Volume v(d);
  for (float& x : v.data()) x = dist(rng);
  return v;
}

DisplacementField constant_field(Dims d, Vec3 c) {
  DisplacementField u(d);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) u.set(x, y, z, c);
  return u;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 1 ---------------------------------------------------------------------------

void gradients(Verdict& v) {
  const auto t0 = Clock::now();
  std::set<std::string> kinds;
  for (const auto& c : gradient_suite::all_checks()) {
    kinds.insert(c.name.substr(0, c.name.find(' ')));
    v.check(c.result.checked > 0 && c.result.max_rel_error < gradient_suite::kTol,
            c.name + ": max rel error " + fmt(c.result.max_rel_error));
    v.note(c.name + ": max rel error " + fmt(c.result.max_rel_error) + " over " + std::to_string(c.result.checked) +
           " coordinates");
  }
  for (const char* k : {"conv3d", "leaky", "warp", "mse", "local", "smoothness", "2-layer"})
    v.check(kinds.count(k) == 1, std::string("missing gradient check: ") + k);
  const double secs = seconds_since(t0);
  v.check(secs < 60.0, "runtime " + fmt(secs) + " s exceeds 1 min");
  v.note("runtime " + fmt(secs) + " s");
}

// 2 ---------------------------------------------------------------------------

void warp_identities(Verdict& v) {
  const Dims d{7, 5, 6};
  const Volume img = random_volume(d, 1);
  v.check(warp_volume(img, DisplacementField(d)) == img, "warp by zero field is not bit-exact");

  const int shifts[][3] = {{1, 0, 0}, {0, -1, 0}, {0, 0, 2}, {-2, 1, -1}, {3, -2, 1}};
  for (const auto& s : shifts) {
    const Volume w = warp_volume(img, constant_field(d, {float(s[0]), float(s[1]), float(s[2])}));
    bool ok = true;
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) {
          const int sx = std::clamp(x + s[0], 0, d.nx - 1);
          const int sy = std::clamp(y + s[1], 0, d.ny - 1);
          const int sz = std::clamp(z + s[2], 0, d.nz - 1);
          ok = ok && w(x, y, z) == img(sx, sy, sz);
        }
    v.check(ok, "integer shift (" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) +
                    ") differs from index arithmetic");
  }

  const Dims r{8, 3, 3};
  double worst = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    Dims rd = r;
    std::swap(rd.nx, axis == 1 ? rd.ny : axis == 2 ? rd.nz : rd.nx);
    Volume ramp(rd);
    Vec3 half{0, 0, 0};
    half[axis] = 0.5f;
    for (int z = 0; z < rd.nz; ++z)
      for (int y = 0; y < rd.ny; ++y)
        for (int x = 0; x < rd.nx; ++x) ramp(x, y, z) = float(axis == 0 ? x : axis == 1 ? y : z);
    const Volume w = warp_volume(ramp, constant_field(rd, half));
    for (int z = 0; z < rd.nz; ++z)
      for (int y = 0; y < rd.ny; ++y)
        for (int x = 0; x < rd.nx; ++x) {
          const int p[3] = {x, y, z};
          if (p[axis] + 1 >= rd[axis]) continue;  // clamped sample
          worst = std::max(worst, std::abs(double(w(x, y, z)) - (p[axis] + 0.5)));
        }
  }
  v.check(worst <= 1e-6, "half-voxel ramp error " + fmt(worst));
  v.note("half-voxel ramp max error " + fmt(worst));
}

// 3 ---------------------------------------------------------------------------

void metric_oracles(Verdict& v) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> density(0.05, 0.6);
  const Dims d{8, 8, 8};
  const Spacing unit{1, 1, 1}, aniso{0.8, 1.5, 2.5};
  double worst = 0.0;
  int pairs = 0;
  for (int i = 0; i < 50; ++i) {
    const Mask x = oracle::random_mask(d, density(rng), rng);
    const Mask y = oracle::random_mask(d, density(rng), rng);
    if (x.count() == 0 || y.count() == 0) continue;
    ++pairs;
    const auto got = dsc(x, y);
    v.check(got && *got == oracle::brute_dsc(x, y), "dsc differs from enumeration on pair " + std::to_string(i));
    for (const Spacing& s : {unit, aniso}) {
      const auto h = hd95(x, y, s);
      const double want = oracle::brute_hd95(x, y, s);
      const double err = h ? std::abs(*h - want) : 1e9;
      worst = std::max(worst, err);
      v.check(err < 1e-6, "hd95 differs from enumeration on pair " + std::to_string(i) + " by " + fmt(err));
    }
    const auto self_d = dsc(x, x);
    const auto self_h = hd95(x, x, aniso);
    v.check(self_d && *self_d == 1.0, "dsc(X,X) != 1");
    v.check(self_h && *self_h == 0.0, "hd95(X,X) != 0");
    const auto h1 = hd95(x, y, unit);
    const auto h2 = hd95(x, y, Spacing{2.5, 2.5, 2.5});
    v.check(h1 && h2 && std::abs(*h2 - 2.5 * *h1) <= 1e-9 * std::max(1.0, *h2), "hd95 not linear in spacing");
  }
  v.check(pairs == 50, "only " + std::to_string(pairs) + " non-empty pairs");
  v.note(std::to_string(pairs) + " pairs, hd95 max abs error " + fmt(worst));
}

// 4 ---------------------------------------------------------------------------

void convergence_examples(Verdict& v) {
  const ConvergenceRule defaults;
  v.check(defaults.min_delta == 0.005 && defaults.patience == 50, "default rule is not (0.005, 50)");

  std::vector<double> steady;
  for (int i = 0; i < 200; ++i) steady.push_back(1.0 - 0.01 * i);
  const auto a = check_convergence(steady, defaults);
  v.check(!a.converged && !a.capped, "0.01-per-step decrease stopped early");

  std::vector<double> plateau{1.0};
  for (int i = 0; i < 50; ++i) plateau.push_back(0.999);
  const auto b = check_convergence(plateau, defaults);
  v.check(b.converged && b.stop_iteration == 50, "plateau trace did not converge at its 50th repeat");
  plateau.pop_back();
  v.check(!check_convergence(plateau, defaults).stopped(), "plateau trace converged before its 50th repeat");

  ConvergenceRule one = defaults;
  one.patience = 1;
  const auto c = check_convergence(std::vector<double>{1.0, 1.0}, one);
  v.check(c.converged && c.stop_iteration == 1, "patience 1 on [1.0, 1.0] did not converge immediately");
}

// 5 ---------------------------------------------------------------------------

struct PipelineArtifacts {
  std::vector<char> checkpoint;
  std::map<std::string, std::vector<std::string>> loss_columns;  // per subject run
  std::map<std::string, std::vector<char>> run_payloads;          // fields and checkpoints
  std::map<std::string, std::vector<char>> cohort_files;
};

std::vector<std::string> loss_column(const fs::path& csv) {
  std::ifstream in(csv);
  std::vector<std::string> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    // iteration,loss,wall_ms: keep everything but the wall-clock column
    out.push_back(line.substr(0, line.rfind(',')));
  }
  return out;
}

PipelineArtifacts run_pipeline(const RunConfig& cfg, const fs::path& dir) {
  fs::remove_all(dir);
  const Cohort cohort = cmd_synth(cfg, dir / "cohort");
  const TrainOutcome trained = cmd_train(cfg, cohort, dir / "train");
  cmd_tto(cfg, cohort, TtoMode::Inter, trained.checkpoint, dir / "inter");

  PipelineArtifacts a;
  a.checkpoint = slurp(trained.checkpoint.parent_path() / "population.ckpt.raw");
  const auto manifest = slurp(trained.checkpoint);
  a.checkpoint.insert(a.checkpoint.end(), manifest.begin(), manifest.end());
  for (const auto& e : fs::recursive_directory_iterator(dir / "inter")) {
    if (e.path().filename() == "trace.csv")
      a.loss_columns[fs::relative(e.path(), dir).string()] = loss_column(e.path());
    else if (e.path().extension() == ".raw")
      a.run_payloads[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  for (const auto& e : fs::recursive_directory_iterator(dir / "cohort"))
    if (e.is_regular_file()) a.cohort_files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return a;
}

void determinism(Verdict& v, const fs::path& work) {
  RunConfig cfg;
  cfg.synth = CohortSpec{};  // 32^3, 40 train / 8 test, seed 42
  cfg.workers = 1;
  cfg.epochs = 1;
  cfg.seed = 42;
  cfg.warm_rule = ConvergenceRule{0.005, 5, 10};
  cfg.cohort = "cohort";
  cfg.out = "out";
  v.check(cfg.synth.dims == Dims{32, 32, 32} && cfg.synth.n_train == 40 && cfg.synth.n_test == 8,
          "desk config is not 32^3 with 40/8 subjects");

  const auto t0 = Clock::now();
  const auto a = run_pipeline(cfg, work / "run_a");
  const auto b = run_pipeline(cfg, work / "run_b");
  const double secs = seconds_since(t0);

  v.check(!a.checkpoint.empty() && a.checkpoint == b.checkpoint, "population checkpoints differ");
  v.check(a.cohort_files.size() > 0 && a.cohort_files == b.cohort_files, "synthesized cohorts differ");
  v.check(a.loss_columns.size() == 8 && a.loss_columns == b.loss_columns, "TTO loss traces differ");
  v.check(!a.run_payloads.empty() && a.run_payloads == b.run_payloads, "TTO checkpoints or fields differ");
  v.check(secs < 600.0, "runtime " + fmt(secs) + " s exceeds 10 min");
  v.note(std::to_string(a.cohort_files.size()) + " cohort files, " + std::to_string(a.loss_columns.size()) +
         " traces and " +
         std::to_string(a.run_payloads.size()) + " run payloads compared; runtime " + fmt(secs) + " s");
}

// 6-8 -------------------------------------------------------------------------

void benchmark(std::map<int, Verdict>& verdicts, const BenchmarkConfig& cfg, const fs::path& work) {
  const fs::path out = work / "benchmark";
  fs::remove_all(out);  // stage reuse would defeat the runtime check

  // Experiment 1 on its own clock; run_benchmark then reuses its stages.
  const auto t0 = Clock::now();
  const Cohort cohort = cmd_synth(cfg.base, out / "cohort");
  for (std::size_t i = 0; i < cfg.architectures.size(); ++i) (void)run_experiment_1(cfg, i, cohort, out);
  const double exp1_secs = seconds_since(t0);
  const BenchmarkReport report = run_benchmark(cfg, out);
  const double total_secs = seconds_since(t0);

  for (const auto& a : report.assertions) {
    Verdict& v = verdicts[a.criterion];
    const std::string line = a.name + ": measured " + fmt(a.measured) + ", threshold " + fmt(a.threshold) +
                             (a.detail.empty() ? "" : " (" + a.detail + ")");
    v.check(a.pass, line);
    v.note(std::string(a.pass ? "ok   " : "FAIL ") + line);
  }
  for (int c : {6, 7, 8})
    verdicts[c].check(std::count_if(report.assertions.begin(), report.assertions.end(),
                                    [&](const Assertion& a) { return a.criterion == c; }) > 0,
                      "no assertions recorded");
  verdicts[6].check(exp1_secs < 1800.0, "experiment 1 runtime " + fmt(exp1_secs) + " s exceeds 30 min");
  verdicts[6].note("experiment 1 runtime " + fmt(exp1_secs) + " s; whole benchmark " + fmt(total_secs) + " s");
  verdicts[7].note("median scratch " + fmt(report.median_scratch) + ", median inter " + fmt(report.median_inter));
}

// 9 ---------------------------------------------------------------------------

void cascade_consistency(Verdict& v) {
  const Dims small{6, 6, 6};
  const Volume m = random_volume(small, 4), f = random_volume(small, 5);
  for (const auto& arch : {ArchitectureSpec::plain_cnn(1), ArchitectureSpec::encoder_decoder(1)}) {
    auto p = init_params(arch, 3);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> dist(-0.05f, 0.05f);
    for (float& w : p.blob) w += dist(rng);
    std::vector<float> blob = p.blob;
    const auto direct = evaluate_network<float>(arch, blob, m.to_tensor<float>(), f.to_tensor<float>(), nullptr, false);
    v.check(forward(p, m, f) == DisplacementField::from_tensor(direct.field),
            arch.label() + ": single-stage output differs from the base network");
  }

  // Affine images: trilinear sampling is exact on them, so the gap between
  // one warp by the composition and two successive warps is composition
  // error alone.
  const Dims d{24, 24, 24};
  double worst = 0.0;
  for (std::uint64_t seed : {11, 12, 13, 14, 15}) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> coef(-0.05f, 0.05f);
    const float a = coef(rng), b = coef(rng), c = coef(rng);
    Volume img(d);
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) img(x, y, z) = 0.5f + a * x + b * y + c * z;
    const auto u1 = smooth_random_field(d, 4.0, 2.0, seed);
    const auto u2 = smooth_random_field(d, 4.0, 2.0, seed + 100);
    const Volume one = warp_volume(img, compose(u1, u2));
    const Volume two = warp_volume(warp_volume(img, u1), u2);
    for (std::size_t i = 0; i < one.voxels(); ++i)
      worst = std::max(worst, double(std::abs(one.data()[i] - two.data()[i])));
  }
  v.check(worst < 1e-4, "compose vs sequential max abs " + fmt(worst));
  v.note("compose vs sequential max abs " + fmt(worst));
}

// 10 --------------------------------------------------------------------------

void persistence(Verdict& v, const fs::path& work) {
  const fs::path dir = work / "persistence";
  fs::remove_all(dir);
  fs::create_directories(dir);

  Volume vol({5, 4, 3}, {0.7, 1.1, 2.5});
  for (std::size_t i = 0; i < vol.voxels(); ++i) vol.data()[i] = std::sin(1.3f * float(i)) * 1e3f;
  save_volume(vol, dir / "vol");
  const Volume vol_back = load_volume(dir / "vol");
  v.check(vol_back == vol && std::memcmp(vol_back.data().data(), vol.data().data(), vol.voxels() * 4) == 0,
          "volume round-trip is not bit-exact");

  std::mt19937_64 rng(8);
  const Mask mask = oracle::random_mask({6, 5, 4}, 0.4, rng);
  save_mask(mask, dir / "mask");
  v.check(load_mask(dir / "mask") == mask, "mask round-trip is not bit-exact");

  DisplacementField u({3, 4, 5});
  for (std::size_t i = 0; i < u.data().size(); ++i) u.data()[i] = std::cos(0.37f * float(i)) * 3.0f;
  save_field(u, dir / "field");
  v.check(load_field(dir / "field") == u, "field round-trip is not bit-exact");

  ModelParameters p = init_params(ArchitectureSpec::encoder_decoder(3), 5);
  p.provenance = Provenance::Individualized;
  save_checkpoint(p, dir / "model");
  v.check(load_checkpoint(dir / "model") == p, "checkpoint round-trip is not bit-exact");

  // Drop one float from each payload.
  auto corrupt = [&](const fs::path& raw, std::size_t drop, auto&& load, const std::string& what) {
    auto bytes = slurp(raw);
    const std::size_t want = bytes.size();
    bytes.resize(want - drop);
    std::ofstream(raw, std::ios::binary | std::ios::trunc).write(bytes.data(), std::streamsize(bytes.size()));
    try {
      load();
      v.check(false, what + ": truncated payload accepted");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      const bool names_sizes = msg.find(std::to_string(want)) != std::string::npos &&
                               msg.find(std::to_string(want - drop)) != std::string::npos;
      v.check(names_sizes, what + ": diagnostic lacks expected/actual sizes: " + msg);
      v.note(what + ": " + msg);
    }
  };
  corrupt(dir / "vol.raw", 4, [&] { (void)load_volume(dir / "vol"); }, "volume");
  corrupt(dir / "mask.raw", 1, [&] { (void)load_mask(dir / "mask"); }, "mask");
  corrupt(dir / "field.raw", 4, [&] { (void)load_field(dir / "field"); }, "field");
  corrupt(dir / "model.ckpt.raw", 4, [&] { (void)load_checkpoint(dir / "model"); }, "checkpoint");
}

const char* kTitles[] = {"",
                         "gradient correctness",
                         "warping identities",
                         "metric oracles",
                         "convergence rule",
                         "determinism",
                         "experiment 1 direction",
                         "experiment 2 efficiency",
                         "experiment 3 intra-patient",
                         "cascade consistency",
                         "persistence"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("acceptance checks");
  std::string config_path, work_path;
  std::vector<int> only;
  app.add_option("--config", config_path, "benchmark configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--work", work_path, "scratch directory")->required();
  app.add_option("--criteria", only, "run only these criteria")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const fs::path work(work_path);
  fs::create_directories(work);
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty())
    for (int c = 1; c <= 10; ++c) selected.insert(c);

  std::map<int, Verdict> verdicts;
  auto guarded = [&](int c, auto&& body) {
    if (!selected.count(c)) return;
    try {
      body(verdicts[c]);
    } catch (const std::exception& e) {
      verdicts[c].check(false, std::string("exception: ") + e.what());
    }
  };
  guarded(1, gradients);
  guarded(2, warp_identities);
  guarded(3, metric_oracles);
  guarded(4, convergence_examples);
  guarded(5, [&](Verdict& v) { determinism(v, work); });
  if (selected.count(6) || selected.count(7) || selected.count(8)) {
    try {
      benchmark(verdicts, load_benchmark_config(config_path), work);
    } catch (const std::exception& e) {
      for (int c : {6, 7, 8}) verdicts[c].check(false, std::string("exception: ") + e.what());
    }
  }
  guarded(9, cascade_consistency);
  guarded(10, [&](Verdict& v) { persistence(v, work); });

  bool all = true;
  for (int c : selected) {
    const Verdict& v = verdicts[c];
    for (const auto& n : v.notes()) std::cout << "    criterion " << c << ": " << n << '\n';
    for (const auto& f : v.failures()) std::cout << "    criterion " << c << " failed: " << f << '\n';
    std::cout << (v.pass() ? "PASS" : "FAIL") << " criterion " << c << " (" << kTitles[c] << ")\n";
    all = all && v.pass();
  }
  return all ? 0 : 1;
}
