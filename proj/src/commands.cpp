#include "ttoreg/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>

#include "ttoreg/error.hpp"
#include "ttoreg/io.hpp"
#include "ttoreg/parallel.hpp"
#include "ttoreg/png.hpp"

namespace ttoreg {

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

const Subject& find_subject(const Cohort& cohort, const std::string& id) {
  for (const Subject& s : cohort.subjects) {
    if (s.id == id) return s;
  }
  throw ConfigError("subject '" + id + "' is not in the cohort");
}

std::vector<fs::path> run_dirs(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "run.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

Cohort cmd_synth(const RunConfig& cfg, const fs::path& dir, CommandLog log) {
  cfg.synth.validate();
  Cohort cohort = generate_cohort(cfg.synth, cfg.workers);
  write_cohort(cohort, dir);
  log << "cohort " << dir.string() << ": " << cohort.subjects.size() << " subjects (" << cfg.synth.n_train
      << " train, " << cfg.synth.n_test << " test, " << cfg.synth.n_ood() << " ood), dims "
      << to_string(cfg.synth.dims) << ", " << cfg.synth.n_structures << " structures, " << cfg.synth.n_fractions
      << " fractions\n";
  return cohort;
}

TrainOutcome cmd_train(const RunConfig& cfg, const Cohort& cohort, const fs::path& out, bool resume,
                       CommandLog log) {
  cfg.validate();
  std::vector<ImagePair> pairs;
  for (const Subject* s : cohort.split(false)) pairs.push_back({s->planning, s->fractions.at(0).image});
  if (pairs.empty()) throw ConfigError("cohort has no training subjects");
  fs::create_directories(out);

  TrainingResult previous;
  const TrainingResult* resume_from = nullptr;
  if (resume && fs::exists(out / "train_state.json")) {
    previous.params = load_checkpoint(out / "population");
    previous.optimizer = load_optimizer_state(out / "train_state");
    std::ifstream in(out / "epochs.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto cells = split_csv(line);
      if (cells.size() != 3) throw FormatError((out / "epochs.csv").string() + ": malformed row");
      previous.epochs.push_back({std::stoi(cells[0]), std::stod(cells[1]), std::stod(cells[2])});
    }
    if (previous.params.seed != cfg.seed) throw ConfigError("resume seed differs from the saved run");
    resume_from = &previous;
    log << "resuming after epoch " << previous.epochs.size() << "\n";
  }

  TrainingResult result = train_population(pairs, cfg.arch, cfg.loss, cfg.epochs, cfg.seed, cfg.adam, resume_from,
                                           [&](const EpochRecord& r) {
                                             log << "epoch " << r.epoch << " mean loss " << fmt(r.mean_loss)
                                                 << " (" << fmt(r.wall_ms / 1000.0, "%.1f") << " s)\n";
                                           });
  result.params.seed = cfg.seed;
  save_checkpoint(result.params, out / "population");
  save_optimizer_state(result.optimizer, out / "train_state");
  std::vector<double> loss, wall;
  for (const auto& e : result.epochs) {
    loss.push_back(e.mean_loss);
    wall.push_back(e.wall_ms);
  }
  write_trace_csv(loss, wall, out / "epochs.csv");
  return {std::move(result), out / "population.ckpt.json"};
}

std::vector<RunSummaryRow> cmd_tto(const RunConfig& cfg, const Cohort& cohort, TtoMode mode, const fs::path& start,
                                   const fs::path& out, CommandLog log) {
  cfg.validate();
  TtoSettings settings{cfg.loss, mode == TtoMode::Scratch ? cfg.scratch_rule : cfg.warm_rule, cfg.adam};
  std::optional<ModelParameters> population;
  if (mode == TtoMode::Inter) {
    population = load_checkpoint(start);
    if (!(population->arch == cfg.arch)) {
      throw ConfigError("checkpoint architecture " + population->arch.label() + " differs from configured " +
                        cfg.arch.label());
    }
  }
  const std::vector<const Subject*> subjects = cohort.split(true);
  fs::create_directories(out);
  std::vector<RunSummaryRow> rows(subjects.size());
  std::mutex log_mutex;

  parallel_for(subjects.size(), cfg.workers, [&](std::size_t i) {
    const Subject& s = *subjects[i];
    RunSummaryRow& row = rows[i];
    row.subject = s.id;
    row.ood = s.ood;
    row.mode = to_string(mode);
    try {
      TtoStart from = TtoStart::fresh(cfg.arch, cfg.seed + static_cast<std::uint64_t>(s.index));
      int fraction = 1;
      if (mode == TtoMode::Inter) {
        from = TtoStart::from(*population);
      } else if (mode == TtoMode::Intra) {
        const Json meta = read_json_file(start / s.id / "run.json");
        fraction = meta.at("fraction").get<int>() + 1;
        ModelParameters p = load_checkpoint(start / s.id / "model");
        if (!(p.arch == cfg.arch)) throw ConfigError("checkpoint architecture differs from configuration");
        from = TtoStart::from(p);
      }
      row.fraction = fraction;
      if (fraction > static_cast<int>(s.fractions.size())) {
        throw ConfigError("subject has no fraction " + std::to_string(fraction));
      }
      const TTORun run = tto_run(from, s.planning, s.fractions[fraction - 1].image, settings, mode);
      write_run(run, out / s.id, s.id, fraction);
      row.status = to_string(run.status);
      row.iterations = run.iterations;
      row.wall_ms = run.wall_ms;
      row.initial_loss = run.initial_loss();
      row.best_loss = run.best_loss();
      row.final_loss = run.loss_trace.empty() ? 0.0 : run.loss_trace.back();
      row.error = run.error;
    } catch (const std::exception& e) {
      row.status = "failed";
      row.error = e.what();
    }
    std::lock_guard<std::mutex> lock(log_mutex);
    log << row.subject << " " << row.mode << " f" << row.fraction << ": " << row.status << " after "
        << row.iterations << " iterations, " << fmt(row.wall_ms / 1000.0, "%.1f") << " s, loss "
        << fmt(row.initial_loss) << " -> " << fmt(row.best_loss) << (row.error.empty() ? "" : " (" + row.error + ")")
        << "\n";
  });

  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.subject < b.subject; });
  std::ofstream csv = open_out(out / "summary.csv");
  csv << "subject,fraction,ood,mode,status,iterations,wall_ms,initial_loss,best_loss,final_loss,error\n";
  for (const auto& r : rows) {
    csv << r.subject << ',' << r.fraction << ',' << (r.ood ? 1 : 0) << ',' << r.mode << ',' << r.status << ','
        << r.iterations << ',' << fmt(r.wall_ms, "%.3f") << ',' << fmt(r.initial_loss, "%.17g") << ','
        << fmt(r.best_loss, "%.17g") << ',' << fmt(r.final_loss, "%.17g") << ',' << csv_safe(r.error) << '\n';
  }
  return rows;
}

std::vector<RunSummaryRow> read_run_summary(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("missing " + csv.string());
  std::string line;
  std::getline(in, line);
  std::vector<RunSummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 11) throw FormatError(csv.string() + ": malformed row '" + line + "'");
    auto num = [](const std::string& s) { return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s); };
    rows.push_back({c[0], std::stoi(c[1]), c[2] == "1", c[3], c[4], std::stoi(c[5]), num(c[6]), num(c[7]),
                    num(c[8]), num(c[9]), c[10]});
  }
  return rows;
}

void write_metrics_csv(const std::vector<SubjectEvaluation>& evals, bool baseline, const fs::path& path) {
  std::ofstream csv = open_out(path);
  csv << "subject,structure,dsc,hd95_mm,flags\n";
  for (const auto& e : evals) {
    for (const auto& s : baseline ? e.baseline : e.scores) {
      csv << e.subject << ',' << s.name << ',' << fmt_opt(s.dsc) << ',' << fmt_opt(s.hd95) << ',' << s.flags()
          << '\n';
    }
  }
}

namespace {

StructureSet propagate(const StructureSet& planning, const DisplacementField& u) {
  StructureSet out(planning.dims(), planning.spacing());
  for (const Structure& s : planning.structures()) out.add(s.name, warp_mask(s.mask, u));
  return out;
}

struct Means {
  MeanWithExclusions dsc, hd95;
};

Means means_of(const std::vector<const StructureScore*>& scores) {
  std::vector<std::optional<double>> d, h;
  for (const auto* s : scores) {
    d.push_back(s->dsc);
    h.push_back(s->hd95);
  }
  return {mean_defined(d), mean_defined(h)};
}

Json means_json(const Means& m) {
  auto num = [](const MeanWithExclusions& v) { return v.count > 0 ? Json(v.mean) : Json(nullptr); };
  return Json{{"mean_dsc", num(m.dsc)},
              {"mean_hd95_mm", num(m.hd95)},
              {"dsc_count", m.dsc.count},
              {"dsc_excluded", m.dsc.excluded},
              {"hd95_count", m.hd95.count},
              {"hd95_excluded", m.hd95.excluded}};
}

}  // namespace

std::vector<SubjectEvaluation> cmd_eval(const EvalOptions& opts, const Cohort& cohort, const fs::path& out,
                                        CommandLog log) {
  if (opts.baseline_checkpoint && opts.baseline_runs) throw ConfigError("give one baseline, not two");
  const std::vector<fs::path> dirs = run_dirs(opts.runs);
  std::optional<ModelParameters> baseline_model;
  if (opts.baseline_checkpoint) baseline_model = load_checkpoint(*opts.baseline_checkpoint);
  const bool with_baseline = opts.baseline_checkpoint || opts.baseline_runs;

  std::vector<SubjectEvaluation> evals(dirs.size());
  parallel_for(dirs.size(), opts.workers, [&](std::size_t i) {
    const Json meta = read_json_file(dirs[i] / "run.json");
    SubjectEvaluation& e = evals[i];
    e.subject = meta.at("subject").get<std::string>();
    e.fraction = meta.at("fraction").get<int>();
    const Subject& s = find_subject(cohort, e.subject);
    e.ood = s.ood;
    if (e.fraction < 1 || e.fraction > static_cast<int>(s.fractions.size())) {
      throw ConfigError(e.subject + ": run refers to missing fraction " + std::to_string(e.fraction));
    }
    const Fraction& f = s.fractions[e.fraction - 1];
    const DisplacementField u = load_field(dirs[i] / "field");
    e.scores = score_structures(propagate(s.structures, u), f.truth_structures);
    if (with_baseline) {
      const ModelParameters model =
          baseline_model ? *baseline_model : load_checkpoint(*opts.baseline_runs / e.subject / "model");
      e.baseline = score_structures(propagate(s.structures, forward(model, s.planning, f.image)), f.truth_structures);
    }
  });

  fs::create_directories(out);
  write_metrics_csv(evals, false, out / "metrics.csv");
  if (with_baseline) write_metrics_csv(evals, true, out / "baseline_metrics.csv");

  // Per-structure comparison (structure order of the first subject).
  std::vector<std::string> names;
  if (!evals.empty()) {
    for (const auto& s : evals.front().scores) names.push_back(s.name);
  }
  auto collect = [&](const std::string& name, bool baseline, bool ood_only) {
    std::vector<const StructureScore*> out_scores;
    for (const auto& e : evals) {
      if (ood_only && !e.ood) continue;
      for (const auto& s : baseline ? e.baseline : e.scores) {
        if (name.empty() || s.name == name) out_scores.push_back(&s);
      }
    }
    return out_scores;
  };
  {
    std::ofstream csv = open_out(out / "comparison.csv");
    csv << "structure,n,baseline_dsc,dsc,delta_dsc,baseline_hd95_mm,hd95_mm,delta_hd95_mm\n";
    std::vector<std::string> rows = names;
    rows.emplace_back();
    for (const auto& name : rows) {
      const Means m = means_of(collect(name, false, false));
      const Means b = means_of(collect(name, true, false));
      csv << (name.empty() ? "ALL" : name) << ',' << m.dsc.count << ',';
      if (with_baseline) {
        csv << fmt(b.dsc.mean) << ',' << fmt(m.dsc.mean) << ',' << fmt(m.dsc.mean - b.dsc.mean) << ','
            << fmt(b.hd95.mean) << ',' << fmt(m.hd95.mean) << ',' << fmt(b.hd95.mean - m.hd95.mean) << '\n';
      } else {
        csv << ',' << fmt(m.dsc.mean) << ",,," << fmt(m.hd95.mean) << ",\n";
      }
    }
  }
  {
    std::ofstream csv = open_out(out / "subject_deltas.csv");
    csv << "subject,fraction,ood,baseline_dsc,dsc,delta_dsc,baseline_hd95_mm,hd95_mm,delta_hd95_mm,flagged\n";
    for (const auto& e : evals) {
      std::vector<const StructureScore*> mine, base;
      for (const auto& s : e.scores) mine.push_back(&s);
      for (const auto& s : e.baseline) base.push_back(&s);
      const Means m = means_of(mine);
      const Means b = means_of(base);
      const double dd = m.dsc.mean - b.dsc.mean;
      const double dh = b.hd95.mean - m.hd95.mean;  // positive = improvement
      const bool flagged = with_baseline && ((std::isfinite(dd) && dd >= 0.05) || (std::isfinite(dh) && dh >= 2.0));
      csv << e.subject << ',' << e.fraction << ',' << (e.ood ? 1 : 0) << ',' << fmt(b.dsc.mean) << ','
          << fmt(m.dsc.mean) << ',' << fmt(dd) << ',' << fmt(b.hd95.mean) << ',' << fmt(m.hd95.mean) << ','
          << fmt(dh) << ',' << (flagged ? 1 : 0) << '\n';
    }
  }
  Json summary{{"runs", opts.runs.string()},
               {"subjects", evals.size()},
               {"all", means_json(means_of(collect("", false, false)))},
               {"ood", means_json(means_of(collect("", false, true)))}};
  if (with_baseline) {
    summary["baseline_all"] = means_json(means_of(collect("", true, false)));
    summary["baseline_ood"] = means_json(means_of(collect("", true, true)));
  }
  write_json_file(summary, out / "eval.json");
  log << "evaluated " << evals.size() << " runs from " << opts.runs.string() << ": mean DSC "
      << fmt(means_of(collect("", false, false)).dsc.mean, "%.4f");
  if (with_baseline) log << " (baseline " << fmt(means_of(collect("", true, false)).dsc.mean, "%.4f") << ")";
  log << "\n";
  return evals;
}

Histogram make_histogram(const std::vector<double>& values, int bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  if (values.empty()) return h;
  h.lo = *std::min_element(values.begin(), values.end());
  h.hi = *std::max_element(values.begin(), values.end());
  const double width = (h.hi - h.lo) / bins;
  for (double v : values) {
    int b = width > 0 ? static_cast<int>((v - h.lo) / width) : 0;
    h.counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))]++;
  }
  return h;
}

namespace {

constexpr int kZoom = 6;

RgbImage render_slice(const Volume& v, int z) {
  const Dims& d = v.dims();
  RgbImage img(d.nx * kZoom, d.ny * kZoom);
  for (int y = 0; y < d.ny; ++y)
    for (int x = 0; x < d.nx; ++x) {
      const auto g = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp<double>(v(x, y, z), 0.0, 1.0)));
      for (int py = 0; py < kZoom; ++py)
        for (int px = 0; px < kZoom; ++px) img.set(x * kZoom + px, (d.ny - 1 - y) * kZoom + py, g, g, g);
    }
  return img;
}

// 1-pixel outline of the mask slice at display resolution.
void draw_contour(RgbImage& img, const Mask& m, int z, std::array<std::uint8_t, 3> color) {
  const Dims& d = m.dims();
  auto on = [&](int px, int py) {
    if (px < 0 || py < 0 || px >= img.width || py >= img.height) return false;
    return m(px / kZoom, d.ny - 1 - py / kZoom, z);
  };
  for (int py = 0; py < img.height; ++py)
    for (int px = 0; px < img.width; ++px) {
      if (on(px, py) && (!on(px - 1, py) || !on(px + 1, py) || !on(px, py - 1) || !on(px, py + 1))) {
        img.set(px, py, color[0], color[1], color[2]);
      }
    }
}

void write_histogram_png(const Histogram& h, const fs::path& path) {
  constexpr int kBarWidth = 24, kHeight = 160;
  const int bins = static_cast<int>(h.counts.size());
  RgbImage img(bins * kBarWidth + 2, kHeight + 2, 255);
  const int peak = std::max(1, *std::max_element(h.counts.begin(), h.counts.end()));
  for (int b = 0; b < bins; ++b) {
    const int height = h.counts[b] * kHeight / peak;
    for (int y = 0; y < height; ++y)
      for (int x = 2; x < kBarWidth - 2; ++x) img.set(1 + b * kBarWidth + x, kHeight - y, 60, 90, 160);
  }
  for (int x = 0; x < img.width; ++x) img.set(x, kHeight + 1, 0, 0, 0);
  write_png(img, path);
}

}  // namespace

ReportOutcome cmd_report(const std::vector<fs::path>& run_sets, const Cohort& cohort, const fs::path& out,
                         CommandLog log) {
  fs::create_directories(out / "montages");
  ReportOutcome outcome;
  std::ostringstream md;
  md << "# Registration report\n\n";
  std::ofstream hist_csv = open_out(out / "histograms.csv");
  hist_csv << "run_set,metric,bin,bin_lo,bin_hi,count\n";

  for (const fs::path& set : run_sets) {
    const std::string set_name = set.filename().empty() ? set.parent_path().filename().string() : set.filename().string();
    const std::vector<fs::path> dirs = run_dirs(set);
    md << "## " << set_name << "\n\n| subject | fraction | mode | status | iterations | wall_ms | best loss |\n"
       << "|---|---|---|---|---|---|---|\n";
    std::vector<double> iterations, wall;
    for (const fs::path& dir : dirs) {
      const Json meta = read_json_file(dir / "run.json");
      const std::string sid = meta.at("subject").get<std::string>();
      const int fraction = meta.at("fraction").get<int>();
      iterations.push_back(meta.at("iterations").get<double>());
      wall.push_back(meta.at("wall_ms").get<double>());
      md << "| " << sid << " | " << fraction << " | " << meta.at("mode").get<std::string>() << " | "
         << meta.at("status").get<std::string>() << " | " << meta.at("iterations").get<int>() << " | "
         << fmt(meta.at("wall_ms").get<double>(), "%.1f") << " | " << fmt(meta.at("best_loss").get<double>()) << " |\n";
      ++outcome.runs;

      const Subject& s = find_subject(cohort, sid);
      const Fraction& f = s.fractions.at(static_cast<std::size_t>(fraction - 1));
      const DisplacementField u = load_field(dir / "field");
      const int z = s.planning.dims().nz / 2;
      RgbImage moving = render_slice(s.planning, z);
      RgbImage fixed = render_slice(f.image, z);
      RgbImage warped = render_slice(warp_volume(s.planning, u), z);
      for (const Structure& st : f.truth_structures.structures()) {
        draw_contour(fixed, st.mask, z, {40, 220, 40});
        draw_contour(fixed, warp_mask(s.structures.find(st.name) ? *s.structures.find(st.name) : st.mask, u), z,
                     {230, 40, 40});
      }
      const int gap = 4;
      RgbImage montage(3 * moving.width + 2 * gap, moving.height, 255);
      montage.blit(moving, 0, 0);
      montage.blit(fixed, moving.width + gap, 0);
      montage.blit(warped, 2 * (moving.width + gap), 0);
      write_png(montage, out / "montages" / (set_name + "_" + sid + "_f" + std::to_string(fraction) + ".png"));
      ++outcome.montages;
    }
    md << "\n";
    for (const auto& [metric, values] : {std::pair{"iterations", iterations}, std::pair{"wall_ms", wall}}) {
      const Histogram h = make_histogram(values, 10);
      const double width = (h.hi - h.lo) / 10.0;
      for (int b = 0; b < 10; ++b) {
        hist_csv << set_name << ',' << metric << ',' << b << ',' << fmt(h.lo + b * width, "%.3f") << ','
                 << fmt(h.lo + (b + 1) * width, "%.3f") << ',' << h.counts[b] << '\n';
      }
      if (!values.empty()) write_histogram_png(h, out / (set_name + "_" + metric + "_hist.png"));
    }
  }
  md << "Montage panels: planning image, fixed image with truth (green) and propagated (red) contours, "
        "warped planning image. Axial mid-slice, intensities windowed to [0, 1].\n\n"
     << "Runs: " << outcome.runs << ", montages: " << outcome.montages << "\n";
  std::ofstream summary = open_out(out / "summary.md");
  summary << md.str();
  log << "report: " << outcome.runs << " runs, " << outcome.montages << " montages -> " << out.string() << "\n";
  return outcome;
}

}  // namespace ttoreg
