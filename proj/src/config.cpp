#include "ttoreg/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "ttoreg/error.hpp"

namespace ttoreg {

namespace {

template <typename T>
void read_key(const Json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
}

std::array<double, 3> triple(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + " must be an array of 3 numbers");
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ConfigError(where + " must be an array of 3 numbers");
    out[i] = j[i].get<double>();
  }
  return out;
}

}  // namespace

void require_known_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require_object(j, where);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
    if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

void to_json(Json& j, const Dims& d) { j = Json::array({d.nx, d.ny, d.nz}); }

void from_json(const Json& j, Dims& d) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("dims must be an array of 3 integers");
  for (const auto& e : j) {
    if (!e.is_number_integer()) throw ConfigError("dims must be an array of 3 integers");
  }
  d = Dims{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

void to_json(Json& j, const Spacing& s) { j = Json::array({s.sx, s.sy, s.sz}); }

void from_json(const Json& j, Spacing& s) {
  const auto t = triple(j, "spacing");
  s = Spacing{t[0], t[1], t[2]};
}

void to_json(Json& j, const ArchitectureSpec& a) {
  j = Json{{"kind", to_string(a.kind)},
           {"conv_layers", a.conv_layers},
           {"filters", a.filters},
           {"leaky_slope", a.leaky_slope},
           {"cascade_stages", a.cascade_stages}};
}

void from_json(const Json& j, ArchitectureSpec& a) {
  require_known_keys(j, {"kind", "conv_layers", "filters", "leaky_slope", "cascade_stages"}, "arch");
  std::string kind = to_string(a.kind);
  read_key(j, "kind", kind, "arch");
  const ArchKind parsed = parse_arch_kind(kind);
  if (parsed != a.kind) {
    // Switching family resets the family-specific defaults.
    a = parsed == ArchKind::PlainCnn ? ArchitectureSpec::plain_cnn(a.cascade_stages)
                                     : ArchitectureSpec::encoder_decoder(a.cascade_stages);
  }
  read_key(j, "conv_layers", a.conv_layers, "arch");
  read_key(j, "filters", a.filters, "arch");
  read_key(j, "leaky_slope", a.leaky_slope, "arch");
  read_key(j, "cascade_stages", a.cascade_stages, "arch");
  a.validate();
}

void to_json(Json& j, const LossConfig& c) {
  j = Json{{"similarity", to_string(c.similarity)}, {"ncc_window", c.ncc_window}, {"lambda", c.lambda}};
}

void from_json(const Json& j, LossConfig& c) {
  require_known_keys(j, {"similarity", "ncc_window", "lambda"}, "loss");
  std::string sim = to_string(c.similarity);
  read_key(j, "similarity", sim, "loss");
  c.similarity = parse_similarity(sim);
  read_key(j, "ncc_window", c.ncc_window, "loss");
  read_key(j, "lambda", c.lambda, "loss");
  c.validate();
}

void to_json(Json& j, const ConvergenceRule& r) {
  j = Json{{"min_delta", r.min_delta}, {"patience", r.patience}, {"max_iters", r.max_iters}};
}

void from_json(const Json& j, ConvergenceRule& r) {
  require_known_keys(j, {"min_delta", "patience", "max_iters"}, "convergence");
  read_key(j, "min_delta", r.min_delta, "convergence");
  read_key(j, "patience", r.patience, "convergence");
  read_key(j, "max_iters", r.max_iters, "convergence");
  r.validate();
}

void to_json(Json& j, const AdamSettings& a) {
  j = Json{{"learning_rate", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"epsilon", a.epsilon}};
}

void from_json(const Json& j, AdamSettings& a) {
  require_known_keys(j, {"learning_rate", "beta1", "beta2", "epsilon"}, "adam");
  read_key(j, "learning_rate", a.learning_rate, "adam");
  read_key(j, "beta1", a.beta1, "adam");
  read_key(j, "beta2", a.beta2, "adam");
  read_key(j, "epsilon", a.epsilon, "adam");
  a.validate();
}

void to_json(Json& j, const CohortSpec& s) {
  j = Json{{"dims", s.dims},
           {"spacing_mm", s.spacing},
           {"n_train", s.n_train},
           {"n_test", s.n_test},
           {"n_structures", s.n_structures},
           {"n_fractions", s.n_fractions},
           {"deformation_amplitude", s.deformation_amplitude},
           {"smoothness_sigma", s.smoothness_sigma},
           {"drift_amplitude", s.drift_amplitude},
           {"noise_sigma", s.noise_sigma},
           {"ood_fraction", s.ood_fraction},
           {"ood_scale", s.ood_scale},
           {"seed", s.seed}};
}

void from_json(const Json& j, CohortSpec& s) {
  require_known_keys(j,
                     {"dims", "spacing_mm", "n_train", "n_test", "n_structures", "n_fractions",
                      "deformation_amplitude", "smoothness_sigma", "drift_amplitude", "noise_sigma", "ood_fraction",
                      "ood_scale", "seed"},
                     "synth");
  if (j.contains("dims")) s.dims = j.at("dims").get<Dims>();
  if (j.contains("spacing_mm")) s.spacing = j.at("spacing_mm").get<Spacing>();
  read_key(j, "n_train", s.n_train, "synth");
  read_key(j, "n_test", s.n_test, "synth");
  read_key(j, "n_structures", s.n_structures, "synth");
  read_key(j, "n_fractions", s.n_fractions, "synth");
  read_key(j, "deformation_amplitude", s.deformation_amplitude, "synth");
  read_key(j, "smoothness_sigma", s.smoothness_sigma, "synth");
  read_key(j, "drift_amplitude", s.drift_amplitude, "synth");
  read_key(j, "noise_sigma", s.noise_sigma, "synth");
  read_key(j, "ood_fraction", s.ood_fraction, "synth");
  read_key(j, "ood_scale", s.ood_scale, "synth");
  read_key(j, "seed", s.seed, "synth");
  s.validate();
}

void RunConfig::validate() const {
  synth.validate();
  arch.validate();
  loss.validate();
  scratch_rule.validate();
  warm_rule.validate();
  adam.validate();
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (cohort.empty() || out.empty()) throw ConfigError("cohort and out paths must be non-empty");
}

void to_json(Json& j, const RunConfig& c) {
  j = Json{{"cohort", c.cohort},
           {"out", c.out},
           {"experiment", c.experiment},
           {"synth", c.synth},
           {"arch", c.arch},
           {"loss", c.loss},
           {"convergence", {{"scratch", c.scratch_rule}, {"warm_start", c.warm_rule}}},
           {"adam", c.adam},
           {"epochs", c.epochs},
           {"workers", c.workers},
           {"seed", c.seed}};
}

void from_json(const Json& j, RunConfig& c) {
  require_known_keys(j,
                     {"cohort", "out", "experiment", "synth", "arch", "loss", "convergence", "adam", "epochs",
                      "workers", "seed"},
                     "config");
  read_key(j, "cohort", c.cohort, "config");
  read_key(j, "out", c.out, "config");
  read_key(j, "experiment", c.experiment, "config");
  if (j.contains("synth")) from_json(j.at("synth"), c.synth);
  if (j.contains("arch")) from_json(j.at("arch"), c.arch);
  if (j.contains("loss")) from_json(j.at("loss"), c.loss);
  if (j.contains("convergence")) {
    const Json& conv = j.at("convergence");
    require_known_keys(conv, {"scratch", "warm_start"}, "convergence");
    if (conv.contains("scratch")) from_json(conv.at("scratch"), c.scratch_rule);
    if (conv.contains("warm_start")) from_json(conv.at("warm_start"), c.warm_rule);
  }
  if (j.contains("adam")) from_json(j.at("adam"), c.adam);
  read_key(j, "epochs", c.epochs, "config");
  read_key(j, "workers", c.workers, "config");
  read_key(j, "seed", c.seed, "config");
  c.validate();
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json_file(const Json& j, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c;
  from_json(read_json_file(path), c);
  return c;
}

}  // namespace ttoreg
