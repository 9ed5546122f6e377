#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "ttoreg/loss.hpp"
#include "ttoreg/network.hpp"
#include "ttoreg/optim.hpp"
#include "ttoreg/synthetic.hpp"

namespace ttoreg {

using Json = nlohmann::json;

// JSON mappings. Readers accept missing keys (defaults apply), reject
// unknown keys and wrong types with ConfigError, and validate the result.

void to_json(Json& j, const Dims& d);
void from_json(const Json& j, Dims& d);
void to_json(Json& j, const Spacing& s);
void from_json(const Json& j, Spacing& s);
void to_json(Json& j, const ArchitectureSpec& a);
void from_json(const Json& j, ArchitectureSpec& a);
void to_json(Json& j, const LossConfig& c);
void from_json(const Json& j, LossConfig& c);
void to_json(Json& j, const ConvergenceRule& r);
void from_json(const Json& j, ConvergenceRule& r);
void to_json(Json& j, const AdamSettings& a);
void from_json(const Json& j, AdamSettings& a);
void to_json(Json& j, const CohortSpec& s);
void from_json(const Json& j, CohortSpec& s);

/// Everything a command needs. One JSON file holds it; command-line flags
/// override individual fields afterwards.
struct RunConfig {
  std::string cohort = "cohort";
  std::string out = "out";
  std::string experiment = "custom";
  CohortSpec synth;
  ArchitectureSpec arch;
  LossConfig loss;
  ConvergenceRule scratch_rule = ConvergenceRule::scratch();
  ConvergenceRule warm_rule = ConvergenceRule::warm_start();
  AdamSettings adam;
  int epochs = 10;
  int workers = 1;
  std::uint64_t seed = 42;

  void validate() const;
};

void to_json(Json& j, const RunConfig& c);
void from_json(const Json& j, RunConfig& c);

Json read_json_file(const std::filesystem::path& path);
/// Pretty-printed, trailing newline, written atomically via rename.
void write_json_file(const Json& j, const std::filesystem::path& path);

RunConfig load_run_config(const std::filesystem::path& path);

/// Rejects keys of `j` outside `allowed`; `where` names the object in the
/// diagnostic.
void require_known_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

}  // namespace ttoreg
