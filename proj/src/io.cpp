#include "ttoreg/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ttoreg/config.hpp"
#include "ttoreg/error.hpp"

namespace ttoreg {

namespace {

std::vector<char> encode_f32le(std::span<const float> values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xffu);
  }
  return bytes;
}

std::vector<float> decode_f32le(const std::vector<char>& bytes) {
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    values[i] = std::bit_cast<float>(u);
  }
  return values;
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing payload " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct Header {
  Dims dims;
  Spacing spacing;
  fs::path payload;
};

void save_pair(const fs::path& path, const Dims& dims, const Spacing& spacing, const char* dtype,
               const std::vector<char>& payload) {
  const fs::path stem = header_stem(path);
  const fs::path raw = fs::path(stem.string() + ".raw");
  write_bytes(raw, payload);
  Json header{{"dims", dims}, {"spacing_mm", spacing}, {"dtype", dtype}, {"data", raw.filename().string()}};
  write_json_file(header, fs::path(stem.string() + ".json"));
}

Header read_header(const fs::path& path, const char* dtype) {
  const fs::path stem = header_stem(path);
  const fs::path json_path = fs::path(stem.string() + ".json");
  const Json j = read_json_file(json_path);
  const std::string where = json_path.string();
  for (const char* key : {"dims", "spacing_mm", "dtype", "data"}) {
    if (!j.contains(key)) throw FormatError(where + ": missing key '" + key + "'");
  }
  Header h;
  try {
    h.dims = j.at("dims").get<Dims>();
    h.spacing = j.at("spacing_mm").get<Spacing>();
  } catch (const ConfigError& e) {
    throw FormatError(where + ": " + e.what());
  }
  if (!h.dims.positive()) throw FormatError(where + ": dims must be positive");
  if (!j.at("dtype").is_string() || j.at("dtype").get<std::string>() != dtype) {
    throw FormatError(where + ": expected dtype " + dtype + ", found " + j.at("dtype").dump());
  }
  if (!j.at("data").is_string()) throw FormatError(where + ": data must be a file name");
  const fs::path data = j.at("data").get<std::string>();
  if (data.has_parent_path() || data.empty()) throw FormatError(where + ": data must be a bare file name");
  h.payload = json_path.parent_path() / data;
  return h;
}

std::vector<char> read_payload(const Header& h, std::size_t expected_bytes) {
  std::vector<char> bytes = read_bytes(h.payload);
  if (bytes.size() != expected_bytes) {
    throw FormatError(h.payload.string() + ": payload is " + std::to_string(bytes.size()) + " bytes, dims " +
                      to_string(h.dims) + " require " + std::to_string(expected_bytes));
  }
  return bytes;
}

void require_finite(std::span<const float> values, const fs::path& path) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw FormatError(path.string() + ": non-finite value at element " + std::to_string(i));
    }
  }
}

}  // namespace

fs::path header_stem(const fs::path& path, const char* suffix) {
  const std::string s = path.string();
  const std::string suf = suffix;
  if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) {
    return fs::path(s.substr(0, s.size() - suf.size()));
  }
  return path;
}

void save_volume(const Volume& v, const fs::path& path) {
  save_pair(path, v.dims(), v.spacing(), "f32le", encode_f32le(v.data()));
}

Volume load_volume(const fs::path& path) {
  const Header h = read_header(path, "f32le");
  std::vector<float> values = decode_f32le(read_payload(h, h.dims.voxels() * 4));
  require_finite(values, h.payload);
  return Volume(h.dims, h.spacing, std::move(values));
}

void save_mask(const Mask& m, const fs::path& path) {
  std::vector<char> bytes(m.data().begin(), m.data().end());
  save_pair(path, m.dims(), m.spacing(), "u8", bytes);
}

Mask load_mask(const fs::path& path) {
  const Header h = read_header(path, "u8");
  const std::vector<char> bytes = read_payload(h, h.dims.voxels());
  std::vector<std::uint8_t> values(bytes.begin(), bytes.end());
  try {
    return Mask(h.dims, h.spacing, std::move(values));
  } catch (const FormatError& e) {
    throw FormatError(h.payload.string() + ": " + e.what());
  }
}

void save_field(const DisplacementField& u, const fs::path& path) {
  save_pair(path, u.dims(), Spacing{}, "f32le_vec3", encode_f32le(u.data()));
}

DisplacementField load_field(const fs::path& path) {
  const Header h = read_header(path, "f32le_vec3");
  std::vector<float> values = decode_f32le(read_payload(h, h.dims.voxels() * 12));
  require_finite(values, h.payload);
  return DisplacementField(h.dims, std::move(values));
}

void save_structure_set(const StructureSet& s, const fs::path& dir) {
  for (const Structure& st : s.structures()) {
    // The name becomes a file stem next to structures.json.
    if (st.name.empty() || st.name.find('/') != std::string::npos || st.name == "structures") {
      throw ConfigError("structure name '" + st.name + "' cannot be used as a file name");
    }
  }
  fs::create_directories(dir);
  Json names = Json::array();
  for (const Structure& st : s.structures()) {
    names.push_back(st.name);
    save_mask(st.mask, dir / st.name);
  }
  write_json_file(Json{{"dims", s.dims()}, {"spacing_mm", s.spacing()}, {"structures", names}},
                  dir / "structures.json");
}

StructureSet load_structure_set(const fs::path& dir) {
  const fs::path index = dir / "structures.json";
  const Json j = read_json_file(index);
  if (!j.contains("dims") || !j.contains("spacing_mm") || !j.contains("structures") ||
      !j.at("structures").is_array()) {
    throw FormatError(index.string() + ": expected dims, spacing_mm and a structures array");
  }
  Dims dims;
  Spacing spacing;
  try {
    dims = j.at("dims").get<Dims>();
    spacing = j.at("spacing_mm").get<Spacing>();
  } catch (const ConfigError& e) {
    throw FormatError(index.string() + ": " + e.what());
  }
  StructureSet s(dims, spacing);
  for (const Json& name : j.at("structures")) {
    if (!name.is_string()) throw FormatError(index.string() + ": structure names must be strings");
    const std::string n = name.get<std::string>();
    if (n.empty() || n.find('/') != std::string::npos || n == "structures") {
      throw FormatError(index.string() + ": bad structure name '" + n + "'");
    }
    s.add(n, load_mask(dir / n));
  }
  return s;
}

void save_checkpoint(const ModelParameters& p, const fs::path& path) {
  p.validate();
  const fs::path stem = header_stem(header_stem(path, ".ckpt.json"), ".ckpt");
  const fs::path raw = fs::path(stem.string() + ".ckpt.raw");
  const std::vector<char> bytes = encode_f32le(p.blob);
  write_bytes(raw, bytes);
  Json manifest{{"arch", p.arch},
                {"seed", p.seed},
                {"provenance", to_string(p.provenance)},
                {"parameter_count", p.blob.size()},
                {"blob_bytes", bytes.size()},
                {"dtype", "f32le"},
                {"data", raw.filename().string()}};
  write_json_file(manifest, fs::path(stem.string() + ".ckpt.json"));
}

ModelParameters load_checkpoint(const fs::path& path) {
  const fs::path stem = header_stem(header_stem(path, ".ckpt.json"), ".ckpt");
  const fs::path json_path = fs::path(stem.string() + ".ckpt.json");
  const Json j = read_json_file(json_path);
  const std::string where = json_path.string();
  for (const char* key : {"arch", "seed", "provenance", "blob_bytes", "data"}) {
    if (!j.contains(key)) throw FormatError(where + ": missing key '" + key + "'");
  }
  ModelParameters p;
  std::size_t blob_bytes = 0;
  try {
    from_json(j.at("arch"), p.arch);
    p.seed = j.at("seed").get<std::uint64_t>();
    p.provenance = parse_provenance(j.at("provenance").get<std::string>());
    blob_bytes = j.at("blob_bytes").get<std::size_t>();
  } catch (const Json::exception& e) {
    throw FormatError(where + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(where + ": " + e.what());
  }
  const std::size_t expected = p.arch.parameter_count() * 4;
  if (blob_bytes != expected) {
    throw FormatError(where + ": blob_bytes " + std::to_string(blob_bytes) + " does not match architecture (" +
                      std::to_string(expected) + ")");
  }
  const fs::path data = j.at("data").get<std::string>();
  if (data.has_parent_path()) throw FormatError(where + ": data must be a bare file name");
  const fs::path raw = json_path.parent_path() / data;
  const std::vector<char> bytes = read_bytes(raw);
  if (bytes.size() != blob_bytes) {
    throw FormatError(raw.string() + ": payload is " + std::to_string(bytes.size()) + " bytes, manifest says " +
                      std::to_string(blob_bytes));
  }
  p.blob = decode_f32le(bytes);
  require_finite(p.blob, raw);
  return p;
}

void save_optimizer_state(const OptimizerState& s, const fs::path& path) {
  const fs::path stem = header_stem(path);
  std::vector<char> bytes = encode_f32le(s.first_moment);
  const std::vector<char> second = encode_f32le(s.second_moment);
  bytes.insert(bytes.end(), second.begin(), second.end());
  const fs::path raw = fs::path(stem.string() + ".raw");
  write_bytes(raw, bytes);
  write_json_file(Json{{"adam", s.settings},
                       {"step_count", s.step_count},
                       {"parameter_count", s.first_moment.size()},
                       {"dtype", "f32le"},
                       {"data", raw.filename().string()}},
                  fs::path(stem.string() + ".json"));
}

OptimizerState load_optimizer_state(const fs::path& path) {
  const fs::path stem = header_stem(path);
  const fs::path json_path = fs::path(stem.string() + ".json");
  const Json j = read_json_file(json_path);
  OptimizerState s;
  std::size_t count = 0;
  fs::path data;
  try {
    from_json(j.at("adam"), s.settings);
    s.step_count = j.at("step_count").get<std::int64_t>();
    count = j.at("parameter_count").get<std::size_t>();
    data = j.at("data").get<std::string>();
  } catch (const Json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  if (data.has_parent_path()) throw FormatError(json_path.string() + ": data must be a bare file name");
  const fs::path raw = json_path.parent_path() / data;
  std::vector<char> bytes = read_bytes(raw);
  if (bytes.size() != count * 8) {
    throw FormatError(raw.string() + ": payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(count * 8));
  }
  std::vector<float> values = decode_f32le(bytes);
  require_finite(values, raw);
  s.first_moment.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(count));
  s.second_moment.assign(values.begin() + static_cast<std::ptrdiff_t>(count), values.end());
  return s;
}

}  // namespace ttoreg
