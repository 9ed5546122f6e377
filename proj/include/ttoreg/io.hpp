#pragma once

#include <filesystem>

#include "ttoreg/field.hpp"
#include "ttoreg/network.hpp"
#include "ttoreg/optim.hpp"
#include "ttoreg/volume.hpp"

namespace ttoreg {

namespace fs = std::filesystem;

// File pairs: `<stem>.json` header + `<stem>.raw` little-endian payload,
// voxel index x + nx*(y + ny*z), no padding. Header keys: dims,
// spacing_mm, dtype ("f32le", "u8" or "f32le_vec3") and data (payload file
// name, resolved next to the header). Paths may be given with or without
// the .json suffix.

void save_volume(const Volume& v, const fs::path& path);
Volume load_volume(const fs::path& path);

void save_mask(const Mask& m, const fs::path& path);
Mask load_mask(const fs::path& path);

void save_field(const DisplacementField& u, const fs::path& path);
/// Fields carry no spacing of their own; the header stores unit spacing.
DisplacementField load_field(const fs::path& path);

/// Directory with `structures.json` (ordered names plus geometry) and one
/// mask pair per structure.
void save_structure_set(const StructureSet& s, const fs::path& dir);
StructureSet load_structure_set(const fs::path& dir);

/// `<stem>.ckpt.json` manifest + `<stem>.ckpt.raw` float32 blob.
void save_checkpoint(const ModelParameters& p, const fs::path& path);
ModelParameters load_checkpoint(const fs::path& path);

/// Adam moments and step count, for resumable training.
void save_optimizer_state(const OptimizerState& s, const fs::path& path);
OptimizerState load_optimizer_state(const fs::path& path);

/// Strips a trailing ".json" / ".ckpt.json" to get the common stem.
fs::path header_stem(const fs::path& path, const char* suffix = ".json");

}  // namespace ttoreg
