#pragma once

#include <filesystem>

#include "deltar/nn/model.hpp"

namespace deltar::nn {

/// Single-file model snapshot: magic "DLTR", u32 LE version, u32 LE header
/// byte count, JSON header {config, named parameter shapes}, then float32 LE
/// parameter blobs in header order. Written via a temp file + rename so a
/// crash never leaves a truncated checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const DeltarModel& model);

/// Rebuilds the model from the stored config and loads every parameter.
DeltarModel load_checkpoint(const std::filesystem::path& path);

}  // namespace deltar::nn
