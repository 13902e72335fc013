#pragma once

#include <string>

#include "stpam/model.hpp"

// Versioned binary checkpoint: "STPM" magic, format version, config block,
// the electrode table, then one record per parameter (name, rank, extents,
// little-endian float64 payload). Self-contained: load() rebuilds the model
// from the stored config and table.

namespace stpam::model {

void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace stpam::model
