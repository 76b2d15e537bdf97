#pragma once

#include <string>
#include <vector>

#include "flowmix/tape.hpp"

namespace flowmix {

/// FLXW1 checkpoints: magic, layer count, then per layer its name, shape and
/// little-endian f64 payload.
void save_checkpoint(const std::string& path, const std::vector<Parameter>& params);
std::vector<Parameter> load_checkpoint(const std::string& path);

}  // namespace flowmix
