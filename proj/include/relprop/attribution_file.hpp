#pragma once

#include <filesystem>

#include "relprop/lrp.hpp"

namespace relprop {

/// Self-describing binary attribution container, little-endian throughout:
///   "ATTR"  magic
///   u8      format version (1)
///   u8      rank
///   u32[r]  extents
///   u32     class index
///   f64     output logit
///   f64[n]  relevance values, row-major
///   u16     digest length, followed by the config digest bytes
void write_attribution(const std::filesystem::path& path, const AttributionMap& map);

AttributionMap read_attribution(const std::filesystem::path& path);

} // namespace relprop
