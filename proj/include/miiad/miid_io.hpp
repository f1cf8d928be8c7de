#pragma once

#include <string>

#include "miiad/tensor.hpp"

namespace miiad {

// Binary tensor container used for dataset payloads, checkpoints, and
// segmentation maps. Layout, all little-endian:
//   bytes 0-3   magic "MIID"
//   bytes 4-7   version (u32, currently 1)
//   bytes 8-11  rank (u32)
//   then rank   dims (u32 each)
//   then        float32 payload, row-major
void write_miid(const std::string& path, const Tensor& t);
Tensor read_miid(const std::string& path);

}  // namespace miiad
