#pragma once

#include <filesystem>

#include "malvis/model.hpp"

namespace malvis {

// Model parameter container, version 1. All integers little-endian:
//
//   "MVSN"                       4-byte magic
//   u32  version (= 1)
//   u32  spec_len
//   spec_len bytes               ModelSpec as "model.*" key-value text
//   u32  param_count
//   per parameter, in params() order:
//     u32  name_len, name bytes
//     u32  rank
//     u64  dims[rank]
//     f64  data[numel]           IEEE-754 doubles, little-endian
//
// Loading rebuilds the model from the embedded spec and overwrites every
// parameter; names and shapes must match the architecture exactly.
void save_snapshot(Model& model, const std::filesystem::path& path);
Model load_snapshot(const std::filesystem::path& path);

}  // namespace malvis
