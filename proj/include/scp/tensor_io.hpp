#pragma once

// SCPTENSR binary format:
//   8 bytes   magic "SCPTENSR"
//   u32 LE    rank
//   u32 LE    dims[rank]
//   f32 LE    values, row-major
//
// Checkpoints are a directory of such files plus `manifest.txt`, one
// `name<TAB>relative-path` line per tensor, in parameter order.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "scp/tensor.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const std::filesystem::path& dir, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& dir);

}  // namespace SCP_PRECISION_NS
}  // namespace scp
