#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lopr/optim.hpp"
#include "lopr/tensor.hpp"

namespace lopr {

// Checkpoint file: little-endian, magic "LOPRCKPT", u32 version, u32 tensor
// count, then per tensor: u16 name length, name bytes, u8 rank, u32 extents,
// float64 payload (row-major).
inline constexpr char kCheckpointMagic[8] = {'L', 'O', 'P', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);
void save_checkpoint(const std::string& path, const ParamMap& params);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// Copies loaded values into an existing parameter set; every parameter must
// be present with matching shape.
void load_into(const std::string& path, ParamMap& params);

}  // namespace lopr
