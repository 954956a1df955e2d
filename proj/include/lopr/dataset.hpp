#pragma once

#include <string>
#include <vector>

#include "lopr/ogm.hpp"
#include "lopr/tensor.hpp"

namespace lopr::ogm {

// Dataset file: little-endian, magic "LOGMDATA", u32 version, GridSpec
// header (u32 h, u32 w, f64 resolution), u32 sample count, then per-sample
// records. Grids are stored as float32 (values are float32-quantized at
// creation, so the round trip is bit-exact); trajectories and poses as
// float64; map channels as bytes.
inline constexpr char kDatasetMagic[8] = {'L', 'O', 'G', 'M', 'D', 'A', 'T', 'A'};
inline constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(const std::vector<SequenceSample>& samples, const std::string& path);
std::vector<SequenceSample> read_dataset(const std::string& path);
GridSpec read_dataset_spec(const std::string& path);

// Encoded-sequence cache: the dataset container layout with latent tensors
// in place of grids (magic "LOPRCODE"); conditioning inputs ride along so
// predictor training needs no other file.
inline constexpr char kCodeCacheMagic[8] = {'L', 'O', 'P', 'R', 'C', 'O', 'D', 'E'};
inline constexpr std::uint32_t kCodeCacheVersion = 1;

struct CodeSequence {
  std::uint64_t sequence_id = 0;
  int t_obs = 5;
  int t_fut = 15;
  int location_id = 0;
  int n_locations = scene::kNumArchetypes;
  int aug_id = 0;
  int n_augs = kNumAugmentations;
  std::vector<Tensor> codes;  // per step, latent [c,h,w]
  std::vector<MapRaster> maps;
  scene::PlannedTrajectory trajectory;
  std::vector<std::array<double, 3>> ego_poses;

  int t_total() const { return static_cast<int>(codes.size()); }
};

void write_code_cache(const std::vector<CodeSequence>& sequences, const std::string& path);
std::vector<CodeSequence> read_code_cache(const std::string& path);

}  // namespace lopr::ogm
