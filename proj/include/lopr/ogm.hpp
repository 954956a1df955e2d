#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lopr/grid.hpp"
#include "lopr/scene.hpp"

namespace lopr::ogm {

// Inverse sensor model: log-odds increments per beam traversal, prior 0,
// accumulated sums clamped to [-6, 6] before conversion to probability.
inline constexpr double kLogOddsHit = 2.2;
inline constexpr double kLogOddsFree = -1.4;
inline constexpr double kLogOddsClamp = 6.0;

// Ternarization cutoffs, symmetric about the 0.5 unknown prior.
inline constexpr double kOccupiedThreshold = 0.65;
inline constexpr double kFreeThreshold = 0.35;

// Per beam, every cell the segment from the sensor to the return touches
// (grid supercover, closed-cell membership) gets a free update except the
// hit cell, which gets the occupied update; cells beyond the return stay
// untouched. The hit cell is the cell containing the return point, ties at
// boundaries resolving to the larger index. Sentinel beams mark free up to
// max_range.
OccupancyGrid scan_to_grid(const scene::LidarScan& scan, const GridSpec& spec);

// value > t_occ -> occupied, value < t_free -> free, else occluded.
TernaryGrid ternarize(const OccupancyGrid& grid, double t_occ = kOccupiedThreshold,
                      double t_free = kFreeThreshold);

// Embedding used by the idempotence property: occupied/free/occluded ->
// 1/0/0.5.
OccupancyGrid ternary_to_grid(const TernaryGrid& t, const GridSpec& spec);

enum class AugmentationKind : int {
  identity = 0,
  mirror_lr = 1,
  rotate_90 = 2,
  rotate_180 = 3,
  rotate_270 = 4,
  time_reverse = 5,
};
inline constexpr int kNumAugmentations = 6;

struct SequenceSample {
  std::uint64_t sequence_id = 0;
  int t_obs = 5;
  int t_fut = 15;
  int location_id = 0;
  int n_locations = scene::kNumArchetypes;
  int aug_id = 0;
  int n_augs = kNumAugmentations;
  std::vector<OccupancyGrid> grids;  // t_obs + t_fut frames at 10 Hz
  std::vector<MapRaster> maps;       // one per prediction window
  scene::PlannedTrajectory trajectory;
  std::vector<std::array<double, 3>> ego_poses;  // world (x, y, heading)

  int t_total() const { return static_cast<int>(grids.size()); }
};

// Spatial transforms act on every raster and on trajectory coordinates;
// time_reverse flips temporal order (velocities follow from the reversed
// ordering). Rotations require square grids.
SequenceSample apply_augmentation(const SequenceSample& sample, AugmentationKind kind);

// Spatial transform of one raster (time_reverse acts as identity here).
OccupancyGrid transform_grid(const OccupancyGrid& grid, AugmentationKind kind);

}  // namespace lopr::ogm
