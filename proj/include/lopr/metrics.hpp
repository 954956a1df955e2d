#pragma once

#include <vector>

#include "lopr/grid.hpp"
#include "lopr/ogm.hpp"

namespace lopr::metrics {

// Manhattan distance to the nearest cell of class `c`, computed by one
// multi-source BFS over the 4-connected grid (exact: no obstacles). -1 when
// the class is absent.
std::vector<int> distance_transform(const ogm::TernaryGrid& grid, ogm::Ternary c);

// Image Similarity picture distance: sum over the three classes of the
// average nearest-distance in both directions. Empty-class rule: a class
// absent from the source contributes 0; present in the source but absent
// from the target scores H+W per cell.
double is_distance(const ogm::TernaryGrid& m1, const ogm::TernaryGrid& m2);

struct ISReport {
  int n_sequences = 0;
  int n_samples = 1;
  bool best_of_n = false;
  double mean = 0.0;     // aggregate over the horizon, averaged over sequences
  double stderr_ = 0.0;  // sample std / sqrt(n) over sequences
  std::vector<double> per_step_mean;   // mean psi per prediction step
  std::vector<double> per_sequence;    // selected sample's horizon mean
  std::vector<int> best_sample_index;  // which sample won, per sequence
  std::vector<std::vector<double>> per_sequence_steps;  // selected sample's psi per step
};

// rollouts[sequence][sample][step], ground_truth[sequence][step]. Grids are
// ternarized here with the given thresholds. Best-of-N selects, per
// sequence, the sample minimizing the horizon-mean psi.
ISReport evaluate(const std::vector<std::vector<std::vector<ogm::OccupancyGrid>>>& rollouts,
                  const std::vector<std::vector<ogm::OccupancyGrid>>& ground_truth,
                  int n_samples = 10, double t_occ = ogm::kOccupiedThreshold,
                  double t_free = ogm::kFreeThreshold);

// Repeats the last observed frame across the prediction horizon.
std::vector<ogm::OccupancyGrid> fixed_frame_baseline(
    const std::vector<ogm::OccupancyGrid>& observed, int t_fut);

}  // namespace lopr::metrics
