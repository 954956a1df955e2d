#include "lopr/metrics.hpp"

#include <cmath>
#include <cstdint>
#include <deque>

#include "lopr/errors.hpp"

namespace lopr::metrics {

std::vector<int> distance_transform(const ogm::TernaryGrid& grid, ogm::Ternary c) {
  const int h = grid.h, w = grid.w;
  std::vector<int> dist(static_cast<size_t>(h) * w, -1);
  std::deque<int> queue;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (grid.at(i, j) == c) {
        dist[static_cast<size_t>(i) * w + j] = 0;
        queue.push_back(i * w + j);
      }
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    const int i = cur / w, j = cur % w;
    const int d = dist[static_cast<size_t>(cur)];
    const int ni[4] = {i - 1, i + 1, i, i};
    const int nj[4] = {j, j, j - 1, j + 1};
    for (int k = 0; k < 4; ++k) {
      if (ni[k] < 0 || ni[k] >= h || nj[k] < 0 || nj[k] >= w) continue;
      const size_t idx = static_cast<size_t>(ni[k]) * w + nj[k];
      if (dist[idx] == -1) {
        dist[idx] = d + 1;
        queue.push_back(ni[k] * w + nj[k]);
      }
    }
  }
  return dist;
}

namespace {

// d(m1, m2, c): integer distance sums keep the BFS path and a brute-force
// oracle bit-identical after the single division.
double directed_class_distance(const ogm::TernaryGrid& m1, const ogm::TernaryGrid& m2,
                               ogm::Ternary c, const std::vector<int>& dt2) {
  std::int64_t total = 0;
  std::int64_t count = 0;
  const std::int64_t absent_cost = m1.h + m1.w;
  for (int i = 0; i < m1.h; ++i) {
    for (int j = 0; j < m1.w; ++j) {
      if (m1.at(i, j) != c) continue;
      ++count;
      const int d = dt2[static_cast<size_t>(i) * m1.w + j];
      total += d >= 0 ? d : absent_cost;
    }
  }
  if (count == 0) return 0.0;
  return static_cast<double>(total) / static_cast<double>(count);
}

double psi_with_transforms(const ogm::TernaryGrid& m1, const ogm::TernaryGrid& m2,
                           const std::vector<std::vector<int>>& dt1,
                           const std::vector<std::vector<int>>& dt2) {
  double acc = 0.0;
  for (int ci = 0; ci < 3; ++ci) {
    const auto c = static_cast<ogm::Ternary>(ci);
    acc += directed_class_distance(m1, m2, c, dt2[static_cast<size_t>(ci)]) +
           directed_class_distance(m2, m1, c, dt1[static_cast<size_t>(ci)]);
  }
  return acc;
}

std::vector<std::vector<int>> all_transforms(const ogm::TernaryGrid& g) {
  std::vector<std::vector<int>> out;
  out.reserve(3);
  for (int ci = 0; ci < 3; ++ci) {
    out.push_back(distance_transform(g, static_cast<ogm::Ternary>(ci)));
  }
  return out;
}

}  // namespace

double is_distance(const ogm::TernaryGrid& m1, const ogm::TernaryGrid& m2) {
  if (m1.h != m2.h || m1.w != m2.w) {
    throw ContractError("is_distance requires equal shapes, got " + std::to_string(m1.h) +
                        "x" + std::to_string(m1.w) + " vs " + std::to_string(m2.h) + "x" +
                        std::to_string(m2.w));
  }
  return psi_with_transforms(m1, m2, all_transforms(m1), all_transforms(m2));
}

ISReport evaluate(const std::vector<std::vector<std::vector<ogm::OccupancyGrid>>>& rollouts,
                  const std::vector<std::vector<ogm::OccupancyGrid>>& ground_truth,
                  int n_samples, double t_occ, double t_free) {
  if (rollouts.empty() || ground_truth.empty()) {
    throw ContractError("evaluate requires at least one sequence");
  }
  if (rollouts.size() != ground_truth.size()) {
    throw ContractError("evaluate: rollout and ground-truth sequence counts differ");
  }

  const size_t n_seq = rollouts.size();
  ISReport report;
  report.n_sequences = static_cast<int>(n_seq);
  report.best_of_n = n_samples > 1;

  size_t horizon = ground_truth[0].size();
  report.per_step_mean.assign(horizon, 0.0);

  for (size_t si = 0; si < n_seq; ++si) {
    const auto& samples = rollouts[si];
    const auto& gt = ground_truth[si];
    if (samples.empty()) throw ContractError("evaluate: sequence with zero samples");
    const int use = std::min<int>(n_samples, static_cast<int>(samples.size()));
    report.n_samples = use;

    // Ground-truth ternarization and transforms once per step.
    std::vector<ogm::TernaryGrid> gt_tern;
    std::vector<std::vector<std::vector<int>>> gt_dt;
    gt_tern.reserve(gt.size());
    for (const auto& g : gt) gt_tern.push_back(ogm::ternarize(g, t_occ, t_free));
    gt_dt.reserve(gt.size());
    for (const auto& t : gt_tern) gt_dt.push_back(all_transforms(t));

    double best_mean = 0.0;
    std::vector<double> best_steps;
    int best_idx = -1;
    for (int s = 0; s < use; ++s) {
      const auto& pred = samples[static_cast<size_t>(s)];
      if (pred.size() != gt.size()) {
        throw ContractError("evaluate: prediction/ground-truth length mismatch");
      }
      std::vector<double> steps(pred.size());
      double acc = 0.0;
      for (size_t t = 0; t < pred.size(); ++t) {
        const ogm::TernaryGrid pt = ogm::ternarize(pred[t], t_occ, t_free);
        steps[t] = psi_with_transforms(pt, gt_tern[t], all_transforms(pt), gt_dt[t]);
        acc += steps[t];
      }
      const double mean = acc / static_cast<double>(pred.size());
      if (best_idx < 0 || mean < best_mean) {
        best_mean = mean;
        best_steps = std::move(steps);
        best_idx = s;
      }
    }
    report.per_sequence.push_back(best_mean);
    report.best_sample_index.push_back(best_idx);
    for (size_t t = 0; t < best_steps.size() && t < horizon; ++t) {
      report.per_step_mean[t] += best_steps[t];
    }
    report.per_sequence_steps.push_back(std::move(best_steps));
  }

  double acc = 0.0;
  for (double v : report.per_sequence) acc += v;
  report.mean = acc / static_cast<double>(n_seq);
  double var = 0.0;
  for (double v : report.per_sequence) var += (v - report.mean) * (v - report.mean);
  report.stderr_ = n_seq > 1 ? std::sqrt(var / static_cast<double>(n_seq - 1)) /
                                   std::sqrt(static_cast<double>(n_seq))
                             : 0.0;
  for (double& v : report.per_step_mean) v /= static_cast<double>(n_seq);
  return report;
}

std::vector<ogm::OccupancyGrid> fixed_frame_baseline(
    const std::vector<ogm::OccupancyGrid>& observed, int t_fut) {
  if (observed.empty()) throw ContractError("fixed_frame_baseline requires >= 1 observation");
  return std::vector<ogm::OccupancyGrid>(static_cast<size_t>(t_fut), observed.back());
}

}  // namespace lopr::metrics
