#include "lopr/ogm.hpp"

#include <cmath>

namespace lopr::ogm {

namespace {

// Closed-box Liang-Barsky: does the segment p0->p1 touch [x0,x1]x[y0,y1]?
bool segment_hits_box(double p0x, double p0y, double p1x, double p1y, double x0,
                      double x1, double y0, double y1) {
  double t0 = 0.0, t1 = 1.0;
  const double d[2] = {p1x - p0x, p1y - p0y};
  const double p[2] = {p0x, p0y};
  const double lo[2] = {x0, y0};
  const double hi[2] = {x1, y1};
  for (int ax = 0; ax < 2; ++ax) {
    if (d[ax] == 0.0) {
      if (p[ax] < lo[ax] || p[ax] > hi[ax]) return false;
      continue;
    }
    double ta = (lo[ax] - p[ax]) / d[ax];
    double tb = (hi[ax] - p[ax]) / d[ax];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

struct CellBounds {
  // Integer-anchored bounds so a cell and its mirror have exactly negated
  // extents (fl((-n)*res) == -fl(n*res)).
  static double x_hi(const GridSpec& s, int i) { return (s.h / 2 - i) * s.resolution; }
  static double x_lo(const GridSpec& s, int i) { return (s.h / 2 - i - 1) * s.resolution; }
  static double y_hi(const GridSpec& s, int j) { return (s.w / 2 - j) * s.resolution; }
  static double y_lo(const GridSpec& s, int j) { return (s.w / 2 - j - 1) * s.resolution; }
};

}  // namespace

OccupancyGrid scan_to_grid(const scene::LidarScan& scan, const GridSpec& spec) {
  std::vector<double> log_odds(static_cast<size_t>(spec.h) * spec.w, 0.0);
  std::vector<int> stamp(static_cast<size_t>(spec.h) * spec.w, -1);

  const double step = 0.45 * spec.resolution;
  for (int b = 0; b < scan.n_beams; ++b) {
    const double angle = scan.angles[static_cast<size_t>(b)];
    const double r = scan.ranges[static_cast<size_t>(b)];
    const bool hit = std::isfinite(r);
    const double reach = hit ? r : scan.max_range;
    const double ex = reach * std::cos(angle);
    const double ey = reach * std::sin(angle);

    int hit_i = -1, hit_j = -1;
    if (hit) {
      if (!cell_of(spec, ex, ey, hit_i, hit_j)) {
        hit_i = hit_j = -1;  // return lands outside the grid
      }
    }

    // Candidate cells from dense sampling, then the exact closed-cell test.
    const int n_samples = std::max(1, static_cast<int>(std::ceil(reach / step)));
    for (int k = 0; k <= n_samples; ++k) {
      const double t = std::min(1.0, static_cast<double>(k) / n_samples);
      const double sx = t * ex;
      const double sy = t * ey;
      int ci, cj;
      cell_of(spec, sx, sy, ci, cj);
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          const int i = ci + di, j = cj + dj;
          if (i < 0 || i >= spec.h || j < 0 || j >= spec.w) continue;
          const size_t idx = static_cast<size_t>(i) * spec.w + j;
          if (stamp[idx] == b) continue;
          stamp[idx] = b;
          if (!segment_hits_box(0.0, 0.0, ex, ey, CellBounds::x_lo(spec, i),
                                CellBounds::x_hi(spec, i), CellBounds::y_lo(spec, j),
                                CellBounds::y_hi(spec, j))) {
            continue;
          }
          if (i == hit_i && j == hit_j) {
            log_odds[idx] += kLogOddsHit;
          } else {
            log_odds[idx] += kLogOddsFree;
          }
        }
      }
    }
  }

  OccupancyGrid grid(spec);
  for (size_t i = 0; i < log_odds.size(); ++i) {
    const double l = std::min(kLogOddsClamp, std::max(-kLogOddsClamp, log_odds[i]));
    const double p = 1.0 / (1.0 + std::exp(-l));
    grid.values[i] = static_cast<double>(static_cast<float>(p));
  }
  return grid;
}

TernaryGrid ternarize(const OccupancyGrid& grid, double t_occ, double t_free) {
  if (!(0.0 <= t_free && t_free < t_occ && t_occ <= 1.0)) {
    throw ContractError("ternarize requires 0 <= t_free < t_occ <= 1, got t_occ=" +
                        std::to_string(t_occ) + " t_free=" + std::to_string(t_free));
  }
  TernaryGrid out(grid.spec.h, grid.spec.w);
  for (size_t i = 0; i < grid.values.size(); ++i) {
    const double v = grid.values[i];
    out.values[i] = v > t_occ   ? Ternary::Occupied
                    : v < t_free ? Ternary::Free
                                 : Ternary::Occluded;
  }
  return out;
}

OccupancyGrid ternary_to_grid(const TernaryGrid& t, const GridSpec& spec) {
  OccupancyGrid g(spec);
  for (size_t i = 0; i < t.values.size(); ++i) {
    switch (t.values[i]) {
      case Ternary::Occupied: g.values[i] = 1.0; break;
      case Ternary::Free: g.values[i] = 0.0; break;
      case Ternary::Occluded: g.values[i] = 0.5; break;
    }
  }
  return g;
}

namespace {

enum class SpatialMap { id, mirror, rot90, rot180, rot270 };

SpatialMap spatial_of(AugmentationKind k) {
  switch (k) {
    case AugmentationKind::mirror_lr: return SpatialMap::mirror;
    case AugmentationKind::rotate_90: return SpatialMap::rot90;
    case AugmentationKind::rotate_180: return SpatialMap::rot180;
    case AugmentationKind::rotate_270: return SpatialMap::rot270;
    default: return SpatialMap::id;
  }
}

// Source index for destination (i, j) under each raster transform.
void source_index(SpatialMap m, int h, int w, int i, int j, int& si, int& sj) {
  switch (m) {
    case SpatialMap::id: si = i; sj = j; break;
    case SpatialMap::mirror: si = i; sj = w - 1 - j; break;
    case SpatialMap::rot90: si = j; sj = h - 1 - i; break;
    case SpatialMap::rot180: si = h - 1 - i; sj = w - 1 - j; break;
    case SpatialMap::rot270: si = w - 1 - j; sj = i; break;
  }
}

void transform_point(SpatialMap m, double x, double y, double& ox, double& oy) {
  switch (m) {
    case SpatialMap::id: ox = x; oy = y; break;
    case SpatialMap::mirror: ox = x; oy = -y; break;
    case SpatialMap::rot90: ox = -y; oy = x; break;
    case SpatialMap::rot180: ox = -x; oy = -y; break;
    case SpatialMap::rot270: ox = y; oy = -x; break;
  }
}

double heading_shift(SpatialMap m) {
  switch (m) {
    case SpatialMap::rot90: return M_PI / 2.0;
    case SpatialMap::rot180: return M_PI;
    case SpatialMap::rot270: return -M_PI / 2.0;
    default: return 0.0;
  }
}

}  // namespace

OccupancyGrid transform_grid(const OccupancyGrid& grid, AugmentationKind kind) {
  const SpatialMap m = spatial_of(kind);
  if (m == SpatialMap::id) return grid;
  if (m != SpatialMap::mirror && grid.spec.h != grid.spec.w) {
    throw ContractError("rotation augmentation requires square grids");
  }
  OccupancyGrid out(grid.spec);
  for (int i = 0; i < grid.spec.h; ++i)
    for (int j = 0; j < grid.spec.w; ++j) {
      int si, sj;
      source_index(m, grid.spec.h, grid.spec.w, i, j, si, sj);
      out.at(i, j) = grid.at(si, sj);
    }
  return out;
}

SequenceSample apply_augmentation(const SequenceSample& sample, AugmentationKind kind) {
  SequenceSample out = sample;
  out.aug_id = static_cast<int>(kind);

  const SpatialMap m = spatial_of(kind);
  if (m == SpatialMap::rot90 || m == SpatialMap::rot270 || m == SpatialMap::rot180) {
    for (const OccupancyGrid& g : sample.grids) {
      if (g.spec.h != g.spec.w) throw ContractError("rotation augmentation requires square grids");
    }
  }

  if (m != SpatialMap::id) {
    for (size_t t = 0; t < sample.grids.size(); ++t) {
      const OccupancyGrid& src = sample.grids[t];
      OccupancyGrid& dst = out.grids[t];
      for (int i = 0; i < src.spec.h; ++i)
        for (int j = 0; j < src.spec.w; ++j) {
          int si, sj;
          source_index(m, src.spec.h, src.spec.w, i, j, si, sj);
          dst.at(i, j) = src.at(si, sj);
        }
    }
    for (size_t t = 0; t < sample.maps.size(); ++t) {
      const MapRaster& src = sample.maps[t];
      MapRaster& dst = out.maps[t];
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < src.h; ++i)
          for (int j = 0; j < src.w; ++j) {
            int si, sj;
            source_index(m, src.h, src.w, i, j, si, sj);
            dst.at(c, i, j) = src.at(c, si, sj);
          }
    }
    for (auto& p : out.trajectory.positions) {
      transform_point(m, p[0], p[1], p[0], p[1]);
    }
    const double hs = heading_shift(m);
    for (auto& ep : out.ego_poses) {
      transform_point(m, ep[0], ep[1], ep[0], ep[1]);
      ep[2] = m == SpatialMap::mirror ? -ep[2] : ep[2] + hs;
    }
  }

  if (kind == AugmentationKind::time_reverse) {
    std::reverse(out.grids.begin(), out.grids.end());
    std::reverse(out.ego_poses.begin(), out.ego_poses.end());
    const size_t n = sample.trajectory.positions.size();
    out.trajectory.positions.resize(n);
    if (n > 0) {
      const auto last = sample.trajectory.positions[n - 1];
      for (size_t k = 0; k < n; ++k) {
        const auto& p = sample.trajectory.positions[n - 1 - k];
        out.trajectory.positions[k] = {p[0] - last[0], p[1] - last[1], p[2] - last[2]};
      }
    }
  }

  return out;
}

}  // namespace lopr::ogm
