#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lopr/errors.hpp"

namespace lopr::ogm {

// Ego-centric grid frame: +x forward, +y left; the ego sits at the grid
// center. Row 0 is the far forward edge, column 0 the far left edge.
// floor() cell assignment puts points on a cell boundary into the cell with
// the larger index.
struct GridSpec {
  int h = 128;
  int w = 128;
  double resolution = 1.0 / 3.0;  // meters per cell

  double half_h() const { return 0.5 * h * resolution; }
  double half_w() const { return 0.5 * w * resolution; }

  bool operator==(const GridSpec& o) const {
    return h == o.h && w == o.w && resolution == o.resolution;
  }
};

inline bool cell_of(const GridSpec& spec, double ex, double ey, int& i, int& j) {
  i = static_cast<int>(std::floor((spec.half_h() - ex) / spec.resolution));
  j = static_cast<int>(std::floor((spec.half_w() - ey) / spec.resolution));
  return i >= 0 && i < spec.h && j >= 0 && j < spec.w;
}

inline double cell_center_x(const GridSpec& spec, int i) {
  return spec.half_h() - (i + 0.5) * spec.resolution;
}
inline double cell_center_y(const GridSpec& spec, int j) {
  return spec.half_w() - (j + 0.5) * spec.resolution;
}

// Probability-of-occupancy raster; 0.5 encodes unknown/occluded. Values are
// quantized through float32 at creation so dataset round trips are
// bit-exact.
struct OccupancyGrid {
  GridSpec spec;
  std::vector<double> values;  // h*w, row-major

  OccupancyGrid() = default;
  explicit OccupancyGrid(const GridSpec& s, double fill = 0.5)
      : spec(s), values(static_cast<size_t>(s.h) * s.w, fill) {}

  double at(int i, int j) const { return values[static_cast<size_t>(i) * spec.w + j]; }
  double& at(int i, int j) { return values[static_cast<size_t>(i) * spec.w + j]; }
};

enum class Ternary : std::uint8_t { Free = 0, Occluded = 1, Occupied = 2 };

struct TernaryGrid {
  int h = 0, w = 0;
  std::vector<Ternary> values;

  TernaryGrid() = default;
  TernaryGrid(int hh, int ww) : h(hh), w(ww), values(static_cast<size_t>(hh) * ww, Ternary::Occluded) {}
  Ternary at(int i, int j) const { return values[static_cast<size_t>(i) * w + j]; }
  Ternary& at(int i, int j) { return values[static_cast<size_t>(i) * w + j]; }
  bool operator==(const TernaryGrid& o) const { return h == o.h && w == o.w && values == o.values; }
};

// Binary map channels in the ego frame: 0 drivable area, 1 stop lines,
// 2 pedestrian crossings. Same spatial resolution as the occupancy grid.
struct MapRaster {
  int h = 0, w = 0;
  std::vector<std::uint8_t> data;  // 3*h*w

  MapRaster() = default;
  MapRaster(int hh, int ww) : h(hh), w(ww), data(static_cast<size_t>(3) * hh * ww, 0) {}
  std::uint8_t at(int c, int i, int j) const {
    return data[(static_cast<size_t>(c) * h + i) * w + j];
  }
  std::uint8_t& at(int c, int i, int j) {
    return data[(static_cast<size_t>(c) * h + i) * w + j];
  }
};

// Binary PGM (P5, maxval 255), value = round(p*255).
void write_pgm(const OccupancyGrid& grid, const std::string& path);
void write_pgm(const std::vector<double>& values, int h, int w, const std::string& path);

}  // namespace lopr::ogm
