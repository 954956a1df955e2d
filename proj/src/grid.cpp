#include "lopr/grid.hpp"

#include <cmath>
#include <fstream>

namespace lopr::ogm {

void write_pgm(const std::vector<double>& values, int h, int w, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os << "P5\n" << w << " " << h << "\n255\n";
  for (double v : values) {
    const int byte = static_cast<int>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0));
    os.put(static_cast<char>(byte));
  }
  if (!os) throw Error("write to " + path + " failed");
}

void write_pgm(const OccupancyGrid& grid, const std::string& path) {
  write_pgm(grid.values, grid.spec.h, grid.spec.w, path);
}

}  // namespace lopr::ogm
