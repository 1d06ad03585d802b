#pragma once
// Dense equirectangular value maps and sparse fixation count maps. Row 0 is
// the top of the panorama (latitude +90 side), column 0 is longitude 0.

#include <cstdint>
#include <vector>

namespace ovsal {

struct GridShape {
  int width = 0;
  int height = 0;

  bool operator==(const GridShape&) const = default;
  std::int64_t npix() const { return static_cast<std::int64_t>(width) * height; }
};

struct Map {
  GridShape shape;
  std::vector<double> v;  // row-major, shape.npix() entries

  Map() = default;
  explicit Map(GridShape s) : shape(s), v(static_cast<std::size_t>(s.npix()), 0.0) {}

  double& at(int row, int col) { return v[static_cast<std::size_t>(row) * shape.width + col]; }
  double at(int row, int col) const { return v[static_cast<std::size_t>(row) * shape.width + col]; }
};

struct FixPoint {
  int row = 0;
  int col = 0;
  int count = 1;
};

// Sparse per-frame fixation counts; pts hold unique pixels sorted by
// (row, col) so iteration order is deterministic.
struct FixationMap {
  GridShape shape;
  std::vector<FixPoint> pts;

  int total_count() const {
    int n = 0;
    for (const auto& p : pts) n += p.count;
    return n;
  }
};

}  // namespace ovsal
