#include "ovsal/vattr.hpp"

#include <cmath>

#include "ovsal/errors.hpp"

namespace ovsal::vattr {

FrameStats frame_attributes(const Map& luma) {
  if (luma.v.empty()) throw InvalidInputError("frame_attributes: empty frame");
  double s1 = 0.0, s2 = 0.0;
  for (double v : luma.v) {
    s1 += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(luma.v.size());
  const double mean = s1 / n;
  double var = s2 / n - mean * mean;
  if (var < 0.0) var = 0.0;
  return {mean, std::sqrt(var)};
}

double si_frame(const Map& luma) {
  const int w = luma.shape.width, h = luma.shape.height;
  if (w < 3 || h < 3) return 0.0;
  double s1 = 0.0, s2 = 0.0;
  for (int r = 1; r < h - 1; ++r) {
    for (int c = 1; c < w - 1; ++c) {
      const double gx = luma.at(r - 1, c + 1) - luma.at(r - 1, c - 1) +
                        2.0 * (luma.at(r, c + 1) - luma.at(r, c - 1)) +
                        luma.at(r + 1, c + 1) - luma.at(r + 1, c - 1);
      const double gy = luma.at(r + 1, c - 1) - luma.at(r - 1, c - 1) +
                        2.0 * (luma.at(r + 1, c) - luma.at(r - 1, c)) +
                        luma.at(r + 1, c + 1) - luma.at(r - 1, c + 1);
      const double g = std::sqrt(gx * gx + gy * gy);
      s1 += g;
      s2 += g * g;
    }
  }
  const double n = static_cast<double>(w - 2) * (h - 2);
  const double mean = s1 / n;
  double var = s2 / n - mean * mean;
  if (var < 0.0) var = 0.0;
  return std::sqrt(var);
}

double si(const std::vector<Map>& frames, Exec exec) {
  if (frames.empty()) throw InvalidInputError("si: no frames");
  std::vector<double> per_frame(frames.size());
  parallel_for(
      frames.size(), [&](std::size_t i) { per_frame[i] = si_frame(frames[i]); }, exec);
  double mx = per_frame[0];
  for (double v : per_frame)
    if (v > mx) mx = v;
  return mx;
}

}  // namespace ovsal::vattr
