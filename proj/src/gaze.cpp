#include "ovsal/gaze.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ovsal/errors.hpp"

namespace ovsal::gaze {

using sphere::SphericalCoord;
using sphere::Vec3;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg2Rad = kPi / 180.0;

struct Mat3 {
  double m[3][3];
  Vec3 operator*(Vec3 v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r.m[i][j] = m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j] + m[i][2] * o.m[2][j];
    return r;
  }
};

Mat3 rot_x(double deg) {
  double c = std::cos(deg * kDeg2Rad), s = std::sin(deg * kDeg2Rad);
  return {{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
}
Mat3 rot_y(double deg) {
  double c = std::cos(deg * kDeg2Rad), s = std::sin(deg * kDeg2Rad);
  return {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
}
Mat3 rot_z(double deg) {
  double c = std::cos(deg * kDeg2Rad), s = std::sin(deg * kDeg2Rad);
  return {{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
}

}  // namespace

Vec3 to_world(const GazeSample& s) {
  // Yaw is outermost (about world up), roll innermost (about head forward).
  // The fixed Rz(180) takes the zero-pose forward axis to longitude 180.
  Mat3 r = rot_z(180.0 + s.yaw_deg) * rot_y(-s.pitch_deg) * rot_x(s.roll_deg);
  return sphere::normalized(r * s.dir);
}

IvtResult extract_fixations(const std::vector<GazeSample>& samples,
                            const IvtParams& params) {
  IvtResult out;
  if (samples.size() < 2) {
    out.too_few_samples = true;
    return out;
  }
  const int n = static_cast<int>(samples.size());
  for (int i = 1; i < n; ++i)
    if (!(samples[i].t > samples[i - 1].t))
      throw InvalidInputError("gaze timestamps must be strictly increasing");

  std::vector<Vec3> world(samples.size());
  for (int i = 0; i < n; ++i) world[i] = to_world(samples[i]);

  std::vector<double> vel(samples.size());
  for (int i = 0; i < n; ++i) {
    int a = std::max(0, i - 1);
    int b = std::min(n - 1, i + 1);
    vel[i] = sphere::great_circle_deg(world[a], world[b]) / (samples[b].t - samples[a].t);
  }

  auto flush = [&](int first, int last) {  // inclusive candidate run
    double duration = samples[last].t - samples[first].t;
    if (duration < params.min_duration_s) return;
    Vec3 sum{};
    for (int i = first; i <= last; ++i) sum = sum + world[i];
    Fixation f;
    f.t_start = samples[first].t;
    f.t_end = samples[last].t;
    f.center = sphere::vec_to_latlon(sphere::normalized(sum));
    f.n_samples = last - first + 1;
    out.fixations.push_back(f);
  };

  int run_start = -1;
  for (int i = 0; i < n; ++i) {
    if (vel[i] < params.velocity_thresh_deg_s) {
      if (run_start < 0) run_start = i;
    } else if (run_start >= 0) {
      flush(run_start, i - 1);
      run_start = -1;
    }
  }
  if (run_start >= 0) flush(run_start, n - 1);
  return out;
}

FixationMap fixation_map(const std::vector<Fixation>& fixations, int frame_index,
                         double fps, GridShape grid) {
  if (fps <= 0.0) throw InvalidInputError("fps must be positive");
  if (frame_index < 0) throw InvalidInputError("frame index must be non-negative");
  double t = frame_index / fps;
  std::map<std::pair<int, int>, int> counts;
  for (const auto& f : fixations) {
    if (t < f.t_start || t > f.t_end) continue;
    auto p = sphere::pixel_of(f.center, grid);
    counts[{p.row, p.col}] += 1;
  }
  FixationMap fm;
  fm.shape = grid;
  fm.pts.reserve(counts.size());
  for (const auto& [rc, c] : counts) fm.pts.push_back({rc.first, rc.second, c});
  return fm;
}

namespace {

// One splat source: precomputed geometry for the window scan.
struct Splat {
  Vec3 dir;
  double lat_deg;
  double sin_lat, cos_lat;
  double count;
  int col;
};

}  // namespace

Map smooth(const FixationMap& fm, double sigma_deg, Exec exec) {
  if (sigma_deg <= 0.0) throw InvalidInputError("sigma must be positive");
  const GridShape g = fm.shape;
  Map out(g);
  if (fm.pts.empty()) return out;

  const double cutoff = 3.0 * sigma_deg;
  const double cos_cutoff = std::cos(std::min(cutoff, 180.0) * kDeg2Rad);
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma_deg * sigma_deg);

  std::vector<Splat> splats;
  splats.reserve(fm.pts.size());
  for (const auto& p : fm.pts) {
    SphericalCoord c = sphere::center_of(p.row, p.col, g);
    Splat s;
    s.dir = sphere::latlon_to_vec(c);
    s.lat_deg = c.lat_deg;
    s.sin_lat = std::sin(c.lat_deg * kDeg2Rad);
    s.cos_lat = std::cos(c.lat_deg * kDeg2Rad);
    s.count = p.count;
    s.col = p.col;
    splats.push_back(s);
  }

  // Rows are independent outputs, so the parallel and serial variants are
  // bitwise identical; within a pixel, contributions accumulate in fm.pts
  // order, matching smooth_reference.
  parallel_for(
      g.height,
      [&](std::int64_t row) {
        SphericalCoord rc = sphere::center_of(static_cast<int>(row), 0, g);
        double lat = rc.lat_deg;
        double sin_lat = std::sin(lat * kDeg2Rad);
        double cos_lat = std::cos(lat * kDeg2Rad);
        for (const auto& s : splats) {
          // Conservative bounds with slack; the exact great-circle check below
          // (same expression as smooth_reference) decides inclusion, so slack
          // costs a few wasted distance evaluations, never a wrong result.
          if (std::abs(lat - s.lat_deg) > cutoff + 1e-9) continue;
          // Longitude window: cos(dlon) >= (cos(cutoff) - sin a sin b)/(cos a cos b).
          int half_w = g.width;  // full row by default
          double denom = cos_lat * s.cos_lat;
          if (denom > 1e-15) {
            double rhs = (cos_cutoff - sin_lat * s.sin_lat) / denom;
            if (rhs > 1.0 + 1e-6) continue;  // row out of reach
            if (rhs > -1.0) {
              double dlon_max = std::acos(std::min(rhs, 1.0)) / kDeg2Rad;
              half_w = static_cast<int>(std::ceil(dlon_max / 360.0 * g.width)) + 1;
            }
          }
          int lo = s.col - half_w;
          int hi = s.col + half_w;
          if (hi - lo + 1 >= g.width) {
            lo = 0;
            hi = g.width - 1;
          }
          for (int cc = lo; cc <= hi; ++cc) {
            int col = ((cc % g.width) + g.width) % g.width;
            SphericalCoord pc = sphere::center_of(static_cast<int>(row), col, g);
            double d = sphere::great_circle_deg(sphere::latlon_to_vec(pc), s.dir);
            if (d > cutoff) continue;
            out.at(static_cast<int>(row), col) += s.count * std::exp(-d * d * inv_two_sigma2);
          }
        }
      },
      exec);
  return out;
}

Map smooth_reference(const FixationMap& fm, double sigma_deg) {
  if (sigma_deg <= 0.0) throw InvalidInputError("sigma must be positive");
  const GridShape g = fm.shape;
  Map out(g);
  const double cutoff = 3.0 * sigma_deg;
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma_deg * sigma_deg);
  std::vector<Vec3> dirs;
  for (const auto& p : fm.pts)
    dirs.push_back(sphere::latlon_to_vec(sphere::center_of(p.row, p.col, g)));
  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) {
      Vec3 pd = sphere::latlon_to_vec(sphere::center_of(row, col, g));
      double acc = 0.0;
      for (std::size_t i = 0; i < fm.pts.size(); ++i) {
        double d = sphere::great_circle_deg(pd, dirs[i]);
        if (d > cutoff) continue;
        acc += fm.pts[i].count * std::exp(-d * d * inv_two_sigma2);
      }
      out.at(row, col) = acc;
    }
  }
  return out;
}

namespace {

Histogram angle_histogram(const std::vector<Fixation>& fixations, int n_bins,
                          double lo, double hi, bool use_lat) {
  if (n_bins <= 0) throw InvalidInputError("n_bins must be positive");
  Histogram h;
  h.edges.resize(n_bins + 1);
  for (int i = 0; i <= n_bins; ++i) h.edges[i] = lo + (hi - lo) * i / n_bins;
  h.counts.assign(n_bins, 0);
  for (const auto& f : fixations) {
    double a = use_lat ? f.center.lat_deg : sphere::canonical(f.center).lon_deg;
    int bin = static_cast<int>(std::floor((a - lo) / (hi - lo) * n_bins));
    bin = std::clamp(bin, 0, n_bins - 1);
    h.counts[bin]++;
  }
  return h;
}

}  // namespace

Histogram lat_distribution(const std::vector<Fixation>& fixations, int n_bins) {
  return angle_histogram(fixations, n_bins, -90.0, 90.0, true);
}

Histogram lon_distribution(const std::vector<Fixation>& fixations, int n_bins) {
  return angle_histogram(fixations, n_bins, 0.0, 360.0, false);
}

}  // namespace ovsal::gaze
