#include "ovsal/sphere.hpp"

#include <algorithm>
#include <cmath>

#include "ovsal/errors.hpp"

namespace ovsal::sphere {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg2Rad = kPi / 180.0;
constexpr double kRad2Deg = 180.0 / kPi;
}  // namespace

double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(Vec3 a) {
  double n = norm(a);
  if (n == 0.0) throw InvalidInputError("cannot normalize the zero vector");
  return {a.x / n, a.y / n, a.z / n};
}

SphericalCoord canonical(SphericalCoord c) {
  if (!(c.lat_deg >= -90.0 && c.lat_deg <= 90.0))
    throw InvalidInputError("latitude out of [-90, 90]");
  double lon = std::fmod(c.lon_deg, 360.0);
  if (lon < 0.0) lon += 360.0;
  if (lon == 360.0) lon = 0.0;  // fmod can round up for tiny negatives
  if (c.lat_deg == 90.0 || c.lat_deg == -90.0) lon = 0.0;
  return {c.lat_deg, lon};
}

Vec3 latlon_to_vec(SphericalCoord c) {
  c = canonical(c);
  double lat = c.lat_deg * kDeg2Rad;
  double lon = c.lon_deg * kDeg2Rad;
  double cl = std::cos(lat);
  return {cl * std::cos(lon), cl * std::sin(lon), std::sin(lat)};
}

SphericalCoord vec_to_latlon(Vec3 v) {
  double n = norm(v);
  if (std::abs(n - 1.0) > 1e-6) throw InvalidInputError("direction is not unit length");
  double z = std::clamp(v.z / n, -1.0, 1.0);
  double lat = std::asin(z) * kRad2Deg;
  if (v.x == 0.0 && v.y == 0.0) return {z > 0.0 ? 90.0 : -90.0, 0.0};
  double lon = std::atan2(v.y, v.x) * kRad2Deg;
  if (lon < 0.0) lon += 360.0;
  if (lon == 360.0) lon = 0.0;
  return canonical({lat, lon});
}

double great_circle_deg(Vec3 a, Vec3 b) {
  // atan2(|a x b|, a . b) is well-conditioned at 0 and at 180 degrees, where
  // acos(dot) loses most of its precision.
  return std::atan2(norm(cross(a, b)), dot(a, b)) * kRad2Deg;
}

double great_circle_deg(SphericalCoord a, SphericalCoord b) {
  return great_circle_deg(latlon_to_vec(a), latlon_to_vec(b));
}

PixelIndex pixel_of(SphericalCoord c, GridShape g) {
  if (g.width <= 0 || g.height <= 0) throw InvalidInputError("empty grid");
  c = canonical(c);
  int row = static_cast<int>(std::floor((90.0 - c.lat_deg) / 180.0 * g.height));
  row = std::clamp(row, 0, g.height - 1);
  int col = static_cast<int>(std::floor(c.lon_deg / 360.0 * g.width));
  col = std::clamp(col, 0, g.width - 1);  // lon is already in [0, 360)
  return {row, col};
}

SphericalCoord center_of(int row, int col, GridShape g) {
  if (g.width <= 0 || g.height <= 0) throw InvalidInputError("empty grid");
  if (row < 0 || row >= g.height || col < 0 || col >= g.width)
    throw InvalidInputError("pixel index out of range");
  double lat = 90.0 - (row + 0.5) / g.height * 180.0;
  double lon = (col + 0.5) / g.width * 360.0;
  return {lat, lon};
}

std::vector<double> sin_weight_map(GridShape g) {
  if (g.width <= 0 || g.height <= 0) throw InvalidInputError("empty grid");
  std::vector<double> w(static_cast<std::size_t>(g.height));
  // Fill the top half and mirror it so equator-symmetric rows are bitwise
  // equal regardless of rounding in the latitude expression.
  int half = (g.height + 1) / 2;
  for (int row = 0; row < half; ++row) {
    double lat = 90.0 - (row + 0.5) / g.height * 180.0;
    w[row] = std::sin((90.0 - lat) * kDeg2Rad);
    w[g.height - 1 - row] = w[row];
  }
  return w;
}

double solid_angle_sr(int row, GridShape g) {
  if (g.width <= 0 || g.height <= 0) throw InvalidInputError("empty grid");
  if (row < 0 || row >= g.height) throw InvalidInputError("row out of range");
  double top = (90.0 - row * 180.0 / g.height) * kDeg2Rad;
  double bottom = (90.0 - (row + 1) * 180.0 / g.height) * kDeg2Rad;
  return (2.0 * kPi / g.width) * (std::sin(top) - std::sin(bottom));
}

}  // namespace ovsal::sphere
