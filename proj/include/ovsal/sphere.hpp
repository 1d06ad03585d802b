#pragma once
// Spherical coordinates and the equirectangular (ERP) pixel grid.
//
// Conventions (used everywhere in this library):
//   - latitude in degrees, [-90, 90], positive toward the north pole
//   - longitude in degrees, canonical range [0, 360), growing counterclockwise
//     when viewed from +z; at the poles longitude canonicalizes to 0
//   - world frame: z = up, longitude 0 along +x,
//     unit(lat, lon) = (cos lat cos lon, cos lat sin lon, sin lat)
//   - the video front (viewport center of an upright viewer) is longitude 180
//   - ERP pixel (row, col) covers lat [90 - (row+1)*180/h, 90 - row*180/h]
//     and lon [col*360/w, (col+1)*360/w); its center is
//     (90 - (row+0.5)*180/h, (col+0.5)*360/w)

#include <vector>

#include "ovsal/map.hpp"

namespace ovsal::sphere {

inline constexpr double kVideoFrontLonDeg = 180.0;

struct SphericalCoord {
  double lat_deg = 0.0;
  double lon_deg = 0.0;
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b);
Vec3 cross(Vec3 a, Vec3 b);
double norm(Vec3 a);
Vec3 normalized(Vec3 a);  // throws InvalidInputError on the zero vector

// Wraps longitude into [0, 360), validates latitude, forces lon = 0 at the
// exact poles.
SphericalCoord canonical(SphericalCoord c);

Vec3 latlon_to_vec(SphericalCoord c);

// Requires |v| within 1e-6 of 1; returns canonical coordinates.
SphericalCoord vec_to_latlon(Vec3 v);

// Great-circle angle in degrees, stable for both nearly-identical and
// nearly-antipodal directions.
double great_circle_deg(Vec3 a, Vec3 b);
double great_circle_deg(SphericalCoord a, SphericalCoord b);

struct PixelIndex {
  int row = 0;
  int col = 0;
};

// Containing pixel of a direction; rows clamp at the poles, columns wrap.
PixelIndex pixel_of(SphericalCoord c, GridShape g);
SphericalCoord center_of(int row, int col, GridShape g);

// Per-row area weight sin(90deg - lat_center(row)) = cos(lat_center(row)).
// Mirror rows about the equator get bitwise-equal weights by construction.
std::vector<double> sin_weight_map(GridShape g);

// Solid angle of one pixel in row `row`, steradians. Constant along a row;
// all pixels of a grid sum to 4*pi.
double solid_angle_sr(int row, GridShape g);

}  // namespace ovsal::sphere
