#pragma once
// Gaze processing: head-pose compensation, I-VT fixation extraction,
// spherical Gaussian smoothing into saliency maps, and fixation histograms.
//
// Head pose convention: the head-local frame has x = forward, y = left,
// z = up. With zero Euler angles the head faces the video front
// (longitude 180). Yaw rotates about the world up axis (positive turns the
// head toward increasing longitude), pitch then tilts about the head's left
// axis (positive looks up), roll finally spins about the head's forward axis.

#include <vector>

#include "ovsal/map.hpp"
#include "ovsal/parallel.hpp"
#include "ovsal/sphere.hpp"

namespace ovsal::gaze {

struct GazeSample {
  double t = 0.0;          // seconds
  sphere::Vec3 dir;        // head-local gaze direction, unit length
  double pitch_deg = 0.0;
  double yaw_deg = 0.0;
  double roll_deg = 0.0;
};

struct Fixation {
  double t_start = 0.0;
  double t_end = 0.0;
  sphere::SphericalCoord center;
  int n_samples = 0;
};

struct IvtParams {
  double velocity_thresh_deg_s = 75.0;
  double min_duration_s = 0.100;
};

// World-frame gaze direction of one sample.
sphere::Vec3 to_world(const GazeSample& s);

struct IvtResult {
  std::vector<Fixation> fixations;
  bool too_few_samples = false;  // fewer than 2 samples: no velocities exist
};

// I-VT: angular velocity by central differences on world-frame directions
// (one-sided at the ends), samples below the velocity threshold cluster into
// fixation candidates, clusters shorter than min_duration_s are discarded.
// The center is the normalized mean of the member directions. Timestamps must
// be strictly increasing.
IvtResult extract_fixations(const std::vector<GazeSample>& samples,
                            const IvtParams& params = {});

// Counts per pixel of the fixations active at frame_index / fps (a fixation
// is active when that timestamp lies in [t_start, t_end]).
FixationMap fixation_map(const std::vector<Fixation>& fixations, int frame_index,
                         double fps, GridShape grid);

// Spherical Gaussian splat: value(p) = sum over entries of
// count * exp(-d^2 / (2 sigma^2)) with d the great-circle distance in degrees
// between the pixel center and the entry's pixel center. Contributions beyond
// 3 sigma are exactly 0. No normalization. The production kernel restricts
// work to the 3-sigma window of each entry and parallelizes over rows;
// smooth_reference is the full-scan serial form kept as the test oracle.
// Both produce bitwise-identical maps.
Map smooth(const FixationMap& fm, double sigma_deg = 3.34,
           Exec exec = Exec::parallel);
Map smooth_reference(const FixationMap& fm, double sigma_deg = 3.34);

struct Histogram {
  std::vector<double> edges;  // n_bins + 1 ascending
  std::vector<int> counts;    // n_bins
};

// Equal-angle histograms of fixation centers; latitude over [-90, 90],
// longitude over [0, 360).
Histogram lat_distribution(const std::vector<Fixation>& fixations, int n_bins);
Histogram lon_distribution(const std::vector<Fixation>& fixations, int n_bins);

}  // namespace ovsal::gaze
