#pragma once
// Visual attributes of luma frames: brightness, contrast and spatial
// information (SI). Luma grids reuse Map; values are expected in [0, 255]
// (Rec.601 luma, see io::to_luma).

#include <vector>

#include "ovsal/map.hpp"
#include "ovsal/parallel.hpp"

namespace ovsal::vattr {

struct FrameStats {
  double brightness = 0.0;  // mean luma
  double contrast = 0.0;    // population std of luma
};

// Computed from first and second moments, so integer-valued luma gives
// permutation-exact results.
FrameStats frame_attributes(const Map& luma);

// Spatial std of the Sobel gradient magnitude over interior pixels (1-pixel
// border excluded). Frames smaller than 3x3 have no interior and score 0.
double si_frame(const Map& luma);

// max over frames of si_frame
double si(const std::vector<Map>& frames, Exec exec = Exec::parallel);

}  // namespace ovsal::vattr
