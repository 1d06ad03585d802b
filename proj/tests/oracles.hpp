#pragma once
// Brute-force reference implementations of the evaluation metrics, written as
// direct transcriptions of the definitions (naive per-threshold recounts, no
// shared helpers with the library implementations). Used by the unit tests
// and by the acceptance suite for dual-route agreement checks.

#include <cstdint>

#include "ovsal/audio.hpp"
#include "ovsal/map.hpp"

namespace oracle {

double nss(const ovsal::Map& pred, const ovsal::FixationMap& fix, bool sinusoidal);
double sim(const ovsal::Map& pred, const ovsal::Map& gt, bool sinusoidal);
double cc(const ovsal::Map& pred, const ovsal::Map& gt, bool sinusoidal);
double kld(const ovsal::Map& pred, const ovsal::Map& gt, bool sinusoidal, double eps);
double auc_judd(const ovsal::Map& pred, const ovsal::FixationMap& fix);
double s_auc(const ovsal::Map& pred, const ovsal::FixationMap& fix,
             const ovsal::FixationMap& neg_pool, int n_splits, std::uint64_t seed);

// Audio energy map by direct per-sample steering (no moment matrix).
ovsal::Map aem_direct(const ovsal::audio::BFormatClip& clip, ovsal::GridShape grid);

}  // namespace oracle
