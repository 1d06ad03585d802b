#pragma once
// Saliency evaluation metrics on equirectangular maps.
//
// Weighting: with Weighting::sinusoidal every map is first multiplied
// elementwise by the per-row area weight sin(90deg - lat_center(row)) before
// the metric formula applies; Weighting::uniform leaves maps untouched.
// AUC-Judd and s-AUC are defined on raw maps and ignore the weighting choice.
//
// Distribution-style metrics (SIM, KLD) renormalize the weighted maps to sum
// to 1. NSS z-normalizes the weighted prediction with its population
// mean/std. CC is the population Pearson correlation of the weighted maps.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ovsal/gaze.hpp"
#include "ovsal/map.hpp"

namespace ovsal::metrics {

enum class Weighting { uniform, sinusoidal };

struct MetricValue {
  double value = 0.0;
  bool degenerate = false;  // constant map made the statistic undefined -> 0
};

// Mean z-score of the weighted prediction at fixation pixels, fixation counts
// as multiplicity. Empty fixation maps are an error.
MetricValue nss(const Map& pred, const FixationMap& fix, Weighting w);

// Histogram intersection of the sum-1 normalized weighted maps.
double sim(const Map& pred, const Map& gt, Weighting w);

// Population Pearson correlation of the weighted maps.
MetricValue cc(const Map& pred, const Map& gt, Weighting w);

// sum over pixels of gt * ln(eps + gt / (eps + pred)) after both weighted
// maps are normalized to sum 1; gt is the reference.
double kld(const Map& pred, const Map& gt, Weighting w, double eps = 1e-7);

// Thresholds are the unique prediction values at fixation pixels; at each,
// TPR = count-weighted fraction of fixations with pred >= t and FPR =
// fraction of non-fixation pixels with pred >= t. Trapezoidal area through
// (0,0) and (1,1). Never weighted.
double auc_judd(const Map& pred, const FixationMap& fix);

// Shuffled AUC. Per split s in [0, n_splits): an RNG seeded with seed + s
// draws total_count(fix) negatives uniformly with replacement from the
// count-expanded negative pool, and an AUC is computed as in auc_judd with
// FPR measured over the sampled negatives. Returns the mean over splits.
double s_auc(const Map& pred, const FixationMap& fix, const FixationMap& neg_pool,
             int n_splits = 100, std::uint64_t seed = 0);

// (value - baseline) / baseline * 100; zero baseline is an error.
double pct_change(double value, double baseline);

// ---- split-half consistency -------------------------------------------------

// One subject's fixations pooled over the whole trace.
using SubjectTrace = std::vector<gaze::Fixation>;

struct ConsistencyParams {
  GridShape grid{64, 32};
  double sigma_deg = 3.34;
  int repeats = 5;
  std::uint64_t seed = 0;
  Weighting weighting = Weighting::sinusoidal;
};

struct MetricTriple {
  double nss = 0.0;
  double sim = 0.0;
  double cc = 0.0;
};

// Mean over `repeats` random equal splits of the subjects (odd counts put the
// extra subject in the first half): each repeat smooths the pooled fixations
// of each half and scores half against half. NSS is averaged over both
// directions; SIM and CC are symmetric. Requires at least 2 subjects.
MetricTriple consistency_baseline(const std::vector<SubjectTrace>& subjects,
                                  const ConsistencyParams& params);

// Between-group score used for mode pairs: pooled map and fixations per
// group, NSS averaged over both directions.
MetricTriple group_agreement(const std::vector<SubjectTrace>& group_a,
                             const std::vector<SubjectTrace>& group_b,
                             const ConsistencyParams& params);

struct ConsistencyReport {
  MetricTriple baseline;                        // mean of per-mode baselines
  std::map<std::string, MetricTriple> pairs;    // "modeA|modeB" -> agreement
  std::map<std::string, MetricTriple> pct;      // same keys, % change vs baseline
};

// Full Table-style report over named modes (mode -> per-subject traces).
ConsistencyReport consistency(const std::map<std::string, std::vector<SubjectTrace>>& modes,
                              const ConsistencyParams& params);

}  // namespace ovsal::metrics
