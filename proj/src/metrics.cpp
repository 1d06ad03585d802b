#include "ovsal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ovsal/errors.hpp"
#include "ovsal/rng.hpp"
#include "ovsal/sphere.hpp"

namespace ovsal::metrics {

namespace {

void require_same_shape(const Map& a, const Map& b) {
  if (!(a.shape == b.shape)) throw InvalidInputError("map shapes differ");
  if (a.shape.npix() == 0) throw InvalidInputError("empty map");
}

void require_fix(const Map& pred, const FixationMap& fix) {
  if (!(pred.shape == fix.shape)) throw InvalidInputError("map shapes differ");
  if (fix.pts.empty()) throw InvalidInputError("empty fixation map");
  for (const auto& p : fix.pts) {
    if (p.row < 0 || p.row >= fix.shape.height || p.col < 0 || p.col >= fix.shape.width)
      throw InvalidInputError("fixation pixel out of range");
    if (p.count <= 0) throw InvalidInputError("fixation counts must be positive");
  }
}

// Map with the row weights multiplied in (or a plain copy for uniform).
Map weighted(const Map& m, Weighting w) {
  Map out = m;
  if (w == Weighting::sinusoidal) {
    auto rows = sphere::sin_weight_map(m.shape);
    for (int r = 0; r < m.shape.height; ++r)
      for (int c = 0; c < m.shape.width; ++c) out.at(r, c) *= rows[r];
  }
  return out;
}

double sum_of(const Map& m) { return std::accumulate(m.v.begin(), m.v.end(), 0.0); }

Map sum1(const Map& m, const char* what) {
  double s = sum_of(m);
  if (s <= 0.0) throw InvalidInputError(std::string(what) + " map does not sum to a positive value");
  Map out = m;
  for (double& v : out.v) v /= s;
  return out;
}

struct MeanStd {
  double mean, std;
};

MeanStd mean_std(const Map& m) {
  double mean = sum_of(m) / static_cast<double>(m.v.size());
  double var = 0.0;
  for (double v : m.v) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m.v.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

MetricValue nss(const Map& pred, const FixationMap& fix, Weighting w) {
  require_fix(pred, fix);
  Map q = weighted(pred, w);
  auto [mean, sd] = mean_std(q);
  if (sd == 0.0) return {0.0, true};
  double acc = 0.0;
  int total = 0;
  for (const auto& p : fix.pts) {
    acc += p.count * (q.at(p.row, p.col) - mean) / sd;
    total += p.count;
  }
  return {acc / total, false};
}

double sim(const Map& pred, const Map& gt, Weighting w) {
  require_same_shape(pred, gt);
  Map qp = sum1(weighted(pred, w), "pred");
  Map qg = sum1(weighted(gt, w), "gt");
  double acc = 0.0;
  for (std::size_t i = 0; i < qp.v.size(); ++i) acc += std::min(qp.v[i], qg.v[i]);
  return acc;
}

MetricValue cc(const Map& pred, const Map& gt, Weighting w) {
  require_same_shape(pred, gt);
  Map qp = weighted(pred, w);
  Map qg = weighted(gt, w);
  auto [mp, sp] = mean_std(qp);
  auto [mg, sg] = mean_std(qg);
  if (sp == 0.0 || sg == 0.0) return {0.0, true};
  double cov = 0.0;
  for (std::size_t i = 0; i < qp.v.size(); ++i) cov += (qp.v[i] - mp) * (qg.v[i] - mg);
  cov /= static_cast<double>(qp.v.size());
  return {cov / (sp * sg), false};
}

double kld(const Map& pred, const Map& gt, Weighting w, double eps) {
  require_same_shape(pred, gt);
  Map qp = sum1(weighted(pred, w), "pred");
  Map qg = sum1(weighted(gt, w), "gt");
  double acc = 0.0;
  for (std::size_t i = 0; i < qp.v.size(); ++i)
    acc += qg.v[i] * std::log(eps + qg.v[i] / (eps + qp.v[i]));
  return acc;
}

namespace {

// Shared ROC area given positive (value, multiplicity) pairs and a sorted
// descending vector of negative values. Thresholds are the unique positive
// values; the curve is integrated trapezoidally through (0,0) and (1,1).
double roc_area(std::vector<std::pair<double, int>> positives,
                std::vector<double> negatives_desc) {
  std::sort(positives.begin(), positives.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  double n_pos = 0.0;
  for (const auto& p : positives) n_pos += p.second;
  const double n_neg = static_cast<double>(negatives_desc.size());
  if (n_neg == 0.0) throw InvalidInputError("no negatives available for AUC");

  double area = 0.0;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  std::size_t pi = 0, ni = 0;
  double tp = 0.0;
  while (pi < positives.size()) {
    double thr = positives[pi].first;
    while (pi < positives.size() && positives[pi].first == thr) tp += positives[pi++].second;
    while (ni < negatives_desc.size() && negatives_desc[ni] >= thr) ++ni;
    double tpr = tp / n_pos;
    double fpr = static_cast<double>(ni) / n_neg;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  area += (1.0 - prev_fpr) * (1.0 + prev_tpr) / 2.0;
  return area;
}

}  // namespace

double auc_judd(const Map& pred, const FixationMap& fix) {
  require_fix(pred, fix);
  std::vector<std::pair<double, int>> positives;
  positives.reserve(fix.pts.size());
  std::vector<bool> is_fix(pred.v.size(), false);
  for (const auto& p : fix.pts) {
    positives.emplace_back(pred.at(p.row, p.col), p.count);
    is_fix[static_cast<std::size_t>(p.row) * pred.shape.width + p.col] = true;
  }
  std::vector<double> negatives;
  negatives.reserve(pred.v.size());
  for (std::size_t i = 0; i < pred.v.size(); ++i)
    if (!is_fix[i]) negatives.push_back(pred.v[i]);
  std::sort(negatives.begin(), negatives.end(), std::greater<>());
  return roc_area(std::move(positives), std::move(negatives));
}

double s_auc(const Map& pred, const FixationMap& fix, const FixationMap& neg_pool,
             int n_splits, std::uint64_t seed) {
  require_fix(pred, fix);
  if (!(pred.shape == neg_pool.shape)) throw InvalidInputError("map shapes differ");
  if (neg_pool.pts.empty()) throw InvalidInputError("empty negative pool");
  if (n_splits <= 0) throw InvalidInputError("n_splits must be positive");

  std::vector<std::pair<double, int>> positives;
  int n_pos = 0;
  for (const auto& p : fix.pts) {
    positives.emplace_back(pred.at(p.row, p.col), p.count);
    n_pos += p.count;
  }
  std::vector<double> pool;  // count-expanded negative candidate values
  for (const auto& p : neg_pool.pts)
    for (int k = 0; k < p.count; ++k) pool.push_back(pred.at(p.row, p.col));

  double acc = 0.0;
  for (int s = 0; s < n_splits; ++s) {
    Rng rng(seed + static_cast<std::uint64_t>(s));
    std::vector<double> negatives(n_pos);
    for (int i = 0; i < n_pos; ++i) negatives[i] = pool[rng.below(pool.size())];
    std::sort(negatives.begin(), negatives.end(), std::greater<>());
    acc += roc_area(positives, std::move(negatives));
  }
  return acc / n_splits;
}

double pct_change(double value, double baseline) {
  if (baseline == 0.0) throw InvalidInputError("pct_change baseline is zero");
  return (value - baseline) / baseline * 100.0;
}

// ---- consistency ------------------------------------------------------------

namespace {

FixationMap pooled_fixation_map(const std::vector<const SubjectTrace*>& traces,
                                GridShape grid) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto* t : traces)
    for (const auto& f : *t) {
      auto p = sphere::pixel_of(f.center, grid);
      counts[{p.row, p.col}] += 1;
    }
  FixationMap fm;
  fm.shape = grid;
  for (const auto& [rc, c] : counts) fm.pts.push_back({rc.first, rc.second, c});
  return fm;
}

MetricTriple score_halves(const FixationMap& fa, const FixationMap& fb,
                          const ConsistencyParams& params) {
  if (fa.pts.empty() || fb.pts.empty())
    throw InvalidInputError("a subject group has no fixations");
  Map ma = gaze::smooth(fa, params.sigma_deg);
  Map mb = gaze::smooth(fb, params.sigma_deg);
  MetricTriple out;
  out.nss = 0.5 * (nss(ma, fb, params.weighting).value + nss(mb, fa, params.weighting).value);
  out.sim = sim(ma, mb, params.weighting);
  out.cc = cc(ma, mb, params.weighting).value;
  return out;
}

}  // namespace

MetricTriple consistency_baseline(const std::vector<SubjectTrace>& subjects,
                                  const ConsistencyParams& params) {
  if (subjects.size() < 2)
    throw InvalidInputError("split-half baseline needs at least 2 subjects");
  if (params.repeats <= 0) throw InvalidInputError("repeats must be positive");

  MetricTriple acc;
  for (int rep = 0; rep < params.repeats; ++rep) {
    std::vector<int> order(subjects.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(params.seed + static_cast<std::uint64_t>(rep));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(i + 1)]);

    std::size_t half = (order.size() + 1) / 2;
    std::vector<const SubjectTrace*> a, b;
    for (std::size_t i = 0; i < order.size(); ++i)
      (i < half ? a : b).push_back(&subjects[order[i]]);

    auto t = score_halves(pooled_fixation_map(a, params.grid),
                          pooled_fixation_map(b, params.grid), params);
    acc.nss += t.nss;
    acc.sim += t.sim;
    acc.cc += t.cc;
  }
  acc.nss /= params.repeats;
  acc.sim /= params.repeats;
  acc.cc /= params.repeats;
  return acc;
}

MetricTriple group_agreement(const std::vector<SubjectTrace>& group_a,
                             const std::vector<SubjectTrace>& group_b,
                             const ConsistencyParams& params) {
  std::vector<const SubjectTrace*> a, b;
  for (const auto& t : group_a) a.push_back(&t);
  for (const auto& t : group_b) b.push_back(&t);
  return score_halves(pooled_fixation_map(a, params.grid),
                      pooled_fixation_map(b, params.grid), params);
}

ConsistencyReport consistency(const std::map<std::string, std::vector<SubjectTrace>>& modes,
                              const ConsistencyParams& params) {
  if (modes.empty()) throw InvalidInputError("no modes given");
  ConsistencyReport rep;
  int n = 0;
  for (const auto& [name, subjects] : modes) {
    auto b = consistency_baseline(subjects, params);
    rep.baseline.nss += b.nss;
    rep.baseline.sim += b.sim;
    rep.baseline.cc += b.cc;
    ++n;
  }
  rep.baseline.nss /= n;
  rep.baseline.sim /= n;
  rep.baseline.cc /= n;

  for (auto it = modes.begin(); it != modes.end(); ++it) {
    for (auto jt = std::next(it); jt != modes.end(); ++jt) {
      auto key = it->first + "|" + jt->first;
      auto t = group_agreement(it->second, jt->second, params);
      rep.pairs[key] = t;
      rep.pct[key] = {pct_change(t.nss, rep.baseline.nss),
                      pct_change(t.sim, rep.baseline.sim),
                      pct_change(t.cc, rep.baseline.cc)};
    }
  }
  return rep;
}

}  // namespace ovsal::metrics
