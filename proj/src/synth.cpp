#include "ovsal/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <utility>

#include "ovsal/errors.hpp"
#include "ovsal/rng.hpp"

namespace ovsal::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;

int n_video_frames(const SceneConfig& cfg) {
  return static_cast<int>(std::llround(cfg.duration_s * cfg.fps));
}

sphere::Vec3 rotate_yaw(sphere::Vec3 v, double yaw_deg) {
  const double a = yaw_deg * kPi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  return {v.x * c - v.y * s, v.x * s + v.y * c, v.z};
}

sphere::Vec3 random_unit(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double lon = rng.uniform(0.0, 2.0 * kPi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(lon), r * std::sin(lon), z};
}

// Unit tangent at u pointing in a direction drawn uniformly around the circle.
sphere::Vec3 random_tangent(Rng& rng, sphere::Vec3 u) {
  for (;;) {
    const sphere::Vec3 t = sphere::cross(u, random_unit(rng));
    const double n = sphere::norm(t);
    if (n > 1e-6) return (1.0 / n) * t;
  }
}

// Band-limited noise: a fixed number of random-frequency, random-phase
// sinusoids, so the signal is deterministic and strictly inside the band.
std::vector<double> multisine(Rng& rng, int n_samples, double rate) {
  constexpr int kComponents = 48;
  const double f_lo = 300.0;
  const double f_hi = std::min(3500.0, 0.45 * rate);
  std::vector<double> freq(kComponents), phase(kComponents);
  for (int k = 0; k < kComponents; ++k) {
    freq[k] = rng.uniform(f_lo, f_hi);
    phase[k] = rng.uniform(0.0, 2.0 * kPi);
  }
  const double amp = 0.5 / std::sqrt(static_cast<double>(kComponents));
  std::vector<double> s(static_cast<std::size_t>(n_samples), 0.0);
  for (int i = 0; i < n_samples; ++i) {
    const double t = i / rate;
    double v = 0.0;
    for (int k = 0; k < kComponents; ++k) v += std::sin(2.0 * kPi * freq[k] * t + phase[k]);
    s[static_cast<std::size_t>(i)] = amp * v;
  }
  return s;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Evaluation target frames: `m` indices evenly spaced over [min_target, n-1],
// deduplicated (short clips can yield fewer than m).
std::vector<int> target_frames(int n_frames, int min_target, int m) {
  const int lo = std::min(min_target, n_frames - 1);
  const int hi = n_frames - 1;
  std::vector<int> ts;
  if (m <= 1 || hi == lo) {
    ts.push_back(hi);
  } else {
    for (int k = 0; k < m; ++k)
      ts.push_back(lo + static_cast<int>(std::llround(static_cast<double>(k) * (hi - lo) / (m - 1))));
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  }
  return ts;
}

// Counts of every sample's fixations at its evaluation target frames, as a
// flat per-pixel array (the s-AUC negative pool is this minus the own sample).
std::vector<int> pooled_counts(const std::vector<SynthSample>& data,
                               const std::vector<std::vector<int>>& targets, GridShape g) {
  std::vector<int> total(static_cast<std::size_t>(g.npix()), 0);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int tf : targets[i])
      for (const auto& p : data[i].fixations[static_cast<std::size_t>(tf)].pts)
        total[static_cast<std::size_t>(p.row) * g.width + p.col] += p.count;
  return total;
}

FixationMap counts_to_fixmap(const std::vector<int>& counts, GridShape g) {
  FixationMap fm;
  fm.shape = g;
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) {
      const int n = counts[static_cast<std::size_t>(r) * g.width + c];
      if (n > 0) fm.pts.push_back({r, c, n});
    }
  return fm;
}

struct EvalAccum {
  double nss = 0, auc = 0, sauc = 0, cc = 0, sim = 0, kld = 0;
};

EvalReport evaluate_impl(const Predictor& predict, const std::vector<SynthSample>& data,
                         const EvalConfig& ecfg, int min_target, Exec exec) {
  const auto t0 = std::chrono::steady_clock::now();
  if (data.empty()) throw InvalidInputError("evaluate: empty dataset");
  if (ecfg.frames_per_sample < 1) throw ConfigError("evaluate: frames_per_sample must be >= 1");
  if (ecfg.sauc_splits < 1) throw ConfigError("evaluate: sauc_splits must be >= 1");
  const GridShape g = data.front().cfg.grid;
  std::vector<std::vector<int>> targets(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!(data[i].cfg.grid == g)) throw InvalidInputError("evaluate: mixed grids in dataset");
    targets[i] = target_frames(data[i].n_frames(), min_target, ecfg.frames_per_sample);
  }
  const std::vector<int> pool = pooled_counts(data, targets, g);

  EvalReport rep;
  rep.rows.resize(data.size() + 1);
  parallel_for(
      static_cast<std::int64_t>(data.size()),
      [&](std::int64_t ii) {
        const auto i = static_cast<std::size_t>(ii);
        const SynthSample& smp = data[i];
        // Negative pool: everyone else's target-frame fixations.
        std::vector<int> neg = pool;
        for (int tf : targets[i])
          for (const auto& p : smp.fixations[static_cast<std::size_t>(tf)].pts)
            neg[static_cast<std::size_t>(p.row) * g.width + p.col] -= p.count;
        const FixationMap neg_pool = counts_to_fixmap(neg, g);
        EvalAccum a;
        for (int tf : targets[i]) {
          const Map pred = predict(smp, tf);
          const Map& gt = smp.gt[static_cast<std::size_t>(tf)];
          const FixationMap& fix = smp.fixations[static_cast<std::size_t>(tf)];
          a.nss += metrics::nss(pred, fix, ecfg.weighting).value;
          a.auc += metrics::auc_judd(pred, fix);
          a.sauc += metrics::s_auc(pred, fix, neg_pool, ecfg.sauc_splits, ecfg.seed);
          a.cc += metrics::cc(pred, gt, ecfg.weighting).value;
          a.sim += metrics::sim(pred, gt, ecfg.weighting);
          a.kld += metrics::kld(pred, gt, ecfg.weighting, ecfg.kld_eps);
        }
        const double m = static_cast<double>(targets[i].size());
        rep.rows[i] = {smp.id,     a.nss / m, a.auc / m, a.sauc / m,
                       a.cc / m,   a.sim / m, a.kld / m};
      },
      exec);
  EvalRow mean;
  mean.id = "mean";
  const double n = static_cast<double>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    mean.nss += rep.rows[i].nss / n;
    mean.auc_judd += rep.rows[i].auc_judd / n;
    mean.s_auc += rep.rows[i].s_auc / n;
    mean.cc += rep.rows[i].cc / n;
    mean.sim += rep.rows[i].sim / n;
    mean.kld += rep.rows[i].kld / n;
  }
  rep.rows.back() = mean;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// The temporal window ending at `target`: frames target - (T-1)*step ... target.
std::vector<Map> window_frames(const model::ModelConfig& mcfg, const SynthSample& smp, int target) {
  std::vector<Map> w;
  w.reserve(static_cast<std::size_t>(mcfg.frames));
  for (int k = mcfg.frames - 1; k >= 0; --k)
    w.push_back(smp.frames[static_cast<std::size_t>(target - k * mcfg.frame_step)]);
  return w;
}

int window_span(const model::ModelConfig& mcfg) { return (mcfg.frames - 1) * mcfg.frame_step; }

void check_dataset_fits(const model::ModelConfig& mcfg, const std::vector<SynthSample>& data,
                        const char* who) {
  const int span = window_span(mcfg);
  for (const auto& smp : data) {
    if (smp.cfg.grid.width != mcfg.input_width || smp.cfg.grid.height != mcfg.input_height)
      throw InvalidInputError(std::string(who) + ": sample grid does not match the model input");
    if (smp.n_frames() <= span)
      throw InvalidInputError(std::string(who) + ": clip too short for the temporal window (" +
                              std::to_string(smp.n_frames()) + " frames, window span " +
                              std::to_string(span + 1) + ")");
  }
}

nlohmann::json row_to_json(const EvalRow& r) {
  return {{"id", r.id},   {"nss", r.nss}, {"auc_judd", r.auc_judd}, {"s_auc", r.s_auc},
          {"cc", r.cc},   {"sim", r.sim}, {"kld", r.kld}};
}

}  // namespace

// ---- scene generation -------------------------------------------------------

void validate(const SceneConfig& cfg) {
  if (cfg.grid.width < 2 || cfg.grid.height < 2)
    throw ConfigError("scene: grid must be at least 2x2");
  if (!(cfg.duration_s > 0) || !(cfg.fps > 0) || !(cfg.audio_rate > 0))
    throw ConfigError("scene: duration, fps and audio_rate must be positive");
  if (n_video_frames(cfg) < 1) throw ConfigError("scene: no video frames");
  if (std::llround(cfg.duration_s * cfg.audio_rate) < 1) throw ConfigError("scene: no audio samples");
  if (cfg.n_blobs < 1 || cfg.n_blobs > 3) throw ConfigError("scene: n_blobs must be 1..3");
  if (cfg.sounding_index < 0 || cfg.sounding_index >= cfg.n_blobs)
    throw ConfigError("scene: sounding_index out of range");
  if (!(cfg.blob_sigma_deg > 0)) throw ConfigError("scene: blob_sigma_deg must be positive");
  if (cfg.speed_deg_s_min < 0 || cfg.speed_deg_s_max < cfg.speed_deg_s_min)
    throw ConfigError("scene: speed range must satisfy 0 <= min <= max");
  if (!(cfg.sounding_share > 0) || cfg.sounding_share > 1)
    throw ConfigError("scene: sounding_share must be in (0, 1]");
  if (cfg.fixations_per_frame < 1) throw ConfigError("scene: fixations_per_frame must be >= 1");
  if (!std::isfinite(cfg.yaw_deg)) throw ConfigError("scene: yaw_deg must be finite");
}

sphere::Vec3 BlobTrack::dir_at(double t_s) const {
  const double a = omega_rad_s * t_s;
  return sphere::normalized(std::cos(a) * u0 + std::sin(a) * v0);
}

SynthSample generate(const SceneConfig& cfg) {
  validate(cfg);
  SynthSample s;
  s.cfg = cfg;
  s.id = "scene-" + std::to_string(cfg.seed);
  const GridShape g = cfg.grid;
  const int nf = n_video_frames(cfg);
  const double sigma = cfg.blob_sigma_deg * kPi / 180.0;

  Rng rng(hash64("synth-scene") ^ cfg.seed);
  for (int b = 0; b < cfg.n_blobs; ++b) {
    BlobTrack tr;
    // Keep starting centers at least 3 sigma apart (bounded rejection, so the
    // draw stays deterministic even for configs where separation is tight).
    for (int attempt = 0;; ++attempt) {
      tr.u0 = random_unit(rng);
      bool ok = true;
      for (const auto& prev : s.tracks)
        if (sphere::great_circle_deg(tr.u0, prev.u0) < 3.0 * cfg.blob_sigma_deg) ok = false;
      if (ok || attempt >= 64) break;
    }
    tr.v0 = random_tangent(rng, tr.u0);
    tr.omega_rad_s = rng.uniform(cfg.speed_deg_s_min, cfg.speed_deg_s_max) * kPi / 180.0;
    tr.amplitude = rng.uniform(0.7, 1.0);
    s.tracks.push_back(tr);
  }
  // The yaw is applied after all draws: the same seed with a different yaw
  // gives the same scene rigidly rotated about the polar axis.
  if (cfg.yaw_deg != 0.0)
    for (auto& tr : s.tracks) {
      tr.u0 = rotate_yaw(tr.u0, cfg.yaw_deg);
      tr.v0 = rotate_yaw(tr.v0, cfg.yaw_deg);
    }

  s.blob_tracks.assign(static_cast<std::size_t>(cfg.n_blobs), {});
  for (int f = 0; f < nf; ++f) {
    const double t = f / cfg.fps;
    for (int b = 0; b < cfg.n_blobs; ++b)
      s.blob_tracks[static_cast<std::size_t>(b)].push_back(
          sphere::vec_to_latlon(s.tracks[static_cast<std::size_t>(b)].dir_at(t)));
  }
  s.source_track = s.blob_tracks[static_cast<std::size_t>(cfg.sounding_index)];

  std::vector<sphere::Vec3> centers(static_cast<std::size_t>(g.npix()));
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c)
      centers[static_cast<std::size_t>(r) * g.width + c] =
          sphere::latlon_to_vec(sphere::center_of(r, c, g));

  std::vector<double> share(static_cast<std::size_t>(cfg.n_blobs),
                            cfg.n_blobs > 1 ? (1.0 - cfg.sounding_share) / (cfg.n_blobs - 1) : 1.0);
  share[static_cast<std::size_t>(cfg.sounding_index)] = cfg.n_blobs > 1 ? cfg.sounding_share : 1.0;

  s.frames.assign(static_cast<std::size_t>(nf), Map(g));
  s.gt.assign(static_cast<std::size_t>(nf), Map(g));
  std::vector<double> blob(static_cast<std::size_t>(g.npix()));
  for (int f = 0; f < nf; ++f) {
    Map& frame = s.frames[static_cast<std::size_t>(f)];
    Map& gtm = s.gt[static_cast<std::size_t>(f)];
    const double t = f / cfg.fps;
    for (int b = 0; b < cfg.n_blobs; ++b) {
      const sphere::Vec3 d = s.tracks[static_cast<std::size_t>(b)].dir_at(t);
      double sum = 0.0;
      for (std::int64_t i = 0; i < g.npix(); ++i) {
        const double ang = std::atan2(sphere::norm(sphere::cross(centers[i], d)),
                                      sphere::dot(centers[i], d));
        const double v = std::exp(-ang * ang / (2.0 * sigma * sigma));
        blob[static_cast<std::size_t>(i)] = v;
        sum += v;
      }
      const double amp = 255.0 * s.tracks[static_cast<std::size_t>(b)].amplitude;
      for (std::int64_t i = 0; i < g.npix(); ++i) {
        frame.v[static_cast<std::size_t>(i)] += amp * blob[static_cast<std::size_t>(i)];
        gtm.v[static_cast<std::size_t>(i)] +=
            share[static_cast<std::size_t>(b)] * blob[static_cast<std::size_t>(i)] / sum;
      }
    }
    double total = 0.0;
    for (double v : gtm.v) total += v;
    for (auto& v : gtm.v) v /= total;
    for (auto& v : frame.v) v = std::min(v, 255.0);
  }

  Rng frng(hash64("synth-fixations") ^ cfg.seed);
  s.fixations.reserve(static_cast<std::size_t>(nf));
  std::vector<double> cdf(static_cast<std::size_t>(g.npix()));
  std::vector<int> hits(static_cast<std::size_t>(g.npix()));
  for (int f = 0; f < nf; ++f) {
    const Map& gtm = s.gt[static_cast<std::size_t>(f)];
    double acc = 0.0;
    for (std::int64_t i = 0; i < g.npix(); ++i) {
      acc += gtm.v[static_cast<std::size_t>(i)];
      cdf[static_cast<std::size_t>(i)] = acc;
    }
    std::fill(hits.begin(), hits.end(), 0);
    for (int k = 0; k < cfg.fixations_per_frame; ++k) {
      const double u = frng.uniform() * acc;
      const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()),
                                             cdf.size() - 1);
      ++hits[idx];
    }
    s.fixations.push_back(counts_to_fixmap(hits, g));
  }

  Rng arng(hash64("synth-audio") ^ cfg.seed);
  const int nsamp = static_cast<int>(std::llround(cfg.duration_s * cfg.audio_rate));
  s.mono_source = multisine(arng, nsamp, cfg.audio_rate);
  s.clip = encode_track(s.mono_source, cfg.audio_rate, cfg.fps, s.source_track);
  return s;
}

std::vector<SynthSample> make_dataset(const SceneConfig& base, int n, std::uint64_t seed0,
                                      Exec exec) {
  if (n < 1) throw InvalidInputError("make_dataset: n must be >= 1");
  validate(base);
  std::vector<SynthSample> out(static_cast<std::size_t>(n));
  parallel_for(
      n,
      [&](std::int64_t i) {
        SceneConfig cfg = base;
        cfg.seed = hash64("sample-" + std::to_string(i)) ^ seed0;
        out[static_cast<std::size_t>(i)] = generate(cfg);
        char buf[16];
        std::snprintf(buf, sizeof buf, "s%03lld", static_cast<long long>(i));
        out[static_cast<std::size_t>(i)].id = buf;
      },
      exec);
  return out;
}

audio::BFormatClip encode_track(const std::vector<double>& mono, double sample_rate, double fps,
                                const std::vector<sphere::SphericalCoord>& track) {
  if (track.empty()) throw InvalidInputError("encode_track: empty direction track");
  if (!(sample_rate > 0) || !(fps > 0))
    throw InvalidInputError("encode_track: sample_rate and fps must be positive");
  audio::BFormatClip clip;
  clip.sample_rate = sample_rate;
  const std::size_t n = mono.size();
  clip.w.reserve(n);
  clip.x.reserve(n);
  clip.y.reserve(n);
  clip.z.reserve(n);
  const int nf = static_cast<int>(track.size());
  // Piecewise-constant direction: frame f owns samples [f/fps, (f+1)/fps);
  // each span is encoded exactly like a static point source.
  std::size_t begin = 0;
  for (int f = 0; f < nf && begin < n; ++f) {
    std::size_t end =
        f + 1 == nf ? n
                    : std::min(n, static_cast<std::size_t>(std::llround((f + 1) / fps * sample_rate)));
    if (end <= begin) continue;
    const std::vector<double> span(mono.begin() + static_cast<std::ptrdiff_t>(begin),
                                   mono.begin() + static_cast<std::ptrdiff_t>(end));
    const audio::BFormatClip part =
        audio::encode_point_source(span, sample_rate, track[static_cast<std::size_t>(f)]);
    clip.w.insert(clip.w.end(), part.w.begin(), part.w.end());
    clip.x.insert(clip.x.end(), part.x.begin(), part.x.end());
    clip.y.insert(clip.y.end(), part.y.begin(), part.y.end());
    clip.z.insert(clip.z.end(), part.z.begin(), part.z.end());
    begin = end;
  }
  return clip;
}

SynthSample with_audio_from_blob(const SynthSample& s, int blob) {
  if (blob < 0 || blob >= static_cast<int>(s.blob_tracks.size()))
    throw InvalidInputError("with_audio_from_blob: blob index out of range");
  SynthSample out = s;
  out.clip = encode_track(s.mono_source, s.cfg.audio_rate, s.cfg.fps,
                          s.blob_tracks[static_cast<std::size_t>(blob)]);
  return out;
}

// ---- training ---------------------------------------------------------------

TrainResult train(const model::ModelConfig& mcfg, const std::vector<SynthSample>& data,
                  const OptConfig& opt) {
  model::validate(mcfg);
  if (data.empty()) throw InvalidInputError("train: empty dataset");
  if (opt.steps < 0) throw ConfigError("train: steps must be >= 0");
  if (opt.batch < 1) throw ConfigError("train: batch must be >= 1");
  if (!(opt.lr >= 0) || !std::isfinite(opt.lr)) throw ConfigError("train: lr must be finite and >= 0");
  check_dataset_fits(mcfg, data, "train");

  TrainResult res{model::ParamStore(opt.seed), {}};
  res.log.reserve(static_cast<std::size_t>(opt.steps));
  Rng srng(hash64("train-sampler") ^ opt.seed);
  const int span = window_span(mcfg);
  const bool wants_audio =
      mcfg.fusion != model::Fusion::none && mcfg.audio_mode != model::AudioMode::mute;
  for (int step = 0; step < opt.steps; ++step) {
    const double lr = opt.lr * 0.5 * (1.0 + std::cos(kPi * step / opt.steps));
    nn::Tape t;
    nn::Var total;
    model::LossBreakdown mean{};
    for (int b = 0; b < opt.batch; ++b) {
      const auto& smp = data[srng.below(data.size())];
      const int hi = smp.n_frames() - 1;
      const int tf = span + static_cast<int>(srng.below(static_cast<std::uint64_t>(hi - span + 1)));
      const std::vector<Map> window = window_frames(mcfg, smp, tf);
      const nn::Var pred =
          model::forward(t, res.params, mcfg, window, wants_audio ? &smp.clip : nullptr);
      const model::LossVars lv =
          model::saliency_losses(t, pred, smp.gt[static_cast<std::size_t>(tf)], mcfg);
      total = b == 0 ? lv.total : nn::add(total, lv.total);
      const model::LossBreakdown bd = lv.values();
      mean.l1 += bd.l1 / opt.batch;
      mean.cc += bd.cc / opt.batch;
      mean.kl += bd.kl / opt.batch;
      mean.bce += bd.bce / opt.batch;
      mean.total += bd.total / opt.batch;
      mean.cc_degenerate = mean.cc_degenerate || bd.cc_degenerate;
    }
    if (!std::isfinite(mean.total)) {
      std::ostringstream os;
      os << "train: loss went non-finite at step " << step << " (l1=" << mean.l1
         << " cc=" << mean.cc << " kl=" << mean.kl << " bce=" << mean.bce << ")";
      throw InternalError(os.str());
    }
    total = nn::scale(total, 1.0 / opt.batch);
    t.backward(total);
    res.params.sgd_step(t, lr);
    res.log.push_back({step, lr, mean});
  }
  return res;
}

// ---- evaluation -------------------------------------------------------------

EvalReport evaluate_with(const Predictor& predict, const std::vector<SynthSample>& data,
                         const EvalConfig& ecfg, Exec exec) {
  return evaluate_impl(predict, data, ecfg, 0, exec);
}

EvalReport evaluate(const model::ModelConfig& mcfg, model::ParamStore& params,
                    const std::vector<SynthSample>& data, const EvalConfig& ecfg, Exec exec) {
  model::validate(mcfg);
  if (data.empty()) throw InvalidInputError("evaluate: empty dataset");
  check_dataset_fits(mcfg, data, "evaluate");
  const int span = window_span(mcfg);
  const bool wants_audio =
      mcfg.fusion != model::Fusion::none && mcfg.audio_mode != model::AudioMode::mute;
  // Predictions run serially up front (the parameter store's tape-binding
  // cache is not thread-safe); the metric rows then reduce in parallel.
  std::map<std::pair<const SynthSample*, int>, Map> preds;
  for (const auto& smp : data)
    for (int tf : target_frames(smp.n_frames(), span, ecfg.frames_per_sample)) {
      nn::Tape t;
      const nn::Var out = model::forward(t, params, mcfg, window_frames(mcfg, smp, tf),
                                         wants_audio ? &smp.clip : nullptr);
      preds.emplace(std::make_pair(&smp, tf), model::to_map(out, smp.cfg.grid));
    }
  const Predictor lookup = [&preds](const SynthSample& smp, int tf) -> Map {
    const auto it = preds.find({&smp, tf});
    if (it == preds.end()) throw InternalError("evaluate: missing precomputed prediction");
    return it->second;
  };
  return evaluate_impl(lookup, data, ecfg, span, exec);
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(row_to_json(row));
  return {{"rows", rows}, {"wall_seconds", r.wall_seconds}};
}

std::string report_to_csv(const EvalReport& r) {
  std::string out = "id,nss,auc_judd,s_auc,cc,sim,kld\n";
  for (const auto& row : r.rows)
    out += row.id + "," + fmt17(row.nss) + "," + fmt17(row.auc_judd) + "," + fmt17(row.s_auc) +
           "," + fmt17(row.cc) + "," + fmt17(row.sim) + "," + fmt17(row.kld) + "\n";
  return out;
}

// ---- ablation ---------------------------------------------------------------

const char* to_string(AblateAxis a) {
  switch (a) {
    case AblateAxis::temporal: return "temporal";
    case AblateAxis::fusion: return "fusion";
    case AblateAxis::fusion_levels: return "fusion_levels";
    case AblateAxis::audio_mode: return "audio_mode";
    case AblateAxis::frame_sampling: return "frame_sampling";
  }
  throw InternalError("unknown ablation axis");
}

AblateAxis ablate_axis_from_string(const std::string& s) {
  for (AblateAxis a : {AblateAxis::temporal, AblateAxis::fusion, AblateAxis::fusion_levels,
                       AblateAxis::audio_mode, AblateAxis::frame_sampling})
    if (s == to_string(a)) return a;
  throw ConfigError("unknown ablation axis: " + s);
}

AblateReport ablate(const model::ModelConfig& base, const std::vector<SynthSample>& train_set,
                    const std::vector<SynthSample>& test_set, const OptConfig& opt,
                    const std::vector<AblateAxis>& axes, const EvalConfig& ecfg) {
  const auto t0 = std::chrono::steady_clock::now();
  model::validate(base);

  struct Variant {
    std::string axis, value;
    model::ModelConfig cfg;
  };
  std::vector<Variant> variants;
  if (axes.empty()) variants.push_back({"base", "base", base});
  std::vector<AblateAxis> seen;
  for (AblateAxis ax : axes) {
    if (std::find(seen.begin(), seen.end(), ax) != seen.end()) continue;
    seen.push_back(ax);
    switch (ax) {
      case AblateAxis::temporal:
        for (auto v : {model::Temporal::conv3d, model::Temporal::st_gru,
                       model::Temporal::st_transformer}) {
          model::ModelConfig c = base;
          c.temporal = v;
          variants.push_back({to_string(ax), model::to_string(v), c});
        }
        break;
      case AblateAxis::fusion:
        for (auto v :
             {model::Fusion::none, model::Fusion::concat, model::Fusion::cross_transformer}) {
          model::ModelConfig c = base;
          c.fusion = v;
          variants.push_back({to_string(ax), model::to_string(v), c});
        }
        break;
      case AblateAxis::fusion_levels:
        for (int lv = 1; lv <= std::max(1, base.fusion_levels); ++lv) {
          model::ModelConfig c = base;
          c.fusion_levels = lv;
          variants.push_back({to_string(ax), std::to_string(lv), c});
        }
        break;
      case AblateAxis::audio_mode:
        for (auto v : {model::AudioMode::mute, model::AudioMode::mono, model::AudioMode::ambisonics}) {
          model::ModelConfig c = base;
          c.audio_mode = v;
          variants.push_back({to_string(ax), model::to_string(v), c});
        }
        break;
      case AblateAxis::frame_sampling: {
        std::vector<std::pair<int, int>> opts{{1, 1},
                                              {std::max(1, base.frames / 2), base.frame_step},
                                              {base.frames, base.frame_step}};
        opts.erase(std::unique(opts.begin(), opts.end()), opts.end());
        for (auto [fr, st] : opts) {
          model::ModelConfig c = base;
          c.frames = fr;
          c.frame_step = st;
          variants.push_back(
              {to_string(ax), "frames=" + std::to_string(fr) + ",step=" + std::to_string(st), c});
        }
        break;
      }
    }
  }

  AblateReport rep;
  for (const auto& var : variants) {
    TrainResult tr = train(var.cfg, train_set, opt);
    const EvalReport er = evaluate(var.cfg, tr.params, test_set, ecfg);
    rep.rows.push_back({var.axis, var.value, var.cfg, er.rows.back()});
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

nlohmann::json report_to_json(const AblateReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"axis", row.axis},
                    {"value", row.value},
                    {"config", model::config_to_json(row.config)},
                    {"aggregate", row_to_json(row.aggregate)}});
  return {{"rows", rows}, {"wall_seconds", r.wall_seconds}};
}

std::string report_to_csv(const AblateReport& r) {
  std::string out = "axis,value,nss,auc_judd,s_auc,cc,sim,kld\n";
  for (const auto& row : r.rows) {
    const EvalRow& a = row.aggregate;
    out += row.axis + "," + row.value + "," + fmt17(a.nss) + "," + fmt17(a.auc_judd) + "," +
           fmt17(a.s_auc) + "," + fmt17(a.cc) + "," + fmt17(a.sim) + "," + fmt17(a.kld) + "\n";
  }
  return out;
}

}  // namespace ovsal::synth
