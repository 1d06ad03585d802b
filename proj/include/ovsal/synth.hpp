#pragma once
// Synthetic audio-visual scenes plus the toy training / evaluation / ablation
// harness that runs the saliency model end to end on them.
//
// A scene is 1-3 Gaussian luminance blobs moving on great-circle arcs over a
// black equirectangular panorama. Exactly one blob emits band-limited noise,
// encoded to first-order B-format with the blob's per-frame direction
// (piecewise-constant over each video frame). Ground truth is a mixture of
// per-blob spherical Gaussians normalized to sum 1 per frame; the sounding
// blob carries `sounding_share` of the mass. Per frame, a seeded RNG draws
// `fixations_per_frame` fixations from the ground-truth distribution.
//
// Everything here is bitwise deterministic given the config seeds.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovsal/audio.hpp"
#include "ovsal/map.hpp"
#include "ovsal/metrics.hpp"
#include "ovsal/model.hpp"
#include "ovsal/parallel.hpp"
#include "ovsal/sphere.hpp"

namespace ovsal::synth {

// ---- scene generation -------------------------------------------------------

struct SceneConfig {
  GridShape grid{64, 32};
  double duration_s = 2.0;
  double fps = 30.0;
  double audio_rate = 16000.0;
  int n_blobs = 2;           // 1..3
  int sounding_index = 0;    // < n_blobs
  double blob_sigma_deg = 10.0;
  double speed_deg_s_min = 10.0;
  double speed_deg_s_max = 40.0;
  double sounding_share = 0.7;  // ground-truth mass of the sounding blob
  int fixations_per_frame = 20;
  double yaw_deg = 0.0;  // extra rotation of every track about the polar axis
  std::uint64_t seed = 0;
};

void validate(const SceneConfig& cfg);  // throws ConfigError

// One blob's great-circle motion: dir(t) = u0 cos(w t) + v0 sin(w t).
struct BlobTrack {
  sphere::Vec3 u0, v0;        // orthonormal pair
  double omega_rad_s = 0.0;   // angular speed
  double amplitude = 1.0;     // luminance amplitude in (0, 1]
  sphere::Vec3 dir_at(double t_s) const;
};

struct SynthSample {
  std::string id;
  SceneConfig cfg;
  std::vector<Map> frames;  // luma in [0, 255], one per video frame
  audio::BFormatClip clip;
  std::vector<Map> gt;                   // per frame, sums to 1
  std::vector<FixationMap> fixations;    // per frame, fixations_per_frame draws
  std::vector<BlobTrack> tracks;         // metadata: one per blob
  std::vector<std::vector<sphere::SphericalCoord>> blob_tracks;  // [blob][frame]
  std::vector<sphere::SphericalCoord> source_track;  // == blob_tracks[sounding]
  std::vector<double> mono_source;  // pre-encode source signal (for re-encoding)

  int n_frames() const { return static_cast<int>(frames.size()); }
};

SynthSample generate(const SceneConfig& cfg);

// `n` samples from `base` with per-sample seeds derived from `seed0`; ids are
// "s000", "s001", ... Samples are generated in parallel (they are independent).
std::vector<SynthSample> make_dataset(const SceneConfig& base, int n, std::uint64_t seed0,
                                      Exec exec = Exec::parallel);

// Re-encode a sample's mono source at an arbitrary per-frame direction track
// (piecewise-constant per video frame; track.size() == n_frames()).
audio::BFormatClip encode_track(const std::vector<double>& mono, double sample_rate, double fps,
                                const std::vector<sphere::SphericalCoord>& track);

// The same sample with its audio re-encoded at the track of another blob --
// deliberately wrong directional cues, same signal content.
SynthSample with_audio_from_blob(const SynthSample& s, int blob);

// ---- training ---------------------------------------------------------------

struct OptConfig {
  int steps = 50;
  int batch = 4;
  double lr = 0.05;  // cosine-annealed: lr_t = lr/2 (1 + cos(pi t / steps))
  std::uint64_t seed = 1;
};

struct TrainLogRow {
  int step = 0;
  double lr = 0.0;
  model::LossBreakdown loss;  // batch mean
};

struct TrainResult {
  model::ParamStore params;
  std::vector<TrainLogRow> log;
};

// SGD with a cosine learning-rate schedule over (sample, target-frame) windows
// drawn uniformly per step. Throws InvalidInputError when the dataset is empty
// or too short for the model's temporal window, InternalError when the loss
// goes non-finite (with the offending step in the message).
TrainResult train(const model::ModelConfig& mcfg, const std::vector<SynthSample>& data,
                  const OptConfig& opt);

// ---- evaluation -------------------------------------------------------------

struct EvalConfig {
  int frames_per_sample = 2;  // evaluation target frames, evenly spaced
  // Uniform by default so a constant predictor scores NSS = 0 exactly (the
  // area weighting would turn a constant map into a row gradient first).
  metrics::Weighting weighting = metrics::Weighting::uniform;
  // Much smaller than the training-loss epsilon: the KLD formula carries an
  // eps * npix slack, and 1e-12 keeps an identity predictor below 1e-6 KLD
  // on every grid this project uses.
  double kld_eps = 1e-12;
  int sauc_splits = 20;
  std::uint64_t seed = 7;
};

struct EvalRow {
  std::string id;  // sample id; the final row is "mean"
  double nss = 0.0, auc_judd = 0.0, s_auc = 0.0, cc = 0.0, sim = 0.0, kld = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // one per sample + the aggregate mean row
  double wall_seconds = 0.0;
};

// predictor(sample, target_frame) -> saliency map on the sample's grid.
using Predictor = std::function<Map(const SynthSample&, int frame)>;

// Per sample: metric means over the evaluation target frames; s-AUC negatives
// are pooled from the other samples' fixations at their target frames.
// Samples are evaluated in parallel; row order is the dataset order.
EvalReport evaluate_with(const Predictor& predict, const std::vector<SynthSample>& data,
                         const EvalConfig& ecfg, Exec exec = Exec::parallel);

// Runs the model as the predictor (window ending at the target frame).
EvalReport evaluate(const model::ModelConfig& mcfg, model::ParamStore& params,
                    const std::vector<SynthSample>& data, const EvalConfig& ecfg,
                    Exec exec = Exec::parallel);

nlohmann::json report_to_json(const EvalReport& r);
std::string report_to_csv(const EvalReport& r);

// ---- ablation ---------------------------------------------------------------

enum class AblateAxis { temporal, fusion, fusion_levels, audio_mode, frame_sampling };

const char* to_string(AblateAxis a);
AblateAxis ablate_axis_from_string(const std::string& s);

struct AblateRow {
  std::string axis;   // "base" for the no-axes run
  std::string value;  // the varied setting, e.g. "mono" or "frames=4,step=2"
  model::ModelConfig config;
  EvalRow aggregate;  // the mean row of this variant's evaluation
};

struct AblateReport {
  std::vector<AblateRow> rows;
  double wall_seconds = 0.0;
};

// Trains one variant per axis value (other fields at `base`), evaluates each
// on `test_set`, and reports the aggregate metric rows. Every variant uses the
// same `opt` (and seed), so differences come from the varied axis alone. With
// empty `axes` the single "base" row equals a plain train + evaluate run.
AblateReport ablate(const model::ModelConfig& base, const std::vector<SynthSample>& train_set,
                    const std::vector<SynthSample>& test_set, const OptConfig& opt,
                    const std::vector<AblateAxis>& axes, const EvalConfig& ecfg);

nlohmann::json report_to_json(const AblateReport& r);
std::string report_to_csv(const AblateReport& r);

}  // namespace ovsal::synth
