#pragma once
// Audio-visual saliency model core: a small trainable patch encoder with a
// 7-stage feature pyramid (stages 1-4 use the current frame only, 5-7 keep the
// full temporal window), per-stage rescaling, three temporal-aggregation
// variants, staged audio fusion driven by B-format channel tokens, a U-Net
// style decoder with skip connections, and the four-term training loss.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovsal/audio.hpp"
#include "ovsal/map.hpp"
#include "ovsal/tensor.hpp"

namespace ovsal::model {

enum class Temporal { conv3d, st_gru, st_transformer };
enum class Fusion { none, concat, cross_transformer };
enum class AudioMode { mute, mono, ambisonics };

const char* to_string(Temporal v);
const char* to_string(Fusion v);
const char* to_string(AudioMode v);
Temporal temporal_from_string(const std::string& s);
Fusion fusion_from_string(const std::string& s);
AudioMode audio_mode_from_string(const std::string& s);

struct ModelConfig {
  static constexpr int n_stages = 7;

  int channels = 32;  // C
  int frames = 8;     // T, current frame last
  int frame_step = 8;
  int heads = 4;
  Temporal temporal = Temporal::st_transformer;  // applied at stages 5..7
  Fusion fusion = Fusion::cross_transformer;
  int fusion_levels = 3;
  AudioMode audio_mode = AudioMode::ambisonics;
  int input_width = 64;
  int input_height = 32;
  int patch = 4;
  // per-stage resolution = input / schedule[i]
  std::array<int, n_stages> schedule{4, 8, 16, 32, 32, 32, 32};
  std::array<double, 4> loss_weights{1.0, 0.2, 0.2, 1.0};  // l1, cc, kl, bce
  double kl_eps = 1e-7;
};

void validate(const ModelConfig& cfg);  // throws ConfigError
nlohmann::json config_to_json(const ModelConfig& cfg);
// defaults overridden by present keys; unknown keys rejected
ModelConfig config_from_json(const nlohmann::json& j);

struct InitSpec {
  enum Kind { fill, uniform, normal } kind = fill;
  double a = 0.0;  // fill value / uniform bound / normal sd
};
inline InitSpec init_fill(double v) { return {InitSpec::fill, v}; }
inline InitSpec init_uniform(double bound) { return {InitSpec::uniform, bound}; }
inline InitSpec init_normal(double sd) { return {InitSpec::normal, sd}; }

// Named fp64 parameter tensors. Initialization is keyed by hash(name)^seed so
// it is deterministic and independent of creation order. bind() is cached per
// tape: the same name yields the same tape node within one forward/backward.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  nn::Var get(nn::Tape& t, const std::string& name, nn::Shape shape, InitSpec init);

  // v -= lr * grad for every parameter bound to this tape
  void sgd_step(nn::Tape& t, double lr);

  std::size_t total_params() const;
  std::size_t n_tensors() const { return entries_.size(); }
  std::uint64_t seed() const { return seed_; }

  // direct access to a stored tensor's values (optimizers, tests)
  std::vector<double>& values(const std::string& name);

  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

  struct Entry {
    nn::Shape shape;
    std::vector<double> v;
    std::uint64_t bound_tape = 0;  // Tape::id() of last bind
    int node = -1;
  };
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::uint64_t seed_ = 0;
  std::map<std::string, Entry> entries_;
};

// Copies of attention softmax matrices recorded during forward.
struct AttnProbe {
  struct Rec {
    std::string tag;
    int rows = 0, cols = 0;
    std::vector<double> v;
  };
  std::vector<Rec> recs;
};

// Per-channel audio token sequences [n_tokens, C], one entry per fusion level
// (level 0 = shallowest). channels() is 4 for ambisonics, 1 for mono.
struct AudioTokens {
  std::vector<std::vector<nn::Var>> levels;  // levels[j][channel]
};

std::array<int, 2> stage_resolution(const ModelConfig& cfg, int stage);  // {h, w}

// 2-s-window log-mel image for one channel: [1, n_mels, n_mels] constant,
// trailing frames, affinely shifted so the silence floor maps to 0.
nn::Var mel_image(nn::Tape& t, const std::vector<double>& channel, double sample_rate);

AudioTokens encode_audio(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg,
                         const audio::BFormatClip& clip);

// 7 per-stage features: stages 0..3 hold [C,h,w] of the current (last) frame,
// stages 4..6 hold [C,T,h,w]; all rescaled to the schedule resolution.
std::vector<nn::Var> encode_frames(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg,
                                   const std::vector<Map>& frames);

nn::Var temporal_aggregate(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg, nn::Var m,
                           int stage, AttnProbe* probe = nullptr);

// F' = MSA(LN(F)) + F; F'' = MCA(LN(F'), A) + F'; out = FFN(LN(F'')) + F''
nn::Var cross_transformer(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg,
                          const std::string& prefix, nn::Var f, nn::Var a,
                          AttnProbe* probe = nullptr);

// Semantic stage (W) then parallel orientation stages (X/Y/Z, distinct
// weights), channel concat, linear back to C. Mono keeps only the W stage;
// mute returns f unchanged (same node).
nn::Var fuse(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg, int block,
             nn::Var f_chw, const AudioTokens& audio, int level, AttnProbe* probe = nullptr);

nn::Var decode(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg,
               const std::vector<nn::Var>& stages, const AudioTokens* audio,
               AttnProbe* probe = nullptr);

// frames.size() == cfg.frames, each sized to the input grid, luma in [0,255].
// clip may be null in mute mode (and is ignored when fusion is none).
nn::Var forward(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg,
                const std::vector<Map>& frames, const audio::BFormatClip* clip,
                AttnProbe* probe = nullptr);

struct LossBreakdown {
  double l1 = 0.0, cc = 0.0, kl = 0.0, bce = 0.0, total = 0.0;
  bool cc_degenerate = false;
};

struct LossVars {
  nn::Var l1, cc, kl, bce, total;
  bool cc_degenerate = false;
  LossBreakdown values() const;
};

// pred: [1,H,W] or [H,W] in (0,1). gt is normalized internally: a sum-1 copy
// for the KL term, a max-1 copy for L1/CC/BCE. A constant pred or gt makes the
// CC term degenerate: it is dropped (0, no gradient) and flagged.
LossVars saliency_losses(nn::Tape& t, nn::Var pred, const Map& gt, const ModelConfig& cfg);

Map to_map(nn::Var saliency, GridShape shape);

}  // namespace ovsal::model
