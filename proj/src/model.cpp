#include "ovsal/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "ovsal/errors.hpp"
#include "ovsal/rng.hpp"

namespace ovsal::model {

namespace {

constexpr int kDecoderDepth = ModelConfig::n_stages - 1;
constexpr int kAudioPatch = 16;

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

[[noreturn]] void cfg_fail(const std::string& msg) { throw ConfigError("model config: " + msg); }

}  // namespace

const char* to_string(Temporal v) {
  switch (v) {
    case Temporal::conv3d: return "conv3d";
    case Temporal::st_gru: return "st_gru";
    case Temporal::st_transformer: return "st_transformer";
  }
  return "?";
}

const char* to_string(Fusion v) {
  switch (v) {
    case Fusion::none: return "none";
    case Fusion::concat: return "concat";
    case Fusion::cross_transformer: return "cross_transformer";
  }
  return "?";
}

const char* to_string(AudioMode v) {
  switch (v) {
    case AudioMode::mute: return "mute";
    case AudioMode::mono: return "mono";
    case AudioMode::ambisonics: return "ambisonics";
  }
  return "?";
}

Temporal temporal_from_string(const std::string& s) {
  if (s == "conv3d") return Temporal::conv3d;
  if (s == "st_gru") return Temporal::st_gru;
  if (s == "st_transformer") return Temporal::st_transformer;
  cfg_fail("unknown temporal variant: " + s);
}

Fusion fusion_from_string(const std::string& s) {
  if (s == "none") return Fusion::none;
  if (s == "concat") return Fusion::concat;
  if (s == "cross_transformer") return Fusion::cross_transformer;
  cfg_fail("unknown fusion variant: " + s);
}

AudioMode audio_mode_from_string(const std::string& s) {
  if (s == "mute") return AudioMode::mute;
  if (s == "mono") return AudioMode::mono;
  if (s == "ambisonics") return AudioMode::ambisonics;
  cfg_fail("unknown audio mode: " + s);
}

void validate(const ModelConfig& cfg) {
  if (cfg.channels <= 0) cfg_fail("channels must be positive");
  if (cfg.heads <= 0 || cfg.channels % cfg.heads != 0) cfg_fail("heads must divide channels");
  if (cfg.frames < 1) cfg_fail("frames must be >= 1");
  if (cfg.frame_step < 1) cfg_fail("frame step must be >= 1");
  if (cfg.fusion_levels < 0 || cfg.fusion_levels > kDecoderDepth)
    cfg_fail("fusion levels must be in [0, " + std::to_string(kDecoderDepth) + "]");
  if (cfg.input_width < 1 || cfg.input_height < 1) cfg_fail("input grid must be positive");
  if (!is_pow2(cfg.patch)) cfg_fail("patch size must be a power of two");
  if (cfg.input_width % cfg.patch != 0 || cfg.input_height % cfg.patch != 0)
    cfg_fail("input grid must be divisible by the patch size");
  for (int i = 0; i < ModelConfig::n_stages; ++i) {
    const int d = cfg.schedule[i];
    if (!is_pow2(d))
      cfg_fail("schedule divisor at stage " + std::to_string(i + 1) + " must be a power of two");
    if (cfg.input_width % d != 0 || cfg.input_height % d != 0)
      cfg_fail("input grid must be divisible by the schedule divisor at stage " +
               std::to_string(i + 1));
    if (i > 0 && d < cfg.schedule[i - 1])
      cfg_fail("schedule divisors must be non-decreasing with depth");
  }
  if (!(cfg.kl_eps > 0.0)) cfg_fail("kl epsilon must be positive");
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["channels"] = cfg.channels;
  j["frames"] = cfg.frames;
  j["frame_step"] = cfg.frame_step;
  j["heads"] = cfg.heads;
  j["temporal"] = to_string(cfg.temporal);
  j["fusion"] = to_string(cfg.fusion);
  j["fusion_levels"] = cfg.fusion_levels;
  j["audio_mode"] = to_string(cfg.audio_mode);
  j["input_width"] = cfg.input_width;
  j["input_height"] = cfg.input_height;
  j["patch"] = cfg.patch;
  j["schedule"] = std::vector<int>(cfg.schedule.begin(), cfg.schedule.end());
  j["loss_weights"] = std::vector<double>(cfg.loss_weights.begin(), cfg.loss_weights.end());
  j["kl_eps"] = cfg.kl_eps;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) cfg_fail("expected a json object");
  static const std::set<std::string> known = {
      "channels",    "frames",      "frame_step",  "heads",        "temporal",
      "fusion",      "fusion_levels", "audio_mode", "input_width", "input_height",
      "patch",       "schedule",    "loss_weights", "kl_eps"};
  for (const auto& item : j.items())
    if (known.find(item.key()) == known.end()) cfg_fail("unknown key: " + item.key());

  ModelConfig cfg;
  try {
    auto geti = [&](const char* k, int& dst) {
      if (j.contains(k)) dst = j.at(k).get<int>();
    };
    geti("channels", cfg.channels);
    geti("frames", cfg.frames);
    geti("frame_step", cfg.frame_step);
    geti("heads", cfg.heads);
    geti("fusion_levels", cfg.fusion_levels);
    geti("input_width", cfg.input_width);
    geti("input_height", cfg.input_height);
    geti("patch", cfg.patch);
    if (j.contains("temporal")) cfg.temporal = temporal_from_string(j.at("temporal").get<std::string>());
    if (j.contains("fusion")) cfg.fusion = fusion_from_string(j.at("fusion").get<std::string>());
    if (j.contains("audio_mode"))
      cfg.audio_mode = audio_mode_from_string(j.at("audio_mode").get<std::string>());
    if (j.contains("schedule")) {
      auto v = j.at("schedule").get<std::vector<int>>();
      if (static_cast<int>(v.size()) != ModelConfig::n_stages)
        cfg_fail("schedule must list " + std::to_string(ModelConfig::n_stages) + " divisors");
      std::copy(v.begin(), v.end(), cfg.schedule.begin());
    }
    if (j.contains("loss_weights")) {
      auto v = j.at("loss_weights").get<std::vector<double>>();
      if (v.size() != 4) cfg_fail("loss_weights must list 4 weights");
      std::copy(v.begin(), v.end(), cfg.loss_weights.begin());
    }
    if (j.contains("kl_eps")) cfg.kl_eps = j.at("kl_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    cfg_fail(std::string("bad value: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Parameters

nn::Var ParamStore::get(nn::Tape& t, const std::string& name, nn::Shape shape, InitSpec init) {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    Entry e;
    e.shape = shape;
    e.v.resize(nn::numel(shape));
    Rng rng(hash64(name) ^ seed_);
    switch (init.kind) {
      case InitSpec::fill:
        std::fill(e.v.begin(), e.v.end(), init.a);
        break;
      case InitSpec::uniform:
        for (double& x : e.v) x = rng.uniform(-init.a, init.a);
        break;
      case InitSpec::normal:
        for (double& x : e.v) x = rng.normal() * init.a;
        break;
    }
    it = entries_.emplace(name, std::move(e)).first;
  } else if (it->second.shape != shape) {
    throw InternalError("parameter " + name + " requested with shape " + nn::shape_str(shape) +
                        " but stored as " + nn::shape_str(it->second.shape));
  }
  Entry& e = it->second;
  if (e.bound_tape == t.id() && e.node >= 0) return nn::Var{&t, e.node};
  nn::Var v = t.leaf(e.shape, e.v);
  e.bound_tape = t.id();
  e.node = v.idx;
  return v;
}

void ParamStore::sgd_step(nn::Tape& t, double lr) {
  if (lr == 0.0) return;  // exact no-op: leaves every parameter bit untouched
  for (auto& kv : entries_) {
    Entry& e = kv.second;
    if (e.bound_tape != t.id() || e.node < 0) continue;
    const std::vector<double>& g = t.node(e.node).g;
    for (std::size_t i = 0; i < e.v.size(); ++i) e.v[i] -= lr * g[i];
  }
}

std::size_t ParamStore::total_params() const {
  std::size_t n = 0;
  for (const auto& kv : entries_) n += kv.second.v.size();
  return n;
}

std::vector<double>& ParamStore::values(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw InternalError("no parameter named " + name);
  return it->second.v;
}

namespace {
constexpr char kParamMagic[8] = {'O', 'V', 'S', 'A', 'L', 'P', 'S', '1'};
}

void ParamStore::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInputError("cannot write parameter file: " + path);
  auto put = [&f](const void* p, std::size_t n) { f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
  put(kParamMagic, 8);
  const std::uint64_t seed = seed_, count = entries_.size();
  put(&seed, 8);
  put(&count, 8);
  for (const auto& kv : entries_) {
    const std::uint32_t len = static_cast<std::uint32_t>(kv.first.size());
    put(&len, 4);
    put(kv.first.data(), len);
    const std::uint32_t nd = static_cast<std::uint32_t>(kv.second.shape.size());
    put(&nd, 4);
    for (int d : kv.second.shape) {
      const std::int32_t dd = d;
      put(&dd, 4);
    }
    put(kv.second.v.data(), kv.second.v.size() * sizeof(double));
  }
  if (!f) throw InternalError("failed writing parameter file: " + path);
}

ParamStore ParamStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInputError("cannot open parameter file: " + path);
  auto take = [&f, &path](void* p, std::size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (f.gcount() != static_cast<std::streamsize>(n))
      throw FormatError("truncated parameter file: " + path);
  };
  char magic[8];
  take(magic, 8);
  if (!std::equal(magic, magic + 8, kParamMagic))
    throw FormatError("not a parameter file: " + path);
  std::uint64_t seed = 0, count = 0;
  take(&seed, 8);
  take(&count, 8);
  ParamStore ps(seed);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    take(&len, 4);
    std::string name(len, '\0');
    take(name.data(), len);
    std::uint32_t nd = 0;
    take(&nd, 4);
    if (nd > 8) throw FormatError("implausible tensor rank in parameter file: " + path);
    Entry e;
    e.shape.resize(nd);
    for (std::uint32_t d = 0; d < nd; ++d) {
      std::int32_t dd = 0;
      take(&dd, 4);
      if (dd <= 0) throw FormatError("non-positive dim in parameter file: " + path);
      e.shape[d] = dd;
    }
    e.v.resize(nn::numel(e.shape));
    take(e.v.data(), e.v.size() * sizeof(double));
    ps.entries_.emplace(std::move(name), std::move(e));
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Shared building blocks

namespace {

// LeCun-uniform weight init: Var[w] = 1/fan_in, so activation variance is
// preserved through the non-residual projections (decoder merges, fusion
// output projections) instead of shrinking ~3x per layer.
InitSpec init_lecun(double fan_in) { return init_uniform(std::sqrt(3.0 / fan_in)); }

nn::Var linear(nn::Tape& t, ParamStore& ps, const std::string& prefix, nn::Var x, int in, int out) {
  nn::Var w = ps.get(t, prefix + ".w", {in, out}, init_lecun(in));
  nn::Var b = ps.get(t, prefix + ".b", {out}, init_fill(0.0));
  return nn::add_bias(nn::matmul(x, w), b);
}

// layernorm over the trailing channel axis of token tensors [..., C]
nn::Var ln_tokens(nn::Tape& t, ParamStore& ps, const std::string& prefix, nn::Var x, int c) {
  nn::Var g = ps.get(t, prefix + ".g", {c}, init_fill(1.0));
  nn::Var b = ps.get(t, prefix + ".b", {c}, init_fill(0.0));
  return nn::layernorm_lastdim(x, g, b);
}

// layernorm over the channel axis of an image [C,h,w]
nn::Var ln_chw(nn::Tape& t, ParamStore& ps, const std::string& prefix, nn::Var x, int c) {
  nn::Var tok = nn::permute(x, {1, 2, 0});
  tok = ln_tokens(t, ps, prefix, tok, c);
  return nn::permute(tok, {2, 0, 1});
}

nn::Var chw_to_tokens(nn::Var x, int h, int w, int c) {
  return nn::reshape(nn::permute(x, {1, 2, 0}), {h * w, c});
}

nn::Var tokens_to_chw(nn::Var tok, int h, int w, int c) {
  return nn::permute(nn::reshape(tok, {h, w, c}), {2, 0, 1});
}

nn::Var ffn(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg, const std::string& prefix,
            nn::Var x) {
  const int c = cfg.channels;
  nn::Var h = nn::gelu(linear(t, ps, prefix + ".w1", x, c, 2 * c));
  return linear(t, ps, prefix + ".w2", h, 2 * c, c);
}

nn::Var mha(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg, const std::string& prefix,
            nn::Var q_in, nn::Var kv_in, AttnProbe* probe, const std::string& tag) {
  const int c = cfg.channels, heads = cfg.heads, dh = c / heads;
  nn::Var q = linear(t, ps, prefix + ".q", q_in, c, c);
  nn::Var k = linear(t, ps, prefix + ".k", kv_in, c, c);
  nn::Var v = linear(t, ps, prefix + ".v", kv_in, c, c);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<nn::Var> per_head;
  per_head.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    nn::Var qh = nn::slice(q, 1, h * dh, dh);
    nn::Var kh = nn::slice(k, 1, h * dh, dh);
    nn::Var vh = nn::slice(v, 1, h * dh, dh);
    nn::Var att = nn::softmax_lastdim(nn::scale(nn::matmul(qh, nn::permute(kh, {1, 0})), inv_sqrt));
    if (probe != nullptr) {
      AttnProbe::Rec rec;
      rec.tag = tag + ".h" + std::to_string(h);
      rec.rows = att.shape()[0];
      rec.cols = att.shape()[1];
      rec.v = att.val();
      probe->recs.push_back(std::move(rec));
    }
    per_head.push_back(nn::matmul(att, vh));
  }
  nn::Var cat = heads == 1 ? per_head[0] : nn::concat(per_head, 1);
  return linear(t, ps, prefix + ".o", cat, c, c);
}

// conv 3x3 to 4C channels + pixel shuffle: doubles spatial resolution
nn::Var up_block(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg, const std::string& prefix,
                 nn::Var x) {
  const int c = cfg.channels;
  nn::Var w = ps.get(t, prefix + ".w", {4 * c, c, 3, 3}, init_lecun(9.0 * c));
  nn::Var b = ps.get(t, prefix + ".b", {4 * c}, init_fill(0.0));
  return nn::pixel_shuffle(nn::conv2d(x, w, b, 1, 1, 1, nn::Pad::circular_lon), 2);
}

// Bring a feature map [C,h,w] to the stage's schedule resolution: identity
// resolution gets a plain 3x3 conv, coarser targets use 2x2 max pooling,
// finer targets use conv + pixel-shuffle doublings.
nn::Var rescale_feature(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg, nn::Var x,
                        int stage) {
  const int c = cfg.channels;
  const nn::Shape s = x.shape();
  int cur_h = s[1];
  const auto res = stage_resolution(cfg, stage);
  const std::string pre = "res" + std::to_string(stage + 1) + ".";
  if (res[0] == cur_h) {
    nn::Var w = ps.get(t, pre + "conv.w", {c, c, 3, 3}, init_lecun(9.0 * c));
    nn::Var b = ps.get(t, pre + "conv.b", {c}, init_fill(0.0));
    return nn::conv2d(x, w, b, 1, 1, 1, nn::Pad::circular_lon);
  }
  if (res[0] < cur_h) {
    while (cur_h > res[0]) {
      x = nn::maxpool2d(x);
      cur_h /= 2;
    }
    return x;
  }
  int k = 0;
  while (cur_h < res[0]) {
    x = up_block(t, ps, cfg, pre + "up" + std::to_string(++k), x);
    cur_h *= 2;
  }
  return x;
}

nn::Var collapse_time_conv3d(nn::Tape& t, ParamStore& ps, const std::string& prefix, nn::Var m,
                             int c, int frames, int h, int w) {
  nn::Var wt = ps.get(t, prefix + ".w", {c, c, frames, 3, 3}, init_lecun(9.0 * c * frames));
  nn::Var b = ps.get(t, prefix + ".b", {c}, init_fill(0.0));
  return nn::reshape(nn::conv3d(m, wt, b, 1, 1), {c, h, w});
}

struct GruParams {
  nn::Var wz, wr, wn;  // input weights [C,C]
  nn::Var uz, ur, un;  // hidden weights [C,C]
  nn::Var bz, br, bn;  // biases [C]
};

GruParams gru_params(nn::Tape& t, ParamStore& ps, const std::string& prefix, int c) {
  const InitSpec wi = init_lecun(c);
  GruParams p;
  p.wz = ps.get(t, prefix + ".wz", {c, c}, wi);
  p.wr = ps.get(t, prefix + ".wr", {c, c}, wi);
  p.wn = ps.get(t, prefix + ".wn", {c, c}, wi);
  p.uz = ps.get(t, prefix + ".uz", {c, c}, wi);
  p.ur = ps.get(t, prefix + ".ur", {c, c}, wi);
  p.un = ps.get(t, prefix + ".un", {c, c}, wi);
  p.bz = ps.get(t, prefix + ".bz", {c}, init_fill(0.0));
  p.br = ps.get(t, prefix + ".br", {c}, init_fill(0.0));
  p.bn = ps.get(t, prefix + ".bn", {c}, init_fill(0.0));
  return p;
}

// One GRU step on a batch of rows: x, h_prev [B,C] -> h [B,C]
nn::Var gru_step(const GruParams& p, nn::Var x, nn::Var h_prev) {
  nn::Var z = nn::sigmoid(nn::add(nn::add_bias(nn::matmul(x, p.wz), p.bz), nn::matmul(h_prev, p.uz)));
  nn::Var r = nn::sigmoid(nn::add(nn::add_bias(nn::matmul(x, p.wr), p.br), nn::matmul(h_prev, p.ur)));
  nn::Var n = nn::tanh_(nn::add(nn::add_bias(nn::matmul(x, p.wn), p.bn),
                                nn::matmul(nn::mul(r, h_prev), p.un)));
  // h = (1-z)*n + z*h_prev
  return nn::add(nn::sub(n, nn::mul(z, n)), nn::mul(z, h_prev));
}

nn::Var cat_or_single(std::vector<nn::Var>& xs, int axis) {
  return xs.size() == 1 ? xs[0] : nn::concat(xs, axis);
}

}  // namespace

std::array<int, 2> stage_resolution(const ModelConfig& cfg, int stage) {
  const int d = cfg.schedule[static_cast<std::size_t>(stage)];
  return {cfg.input_height / d, cfg.input_width / d};
}

// ---------------------------------------------------------------------------
// Audio branch

nn::Var mel_image(nn::Tape& t, const std::vector<double>& channel, double sample_rate) {
  const audio::MelSpectrogram m = audio::mel_spectrogram(channel, sample_rate);
  const int n = m.params.n_mels;  // square token image: n mel bins x n frames
  const double floor_log = std::log(1e-10);
  std::vector<double> img(static_cast<std::size_t>(n) * n);
  for (int f = 0; f < n; ++f) {
    const int src = m.n_frames - n + f;  // trailing frames; missing ones sit at the silence floor
    for (int mel = 0; mel < n; ++mel) {
      const double v = src >= 0 ? m.at(src, mel) : floor_log;
      img[static_cast<std::size_t>(mel) * n + f] = (v - floor_log) / 10.0;
    }
  }
  return t.constant({1, n, n}, img);
}

AudioTokens encode_audio(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg,
                         const audio::BFormatClip& clip) {
  const int c = cfg.channels;
  std::vector<const std::vector<double>*> chans;
  if (cfg.audio_mode == AudioMode::mono)
    chans = {&clip.w};
  else
    chans = {&clip.w, &clip.x, &clip.y, &clip.z};

  AudioTokens out;
  out.levels.resize(static_cast<std::size_t>(std::max(cfg.fusion_levels, 0)));

  for (const std::vector<double>* ch : chans) {  // stub weights shared across channels
    nn::Var img = mel_image(t, *ch, clip.sample_rate);
    const int n = img.shape()[1];
    const int grid = n / kAudioPatch;
    nn::Var w = ps.get(t, "aud.patch.w", {c, 1, kAudioPatch, kAudioPatch},
                       init_lecun(static_cast<double>(kAudioPatch) * kAudioPatch));
    nn::Var b = ps.get(t, "aud.patch.b", {c}, init_fill(0.0));
    nn::Var x = nn::conv2d(img, w, b, kAudioPatch, 0, 0, nn::Pad::zero);
    x = nn::add(x, ps.get(t, "aud.pos", {c, grid, grid}, init_normal(0.02)));
    nn::Var tok = chw_to_tokens(x, grid, grid, c);
    for (int j = 0; j < cfg.fusion_levels; ++j) {
      const std::string pre = "aud.b" + std::to_string(j + 1) + ".";
      nn::Var h = ln_tokens(t, ps, pre + "ln", tok, c);
      h = ffn(t, ps, cfg, pre + "ff", h);
      tok = nn::add(tok, h);
      out.levels[static_cast<std::size_t>(j)].push_back(tok);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Visual encoder

std::vector<nn::Var> encode_frames(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg,
                                   const std::vector<Map>& frames) {
  const int T = cfg.frames, c = cfg.channels, p = cfg.patch;
  if (static_cast<int>(frames.size()) != T)
    throw InvalidInputError("expected " + std::to_string(T) + " frames, got " +
                            std::to_string(frames.size()));
  for (const Map& f : frames)
    if (f.shape.width != cfg.input_width || f.shape.height != cfg.input_height)
      throw InvalidInputError("frame grid does not match the configured input grid");

  const int hp = cfg.input_height / p, wp = cfg.input_width / p;
  std::vector<std::vector<nn::Var>> taps(static_cast<std::size_t>(T));

  for (int ti = 0; ti < T; ++ti) {
    std::vector<double> v(frames[static_cast<std::size_t>(ti)].v);
    for (double& x : v) x /= 255.0;
    nn::Var x = t.constant({1, cfg.input_height, cfg.input_width}, v);
    nn::Var w = ps.get(t, "enc.patch.w", {c, 1, p, p},
                       init_lecun(static_cast<double>(p) * p));
    nn::Var b = ps.get(t, "enc.patch.b", {c}, init_fill(0.0));
    x = nn::conv2d(x, w, b, p, 0, 0, nn::Pad::zero);
    x = nn::add(x, ps.get(t, "enc.pos", {c, hp, wp}, init_normal(0.02)));
    taps[static_cast<std::size_t>(ti)].reserve(ModelConfig::n_stages);
    for (int i = 0; i < ModelConfig::n_stages; ++i) {
      const std::string pre = "enc.b" + std::to_string(i + 1) + ".";
      nn::Var h = ln_chw(t, ps, pre + "ln", x, c);
      nn::Var dw = ps.get(t, pre + "dw.w", {c, 1, 3, 3}, init_lecun(9.0));
      nn::Var db = ps.get(t, pre + "dw.b", {c}, init_fill(0.0));
      h = nn::conv2d(h, dw, db, 1, 1, 1, nn::Pad::circular_lon, c);
      nn::Var tok = chw_to_tokens(h, hp, wp, c);
      tok = ffn(t, ps, cfg, pre + "pw", tok);
      x = nn::add(x, tokens_to_chw(tok, hp, wp, c));
      taps[static_cast<std::size_t>(ti)].push_back(x);
    }
  }

  std::vector<nn::Var> stages(ModelConfig::n_stages);
  for (int s = 0; s < ModelConfig::n_stages; ++s) {
    const auto res = stage_resolution(cfg, s);
    if (s < 4) {
      // early stages keep only the current (last) frame
      stages[static_cast<std::size_t>(s)] =
          rescale_feature(t, ps, cfg, taps[static_cast<std::size_t>(T - 1)][static_cast<std::size_t>(s)], s);
    } else {
      std::vector<nn::Var> per_t;
      per_t.reserve(static_cast<std::size_t>(T));
      for (int ti = 0; ti < T; ++ti) {
        nn::Var r = rescale_feature(t, ps, cfg, taps[static_cast<std::size_t>(ti)][static_cast<std::size_t>(s)], s);
        per_t.push_back(nn::reshape(r, {1, c, res[0], res[1]}));
      }
      stages[static_cast<std::size_t>(s)] = nn::permute(cat_or_single(per_t, 0), {1, 0, 2, 3});
    }
  }
  return stages;
}

// ---------------------------------------------------------------------------
// Temporal aggregation

nn::Var temporal_aggregate(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg, nn::Var m,
                           int stage, AttnProbe* probe) {
  const nn::Shape s = m.shape();
  if (s.size() != 4)
    throw InvalidInputError("temporal aggregation expects [C,T,h,w], got " + nn::shape_str(s));
  const int c = s[0], T = s[1], h = s[2], w = s[3];
  if (c != cfg.channels || T != cfg.frames)
    throw InvalidInputError("temporal aggregation input does not match the config");
  const std::string pre = "tmp" + std::to_string(stage + 1) + ".";

  if (cfg.temporal == Temporal::conv3d)
    return collapse_time_conv3d(t, ps, pre + "c3", m, c, T, h, w);

  // token view [T, hw, C]
  nn::Var tok = nn::reshape(nn::permute(m, {1, 2, 3, 0}), {T, h * w, c});

  if (cfg.temporal == Temporal::st_gru) {
    // spatial GRU over the pixel sequence, batched across time steps
    const GruParams sp = gru_params(t, ps, pre + "sg", c);
    std::vector<double> zeros_t(static_cast<std::size_t>(T) * c, 0.0);
    nn::Var hs = t.constant({T, c}, zeros_t);
    std::vector<nn::Var> spatial_out;
    spatial_out.reserve(static_cast<std::size_t>(h) * w);
    for (int px = 0; px < h * w; ++px) {
      nn::Var x = nn::reshape(nn::slice(tok, 1, px, 1), {T, c});
      hs = gru_step(sp, x, hs);
      spatial_out.push_back(nn::reshape(hs, {1, T, c}));
    }
    nn::Var sp_tok = cat_or_single(spatial_out, 0);  // [hw, T, C]
    // temporal GRU over time, batched across pixels; final hidden is the output
    const GruParams tp = gru_params(t, ps, pre + "tg", c);
    std::vector<double> zeros_p(static_cast<std::size_t>(h) * w * c, 0.0);
    nn::Var hp = t.constant({h * w, c}, zeros_p);
    for (int ti = 0; ti < T; ++ti) {
      nn::Var x = nn::reshape(nn::slice(sp_tok, 1, ti, 1), {h * w, c});
      hp = gru_step(tp, x, hp);
    }
    return tokens_to_chw(hp, h, w, c);
  }

  // st_transformer: pre-LN residual spatial MSA (per time step), temporal MSA
  // (per pixel), FFN, then a conv3d collapse over time.
  {
    nn::Var ln = ln_tokens(t, ps, pre + "ln1", tok, c);
    std::vector<nn::Var> outs;
    outs.reserve(static_cast<std::size_t>(T));
    for (int ti = 0; ti < T; ++ti) {
      nn::Var x = nn::reshape(nn::slice(ln, 0, ti, 1), {h * w, c});
      nn::Var o = mha(t, ps, cfg, pre + "sa", x, x, probe, pre + "sa.t" + std::to_string(ti));
      outs.push_back(nn::reshape(o, {1, h * w, c}));
    }
    tok = nn::add(tok, cat_or_single(outs, 0));
  }
  {
    nn::Var ln = nn::permute(ln_tokens(t, ps, pre + "ln2", tok, c), {1, 0, 2});  // [hw, T, C]
    std::vector<nn::Var> outs;
    outs.reserve(static_cast<std::size_t>(h) * w);
    for (int px = 0; px < h * w; ++px) {
      nn::Var x = nn::reshape(nn::slice(ln, 0, px, 1), {T, c});
      nn::Var o = mha(t, ps, cfg, pre + "ta", x, x, probe, pre + "ta.p" + std::to_string(px));
      outs.push_back(nn::reshape(o, {1, T, c}));
    }
    tok = nn::add(tok, nn::permute(cat_or_single(outs, 0), {1, 0, 2}));
  }
  {
    nn::Var ln = ln_tokens(t, ps, pre + "ln3", tok, c);
    nn::Var f = ffn(t, ps, cfg, pre + "ff", nn::reshape(ln, {T * h * w, c}));
    tok = nn::add(tok, nn::reshape(f, {T, h * w, c}));
  }
  nn::Var back = nn::permute(nn::reshape(tok, {T, h, w, c}), {3, 0, 1, 2});
  return collapse_time_conv3d(t, ps, pre + "c3", back, c, T, h, w);
}

// ---------------------------------------------------------------------------
// Fusion

nn::Var cross_transformer(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg,
                          const std::string& prefix, nn::Var f, nn::Var a, AttnProbe* probe) {
  const int c = cfg.channels;
  if (f.shape().size() != 2 || f.shape()[1] != c || a.shape().size() != 2 || a.shape()[1] != c)
    throw InvalidInputError("cross transformer expects token matrices [n, channels]");
  nn::Var lnf = ln_tokens(t, ps, prefix + ".ln1", f, c);
  nn::Var f1 = nn::add(mha(t, ps, cfg, prefix + ".msa", lnf, lnf, probe, prefix + ".msa"), f);
  // queries are normalized; keys/values come from the raw audio tokens
  nn::Var f2 = nn::add(
      mha(t, ps, cfg, prefix + ".mca", ln_tokens(t, ps, prefix + ".ln2", f1, c), a, probe,
          prefix + ".mca"),
      f1);
  return nn::add(ffn(t, ps, cfg, prefix + ".ff", ln_tokens(t, ps, prefix + ".ln3", f2, c)), f2);
}

nn::Var fuse(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg, int block, nn::Var f_chw,
             const AudioTokens& audio, int level, AttnProbe* probe) {
  if (cfg.audio_mode == AudioMode::mute || cfg.fusion == Fusion::none) return f_chw;
  const nn::Shape s = f_chw.shape();
  const int c = s[0], h = s[1], w = s[2];
  const auto& toks = audio.levels.at(static_cast<std::size_t>(level));
  const std::string pre = "fuse" + std::to_string(block + 1) + ".";

  if (cfg.fusion == Fusion::concat) {
    // mean-pool every present channel's tokens into one vector, broadcast it
    // over the grid, channel-concat, and project back to C with a 1x1 conv
    std::vector<nn::Var> all(toks);
    nn::Var pool_in = cat_or_single(all, 0);
    const int n_all = pool_in.shape()[0];
    nn::Var mean_row = t.constant({1, n_all}, std::vector<double>(static_cast<std::size_t>(n_all),
                                                                  1.0 / n_all));
    nn::Var pooled = nn::reshape(nn::matmul(mean_row, pool_in), {c});
    nn::Var cat = nn::concat({f_chw, nn::tile_spatial(pooled, h, w)}, 0);
    nn::Var tok = nn::reshape(nn::permute(cat, {1, 2, 0}), {h * w, 2 * c});
    return tokens_to_chw(linear(t, ps, pre + "cat", tok, 2 * c, c), h, w, c);
  }

  // cross_transformer variant: semantic stage on the omni channel, then
  // parallel orientation stages with distinct weights
  nn::Var ftok = chw_to_tokens(f_chw, h, w, c);
  nn::Var fw = cross_transformer(t, ps, cfg, pre + "ctw", ftok, toks[0], probe);
  if (cfg.audio_mode == AudioMode::mono) return tokens_to_chw(fw, h, w, c);

  nn::Var fx = cross_transformer(t, ps, cfg, pre + "ctx", fw, toks[1], probe);
  nn::Var fy = cross_transformer(t, ps, cfg, pre + "cty", fw, toks[2], probe);
  nn::Var fz = cross_transformer(t, ps, cfg, pre + "ctz", fw, toks[3], probe);
  nn::Var cat = nn::concat({fx, fy, fz}, 1);  // [hw, 3C]
  return tokens_to_chw(linear(t, ps, pre + "proj", cat, 3 * c, c), h, w, c);
}

// ---------------------------------------------------------------------------
// Decoder

nn::Var decode(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg,
               const std::vector<nn::Var>& stages, const AudioTokens* audio, AttnProbe* probe) {
  if (static_cast<int>(stages.size()) != ModelConfig::n_stages)
    throw InvalidInputError("decoder expects one feature per stage");
  const int c = cfg.channels;
  const bool fusing =
      cfg.fusion != Fusion::none && cfg.audio_mode != AudioMode::mute && audio != nullptr;

  nn::Var d = stages[ModelConfig::n_stages - 1];
  int cur_div = cfg.schedule[ModelConfig::n_stages - 1];
  for (int b = 0; b < kDecoderDepth; ++b) {
    const std::string pre = "dec" + std::to_string(b + 1) + ".";
    if (fusing && b < cfg.fusion_levels) {
      const int level = cfg.fusion_levels - 1 - b;  // deepest block reads the deepest audio stage
      d = fuse(t, ps, cfg, b, d, *audio, level, probe);
    }
    const int skip_stage = kDecoderDepth - 1 - b;
    const int skip_div = cfg.schedule[static_cast<std::size_t>(skip_stage)];
    int k = 0;
    while (cur_div > skip_div) {
      d = up_block(t, ps, cfg, pre + "up" + std::to_string(++k), d);
      cur_div /= 2;
    }
    const auto res = stage_resolution(cfg, skip_stage);
    nn::Var cat = nn::concat({d, stages[static_cast<std::size_t>(skip_stage)]}, 0);
    nn::Var tok = nn::reshape(nn::permute(cat, {1, 2, 0}), {res[0] * res[1], 2 * c});
    d = tokens_to_chw(linear(t, ps, pre + "merge", tok, 2 * c, c), res[0], res[1], c);
  }

  int k = 0;
  while (cur_div > 1) {
    d = up_block(t, ps, cfg, "head.up" + std::to_string(++k), d);
    cur_div /= 2;
  }
  nn::Var tok = chw_to_tokens(d, cfg.input_height, cfg.input_width, c);
  tok = linear(t, ps, "head.out", tok, c, 1);
  return nn::reshape(nn::sigmoid(tok), {1, cfg.input_height, cfg.input_width});
}

// ---------------------------------------------------------------------------
// Full forward

nn::Var forward(nn::Tape& t, ParamStore& ps, const ModelConfig& cfg,
                const std::vector<Map>& frames, const audio::BFormatClip* clip,
                AttnProbe* probe) {
  validate(cfg);
  std::vector<nn::Var> stages = encode_frames(t, ps, cfg, frames);
  for (int s = 4; s < ModelConfig::n_stages; ++s)
    stages[static_cast<std::size_t>(s)] =
        temporal_aggregate(t, ps, cfg, stages[static_cast<std::size_t>(s)], s, probe);

  const bool need_audio = cfg.fusion != Fusion::none && cfg.audio_mode != AudioMode::mute &&
                          cfg.fusion_levels > 0;
  AudioTokens atoks;
  if (need_audio) {
    if (clip == nullptr)
      throw InvalidInputError("audio clip required unless the audio mode is mute or fusion is off");
    atoks = encode_audio(t, ps, cfg, *clip);
  }
  return decode(t, ps, cfg, stages, need_audio ? &atoks : nullptr, probe);
}

Map to_map(nn::Var saliency, GridShape shape) {
  if (saliency.size() != static_cast<std::size_t>(shape.npix()))
    throw InvalidInputError("saliency tensor does not match the requested grid");
  Map m(shape);
  m.v = saliency.val();
  return m;
}

// ---------------------------------------------------------------------------
// Losses

LossBreakdown LossVars::values() const {
  return {l1.val()[0], cc.val()[0], kl.val()[0], bce.val()[0], total.val()[0], cc_degenerate};
}

LossVars saliency_losses(nn::Tape& t, nn::Var pred, const Map& gt, const ModelConfig& cfg) {
  const nn::Shape s = pred.shape();
  int h = 0, w = 0;
  if (s.size() == 3 && s[0] == 1) {
    h = s[1];
    w = s[2];
  } else if (s.size() == 2) {
    h = s[0];
    w = s[1];
  } else {
    throw InvalidInputError("loss expects a prediction shaped [1,H,W] or [H,W]");
  }
  if (h != gt.shape.height || w != gt.shape.width)
    throw InvalidInputError("prediction and target grids differ");
  const int n = h * w;

  const double gmax = *std::max_element(gt.v.begin(), gt.v.end());
  const double gsum = std::accumulate(gt.v.begin(), gt.v.end(), 0.0);
  if (!(gmax > 0.0) || !(gsum > 0.0))
    throw InvalidInputError("target saliency map has no positive mass");
  std::vector<double> g1(gt.v), gs(gt.v);
  for (double& x : g1) x /= gmax;
  for (double& x : gs) x /= gsum;

  nn::Var pd = nn::reshape(pred, {n});
  nn::Var g1c = t.constant({n}, g1);
  nn::Var gsc = t.constant({n}, gs);

  nn::Var l1 = nn::sum_all(nn::abs_(nn::sub(g1c, pd)));

  // CC on centered signals; the target side is constant so it is pre-centered
  // numerically. A constant pred or target has no defined correlation: drop
  // the term and flag it.
  auto pop_std = [](const std::vector<double>& v) {
    double s1 = 0.0, s2 = 0.0;
    for (double x : v) {
      s1 += x;
      s2 += x * x;
    }
    const double mean = s1 / static_cast<double>(v.size());
    const double var = s2 / static_cast<double>(v.size()) - mean * mean;
    return std::sqrt(var > 0.0 ? var : 0.0);
  };
  const double sd_g = pop_std(g1);
  const bool degenerate = pop_std(pred.val()) < 1e-12 || sd_g < 1e-12;
  nn::Var cc = t.scalar(0.0);
  if (!degenerate) {
    double gmean = std::accumulate(g1.begin(), g1.end(), 0.0) / n;
    std::vector<double> gcent(g1);
    for (double& x : gcent) x -= gmean;
    nn::Var gcc = t.constant({n}, gcent);
    nn::Var neg_mean = nn::scale(nn::mean_all(pd), -1.0);
    nn::Var cp = nn::reshape(nn::add_bias(nn::reshape(pd, {n, 1}), neg_mean), {n});
    nn::Var cov = nn::mean_all(nn::mul(cp, gcc));
    nn::Var sd_p = nn::sqrt_(nn::mean_all(nn::mul(cp, cp)));
    cc = nn::scale(nn::divide(cov, nn::scale(sd_p, sd_g)), -1.0);
  }

  nn::Var kl = nn::sum_all(nn::mul(
      gsc, nn::log_(nn::add_scalar(nn::divide(gsc, nn::add_scalar(pd, cfg.kl_eps)), cfg.kl_eps))));

  std::vector<double> om(g1);
  for (double& x : om) x = 1.0 - x;
  nn::Var omc = t.constant({n}, om);
  nn::Var ones = t.constant({n}, std::vector<double>(static_cast<std::size_t>(n), 1.0));
  nn::Var bce = nn::scale(nn::mean_all(nn::add(nn::mul(g1c, nn::log_(pd)),
                                               nn::mul(omc, nn::log_(nn::sub(ones, pd))))),
                          -1.0);

  const auto& lw = cfg.loss_weights;
  nn::Var total = nn::add(nn::add(nn::scale(l1, lw[0]), nn::scale(cc, lw[1])),
                          nn::add(nn::scale(kl, lw[2]), nn::scale(bce, lw[3])));
  LossVars lv;
  lv.l1 = l1;
  lv.cc = cc;
  lv.kl = kl;
  lv.bce = bce;
  lv.total = total;
  lv.cc_degenerate = degenerate;
  return lv;
}

}  // namespace ovsal::model
