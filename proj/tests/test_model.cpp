#include "ovsal/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>

#include "doctest.h"
#include "ovsal/audio.hpp"
#include "ovsal/errors.hpp"
#include "ovsal/rng.hpp"

using namespace ovsal;
using namespace ovsal::model;

namespace {

std::vector<double> rnd_vec(std::size_t n, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Small config that still exercises every unit: 4x2 token grid, two frames,
// fusion on the three deepest decoder blocks.
ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.channels = 4;
  cfg.frames = 2;
  cfg.frame_step = 2;
  cfg.heads = 2;
  cfg.input_width = 16;
  cfg.input_height = 8;
  cfg.patch = 4;
  cfg.schedule = {4, 8, 8, 8, 8, 8, 8};
  cfg.fusion_levels = 3;
  return cfg;
}

std::vector<Map> make_frames(const ModelConfig& cfg, std::uint64_t seed) {
  std::vector<Map> frames;
  Rng rng(seed);
  for (int t = 0; t < cfg.frames; ++t) {
    Map m(GridShape{cfg.input_width, cfg.input_height});
    for (double& x : m.v) x = rng.uniform(0.0, 255.0);
    frames.push_back(std::move(m));
  }
  return frames;
}

audio::BFormatClip make_clip(std::uint64_t seed, double lat_deg, double lon_deg,
                             int n_samples = 8000) {
  std::vector<double> sig = rnd_vec(static_cast<std::size_t>(n_samples), seed, -1.0, 1.0);
  return audio::encode_point_source(sig, 16000.0, sphere::SphericalCoord{lat_deg, lon_deg});
}

// Central-difference gradient check for graphs built from ParamStore entries
// plus explicit input buffers. The builder must create one tape leaf per input
// buffer (reporting it via input_vars) and return a scalar.
using Builder = std::function<nn::Var(nn::Tape&, ParamStore&, const std::vector<std::vector<double>>&,
                                      std::vector<nn::Var>*)>;

void model_gradcheck(const Builder& build, ParamStore& ps,
                     std::vector<std::vector<double>> inputs) {
  nn::Tape t0;
  std::vector<nn::Var> ivars;
  nn::Var y = build(t0, ps, inputs, &ivars);
  REQUIRE(y.size() == 1);
  t0.backward(y);

  REQUIRE(ivars.size() == inputs.size());
  std::vector<std::vector<double>> igrad;
  for (nn::Var v : ivars) igrad.push_back(v.grad());
  std::vector<std::pair<std::string, std::vector<double>>> pgrad;
  for (const auto& kv : ps.entries())
    if (kv.second.bound_tape == t0.id() && kv.second.node >= 0)
      pgrad.emplace_back(kv.first, t0.node(kv.second.node).g);

  auto eval = [&]() {
    nn::Tape t;
    return build(t, ps, inputs, nullptr).val()[0];
  };
  const double h = 1e-5;
  auto check = [&](const std::string& what, double ad, double fd) {
    const double tol = 1e-4 * std::max({1.0, std::abs(ad), std::abs(fd)});
    CHECK_MESSAGE(std::abs(ad - fd) <= tol,
                  what, ": analytic ", ad, " vs numeric ", fd);
  };

  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double keep = inputs[k][i];
      inputs[k][i] = keep + h;
      const double fp = eval();
      inputs[k][i] = keep - h;
      const double fm = eval();
      inputs[k][i] = keep;
      check("input " + std::to_string(k) + "[" + std::to_string(i) + "]", igrad[k][i],
            (fp - fm) / (2.0 * h));
    }
  for (const auto& pg : pgrad) {
    std::vector<double>& v = ps.values(pg.first);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double fp = eval();
      v[i] = keep - h;
      const double fm = eval();
      v[i] = keep;
      check(pg.first + "[" + std::to_string(i) + "]", pg.second[i], (fp - fm) / (2.0 * h));
    }
  }
}

nn::Var checked_leaf(nn::Tape& t, nn::Shape shape, const std::vector<double>& vals,
                     std::vector<nn::Var>* out) {
  nn::Var v = t.leaf(std::move(shape), vals);
  if (out != nullptr) out->push_back(v);
  return v;
}

ModelConfig grad_cfg(Temporal tv) {
  ModelConfig cfg;
  cfg.channels = 2;
  cfg.frames = 2;
  cfg.heads = 2;
  cfg.temporal = tv;
  cfg.input_width = 8;
  cfg.input_height = 8;
  cfg.patch = 4;
  cfg.schedule = {4, 4, 4, 4, 4, 4, 4};
  return cfg;
}

}  // namespace

TEST_CASE("model config json round trip and validation") {
  ModelConfig cfg;
  validate(cfg);  // defaults are valid
  nlohmann::json j = config_to_json(cfg);
  ModelConfig back = config_from_json(j);
  CHECK(back.channels == cfg.channels);
  CHECK(back.frames == cfg.frames);
  CHECK(back.temporal == cfg.temporal);
  CHECK(back.fusion == cfg.fusion);
  CHECK(back.audio_mode == cfg.audio_mode);
  CHECK(back.schedule == cfg.schedule);
  CHECK(back.loss_weights == cfg.loss_weights);
  CHECK(back.kl_eps == cfg.kl_eps);

  // partial override keeps remaining defaults
  ModelConfig part = config_from_json(nlohmann::json{{"channels", 16}, {"temporal", "st_gru"}});
  CHECK(part.channels == 16);
  CHECK(part.temporal == Temporal::st_gru);
  CHECK(part.frames == cfg.frames);

  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"chanels", 16}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"temporal", "lstm"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"schedule", {4, 8}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ConfigError);

  ModelConfig bad = cfg;
  bad.heads = 5;  // does not divide 32
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.schedule[2] = 12;  // not a power of two
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.schedule[6] = 16;  // decreasing with depth
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.fusion_levels = 7;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.input_width = 60;  // not divisible by 32
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.frames = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("param store: deterministic init independent of creation order") {
  ParamStore a(42), b(42), c(43);
  nn::Tape t1, t2, t3;
  nn::Var w1 = a.get(t1, "x.w", {3, 4}, init_uniform(0.5));
  a.get(t1, "y.w", {2}, init_normal(0.02));
  b.get(t2, "y.w", {2}, init_normal(0.02));  // opposite creation order
  nn::Var w2 = b.get(t2, "x.w", {3, 4}, init_uniform(0.5));
  CHECK(w1.val() == w2.val());
  CHECK(a.values("y.w") == b.values("y.w"));

  nn::Var w3 = c.get(t3, "x.w", {3, 4}, init_uniform(0.5));
  CHECK(w1.val() != w3.val());  // different seed, different values

  // fill inits are exact
  nn::Var g = a.get(t1, "ln.g", {5}, init_fill(1.0));
  CHECK(g.val() == std::vector<double>(5, 1.0));

  // binding twice on one tape returns the same node
  nn::Var again = a.get(t1, "x.w", {3, 4}, init_uniform(0.5));
  CHECK(again.idx == w1.idx);
  // a fresh tape re-binds
  nn::Tape t4;
  nn::Var fresh = a.get(t4, "x.w", {3, 4}, init_uniform(0.5));
  CHECK(fresh.val() == w1.val());

  // shape conflicts are internal errors
  CHECK_THROWS_AS(a.get(t1, "x.w", {4, 3}, init_uniform(0.5)), InternalError);
}

TEST_CASE("param store: sgd step and zero-lr bitwise no-op") {
  ParamStore ps(7);
  nn::Tape t;
  nn::Var w = ps.get(t, "w", {2, 2}, init_uniform(1.0));
  const std::vector<double> before = w.val();
  nn::Var loss = nn::sum_all(nn::mul(w, w));
  t.backward(loss);

  ParamStore zero = ps;
  zero.sgd_step(t, 0.0);
  CHECK(std::memcmp(zero.values("w").data(), before.data(), before.size() * sizeof(double)) == 0);

  ps.sgd_step(t, 0.1);
  const std::vector<double>& after = ps.values("w");
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(after[i] == doctest::Approx(before[i] - 0.1 * 2.0 * before[i]).epsilon(1e-12));
}

TEST_CASE("param store: binary round trip and format errors") {
  ParamStore ps(99);
  nn::Tape t;
  ps.get(t, "a.w", {2, 3}, init_uniform(0.7));
  ps.get(t, "b.b", {4}, init_normal(0.02));
  const std::string path = "params_roundtrip.bin";
  ps.save(path);

  ParamStore back = ParamStore::load(path);
  CHECK(back.seed() == 99);
  CHECK(back.n_tensors() == 2);
  CHECK(back.values("a.w") == ps.values("a.w"));
  CHECK(back.values("b.b") == ps.values("b.b"));
  CHECK(back.entries().at("a.w").shape == nn::Shape{2, 3});

  CHECK_THROWS_AS(ParamStore::load("no_such_params.bin"), InvalidInputError);

  // corrupt magic
  {
    std::FILE* f = std::fopen("params_badmagic.bin", "wb");
    std::fputs("NOTPARAMS", f);
    std::fclose(f);
    CHECK_THROWS_AS(ParamStore::load("params_badmagic.bin"), FormatError);
  }
  // truncated
  {
    std::FILE* src = std::fopen(path.c_str(), "rb");
    char buf[64];
    std::size_t n = std::fread(buf, 1, sizeof buf, src);
    std::fclose(src);
    std::FILE* f = std::fopen("params_trunc.bin", "wb");
    std::fwrite(buf, 1, n, f);
    std::fclose(f);
    CHECK_THROWS_AS(ParamStore::load("params_trunc.bin"), FormatError);
  }
  std::remove(path.c_str());
  std::remove("params_badmagic.bin");
  std::remove("params_trunc.bin");
}

TEST_CASE("encoder stage features have the scheduled shapes and time extents") {
  const ModelConfig cfg = tiny_cfg();
  ParamStore ps(1);
  nn::Tape t;
  std::vector<Map> frames = make_frames(cfg, 5);
  std::vector<nn::Var> stages = encode_frames(t, ps, cfg, frames);
  REQUIRE(stages.size() == 7);
  for (int s = 0; s < 7; ++s) {
    const auto res = stage_resolution(cfg, s);
    if (s < 4) {
      CHECK(stages[s].shape() == nn::Shape{cfg.channels, res[0], res[1]});
    } else {
      CHECK(stages[s].shape() == nn::Shape{cfg.channels, cfg.frames, res[0], res[1]});
    }
  }
  // resolution schedule on the default config: stage 1 matches the 4x-patch
  // token grid, the deep stages sit at 1/32 of the input
  ModelConfig dflt;
  CHECK(stage_resolution(dflt, 0) == std::array<int, 2>{8, 16});
  CHECK(stage_resolution(dflt, 6) == std::array<int, 2>{1, 2});

  CHECK_THROWS_AS(encode_frames(t, ps, cfg, std::vector<Map>(1, frames[0])), InvalidInputError);
  std::vector<Map> wrong(2, Map(GridShape{8, 8}));
  CHECK_THROWS_AS(encode_frames(t, ps, cfg, wrong), InvalidInputError);
}

TEST_CASE("forward: output shape, range, and run-to-run bitwise determinism") {
  const ModelConfig cfg = tiny_cfg();
  std::vector<Map> frames = make_frames(cfg, 5);
  audio::BFormatClip clip = make_clip(6, 10.0, 120.0);

  auto run = [&](std::uint64_t seed) {
    ParamStore ps(seed);
    nn::Tape t;
    nn::Var y = forward(t, ps, cfg, frames, &clip);
    return y.val();
  };
  std::vector<double> y1 = run(3);
  std::vector<double> y2 = run(3);
  REQUIRE(y1.size() == static_cast<std::size_t>(cfg.input_width * cfg.input_height));
  for (double v : y1) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(double)) == 0);
  CHECK(run(4) != y1);  // another seed gives another map

  // shape of the tensor itself
  ParamStore ps(3);
  nn::Tape t;
  nn::Var y = forward(t, ps, cfg, frames, &clip);
  CHECK(y.shape() == nn::Shape{1, cfg.input_height, cfg.input_width});
  Map m = to_map(y, GridShape{cfg.input_width, cfg.input_height});
  CHECK(m.v == y.val());

  // missing audio clip only hurts when fusion needs it
  CHECK_THROWS_AS(forward(t, ps, cfg, frames, nullptr), InvalidInputError);
}

TEST_CASE("temporal aggregation: gradients for all three variants") {
  const std::vector<double> m0 = rnd_vec(2 * 2 * 2 * 2, 21, -1.2, 1.2);
  const std::vector<double> probe_w = rnd_vec(2 * 2 * 2, 22, -1.0, 1.0);
  for (Temporal tv : {Temporal::conv3d, Temporal::st_gru, Temporal::st_transformer}) {
    CAPTURE(to_string(tv));
    ModelConfig cfg = grad_cfg(tv);
    ParamStore ps(31);
    Builder build = [&cfg](nn::Tape& t, ParamStore& p,
                           const std::vector<std::vector<double>>& in,
                           std::vector<nn::Var>* iv) {
      nn::Var m = checked_leaf(t, {2, 2, 2, 2}, in[0], iv);
      nn::Var y = temporal_aggregate(t, p, cfg, m, 4);
      nn::Var w = checked_leaf(t, {2, 2, 2}, in[1], iv);
      return nn::sum_all(nn::mul(y, w));
    };
    model_gradcheck(build, ps, {m0, probe_w});
  }

  // shape contract
  ModelConfig cfg = grad_cfg(Temporal::conv3d);
  ParamStore ps(1);
  nn::Tape t;
  nn::Var bad = t.leaf({2, 2, 2}, rnd_vec(8, 1, -1, 1));
  CHECK_THROWS_AS(temporal_aggregate(t, ps, cfg, bad, 4), InvalidInputError);
}

TEST_CASE("cross transformer and fusion stack: gradients") {
  ModelConfig cfg = grad_cfg(Temporal::st_transformer);
  const std::vector<double> f0 = rnd_vec(3 * 2, 41, -1.0, 1.0);
  const std::vector<double> a0 = rnd_vec(2 * 2, 42, -1.0, 1.0);
  {
    ParamStore ps(51);
    Builder build = [&cfg](nn::Tape& t, ParamStore& p,
                           const std::vector<std::vector<double>>& in,
                           std::vector<nn::Var>* iv) {
      nn::Var f = checked_leaf(t, {3, 2}, in[0], iv);
      nn::Var a = checked_leaf(t, {2, 2}, in[1], iv);
      nn::Var y = cross_transformer(t, p, cfg, "ct", f, a);
      nn::Var w = checked_leaf(t, {3, 2}, in[2], iv);
      return nn::sum_all(nn::mul(y, w));
    };
    model_gradcheck(build, ps, {f0, a0, rnd_vec(3 * 2, 43, -1.0, 1.0)});
  }

  // full fuse block, ambisonics + cross_transformer
  {
    ParamStore ps(52);
    cfg.fusion_levels = 1;
    Builder build = [&cfg](nn::Tape& t, ParamStore& p,
                           const std::vector<std::vector<double>>& in,
                           std::vector<nn::Var>* iv) {
      nn::Var f = checked_leaf(t, {2, 2, 2}, in[0], iv);
      AudioTokens toks;
      toks.levels.resize(1);
      for (int c = 0; c < 4; ++c)
        toks.levels[0].push_back(checked_leaf(t, {2, 2}, in[1 + c], iv));
      nn::Var y = fuse(t, p, cfg, 0, f, toks, 0);
      nn::Var w = checked_leaf(t, {2, 2, 2}, in[5], iv);
      return nn::sum_all(nn::mul(y, w));
    };
    std::vector<std::vector<double>> inputs;
    inputs.push_back(rnd_vec(8, 61, -1.0, 1.0));
    for (int c = 0; c < 4; ++c) inputs.push_back(rnd_vec(4, 62 + c, -1.0, 1.0));
    inputs.push_back(rnd_vec(8, 69, -1.0, 1.0));
    model_gradcheck(build, ps, inputs);
  }

  // concat fusion variant
  {
    ParamStore ps(53);
    cfg.fusion = Fusion::concat;
    cfg.fusion_levels = 1;
    Builder build = [&cfg](nn::Tape& t, ParamStore& p,
                           const std::vector<std::vector<double>>& in,
                           std::vector<nn::Var>* iv) {
      nn::Var f = checked_leaf(t, {2, 2, 2}, in[0], iv);
      AudioTokens toks;
      toks.levels.resize(1);
      for (int c = 0; c < 4; ++c)
        toks.levels[0].push_back(checked_leaf(t, {2, 2}, in[1 + c], iv));
      nn::Var y = fuse(t, p, cfg, 0, f, toks, 0);
      nn::Var w = checked_leaf(t, {2, 2, 2}, in[5], iv);
      return nn::sum_all(nn::mul(y, w));
    };
    std::vector<std::vector<double>> inputs;
    inputs.push_back(rnd_vec(8, 71, -1.0, 1.0));
    for (int c = 0; c < 4; ++c) inputs.push_back(rnd_vec(4, 72 + c, -1.0, 1.0));
    inputs.push_back(rnd_vec(8, 79, -1.0, 1.0));
    model_gradcheck(build, ps, inputs);
  }
}

TEST_CASE("loss terms: gradients and reference values") {
  ModelConfig cfg;  // default weights 1, .2, .2, 1 and kl_eps 1e-7
  const GridShape gs{3, 3};
  Map gt(gs);
  for (int i = 0; i < 9; ++i) gt.v[i] = (i + 1 <= 8 ? i + 1 : 10) / 10.0 * 0.8;
  // pred kept >= 0.03 away from the max-1 target so |.| has no kink nearby,
  // and strictly inside (0,1) for the log terms
  std::vector<double> p0(9);
  {
    const double gmax = *std::max_element(gt.v.begin(), gt.v.end());
    for (int i = 0; i < 9; ++i) {
      double g1 = gt.v[i] / gmax;
      p0[i] = std::min(0.95, std::max(0.05, g1 > 0.5 ? g1 - 0.17 : g1 + 0.17));
    }
  }

  {
    ParamStore ps(81);  // unused by the loss; harness needs one
    Builder build = [&cfg, &gt](nn::Tape& t, ParamStore&,
                                const std::vector<std::vector<double>>& in,
                                std::vector<nn::Var>* iv) {
      nn::Var pred = checked_leaf(t, {3, 3}, in[0], iv);
      return saliency_losses(t, pred, gt, cfg).total;
    };
    model_gradcheck(build, ps, {p0});
  }

  // independent reference computation
  nn::Tape t;
  nn::Var pred = t.leaf({3, 3}, p0);
  LossVars lv = saliency_losses(t, pred, gt, cfg);
  LossBreakdown lb = lv.values();
  {
    const double gmax = *std::max_element(gt.v.begin(), gt.v.end());
    const double gsum = std::accumulate(gt.v.begin(), gt.v.end(), 0.0);
    double l1 = 0.0, bce = 0.0, kl = 0.0;
    double sp = 0.0, sg = 0.0, spp = 0.0, sgg = 0.0, spg = 0.0;
    for (int i = 0; i < 9; ++i) {
      const double g1 = gt.v[i] / gmax, gs1 = gt.v[i] / gsum, p = p0[i];
      l1 += std::abs(g1 - p);
      bce += -(g1 * std::log(p) + (1.0 - g1) * std::log(1.0 - p));
      kl += gs1 * std::log(cfg.kl_eps + gs1 / (cfg.kl_eps + p));
      sp += p;
      sg += g1;
      spp += p * p;
      sgg += g1 * g1;
      spg += p * g1;
    }
    bce /= 9.0;
    const double n = 9.0;
    const double cov = spg / n - (sp / n) * (sg / n);
    const double sdp = std::sqrt(spp / n - (sp / n) * (sp / n));
    const double sdg = std::sqrt(sgg / n - (sg / n) * (sg / n));
    const double cc = -cov / (sdp * sdg);
    CHECK(lb.l1 == doctest::Approx(l1).epsilon(1e-9));
    CHECK(lb.bce == doctest::Approx(bce).epsilon(1e-9));
    CHECK(lb.kl == doctest::Approx(kl).epsilon(1e-9));
    CHECK(lb.cc == doctest::Approx(cc).epsilon(1e-9));
    CHECK_FALSE(lb.cc_degenerate);
    const auto& w = cfg.loss_weights;
    CHECK(std::abs(lb.total - (w[0] * lb.l1 + w[1] * lb.cc + w[2] * lb.kl + w[3] * lb.bce)) <
          1e-9);
  }

  // constant prediction and target: bce == ln 2, cc degenerate and dropped
  {
    Map flat(gs);
    std::fill(flat.v.begin(), flat.v.end(), 0.5);
    nn::Var half = t.leaf({3, 3}, std::vector<double>(9, 0.5));
    LossVars dl = saliency_losses(t, half, flat, cfg);
    LossBreakdown db = dl.values();
    CHECK(db.cc_degenerate);
    CHECK(db.cc == 0.0);
    CHECK(db.bce == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(db.l1 == doctest::Approx(9 * 0.5).epsilon(1e-12));
  }

  // bad inputs
  Map empty_mass(gs);
  CHECK_THROWS_AS(saliency_losses(t, pred, empty_mass, cfg), InvalidInputError);
  Map wrong(GridShape{2, 2});
  wrong.v.assign(4, 1.0);
  CHECK_THROWS_AS(saliency_losses(t, pred, wrong, cfg), InvalidInputError);
  nn::Var bad_rank = t.leaf({9}, p0);
  CHECK_THROWS_AS(saliency_losses(t, bad_rank, gt, cfg), InvalidInputError);
}

TEST_CASE("attention probe: rows sum to one; identical time steps attend uniformly") {
  // full forward exposes spatial, temporal, self and cross attention maps
  {
    const ModelConfig cfg = tiny_cfg();
    ParamStore ps(91);
    nn::Tape t;
    AttnProbe probe;
    std::vector<Map> frames = make_frames(cfg, 7);
    audio::BFormatClip clip = make_clip(8, -20.0, 250.0);
    forward(t, ps, cfg, frames, &clip, &probe);
    REQUIRE(!probe.recs.empty());
    bool saw_sa = false, saw_ta = false, saw_msa = false, saw_mca = false;
    for (const auto& rec : probe.recs) {
      saw_sa = saw_sa || rec.tag.find(".sa.") != std::string::npos;
      saw_ta = saw_ta || rec.tag.find(".ta.") != std::string::npos;
      saw_msa = saw_msa || rec.tag.find(".msa.") != std::string::npos;
      saw_mca = saw_mca || rec.tag.find(".mca.") != std::string::npos;
      REQUIRE(rec.v.size() == static_cast<std::size_t>(rec.rows) * rec.cols);
      for (int r = 0; r < rec.rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < rec.cols; ++c) s += rec.v[static_cast<std::size_t>(r) * rec.cols + c];
        CHECK_MESSAGE(std::abs(s - 1.0) < 1e-9, rec.tag, " row ", r, " sums to ", s);
      }
    }
    CHECK(saw_sa);
    CHECK(saw_ta);
    CHECK(saw_msa);
    CHECK(saw_mca);
  }

  // identical time steps -> temporal attention is uniform 1/T at every head
  {
    ModelConfig cfg = grad_cfg(Temporal::st_transformer);
    cfg.frames = 4;
    ParamStore ps(92);
    nn::Tape t;
    const int c = 2, T = 4, h = 2, w = 2;
    std::vector<double> base = rnd_vec(static_cast<std::size_t>(c) * h * w, 93, -1.0, 1.0);
    std::vector<double> m(static_cast<std::size_t>(c) * T * h * w);
    for (int ci = 0; ci < c; ++ci)
      for (int ti = 0; ti < T; ++ti)
        for (int px = 0; px < h * w; ++px)
          m[(static_cast<std::size_t>(ci) * T + ti) * (h * w) + px] =
              base[static_cast<std::size_t>(ci) * (h * w) + px];
    AttnProbe probe;
    temporal_aggregate(t, ps, cfg, t.constant({c, T, h, w}, m), 4, &probe);
    int n_ta = 0;
    for (const auto& rec : probe.recs) {
      if (rec.tag.find(".ta.") == std::string::npos) continue;
      ++n_ta;
      CHECK(rec.cols == T);
      for (double v : rec.v) CHECK(std::abs(v - 1.0 / T) < 1e-12);
    }
    CHECK(n_ta == h * w * cfg.heads);
  }
}

TEST_CASE("cross attention: audio token permutation invariance, identical tokens") {
  ModelConfig cfg = grad_cfg(Temporal::st_transformer);
  cfg.channels = 4;
  cfg.heads = 2;
  ParamStore ps(101);
  nn::Tape t;
  const int c = 4, nf = 3, na = 4;
  std::vector<double> fv = rnd_vec(static_cast<std::size_t>(nf) * c, 102, -1.0, 1.0);
  std::vector<double> av = rnd_vec(static_cast<std::size_t>(na) * c, 103, -1.0, 1.0);
  const int perm[na] = {2, 0, 3, 1};
  std::vector<double> ap(static_cast<std::size_t>(na) * c);
  for (int r = 0; r < na; ++r)
    for (int k = 0; k < c; ++k)
      ap[static_cast<std::size_t>(r) * c + k] = av[static_cast<std::size_t>(perm[r]) * c + k];

  nn::Var f = t.constant({nf, c}, fv);
  nn::Var y1 = cross_transformer(t, ps, cfg, "ct", f, t.constant({na, c}, av));
  nn::Var y2 = cross_transformer(t, ps, cfg, "ct", f, t.constant({na, c}, ap));
  for (std::size_t i = 0; i < y1.size(); ++i)
    CHECK(y1.val()[i] == doctest::Approx(y2.val()[i]).epsilon(1e-6));

  // identical audio tokens: every cross-attention row collapses to uniform,
  // so the attended value is the same for every query position
  std::vector<double> same(static_cast<std::size_t>(na) * c);
  for (int r = 0; r < na; ++r)
    for (int k = 0; k < c; ++k) same[static_cast<std::size_t>(r) * c + k] = av[k];
  AttnProbe probe;
  cross_transformer(t, ps, cfg, "ct", f, t.constant({na, c}, same), &probe);
  int n_mca = 0;
  for (const auto& rec : probe.recs) {
    if (rec.tag.find(".mca.") == std::string::npos) continue;
    ++n_mca;
    for (double v : rec.v) CHECK(std::abs(v - 1.0 / na) < 1e-12);
  }
  CHECK(n_mca == cfg.heads);
}

TEST_CASE("audio-path invariances are bitwise") {
  ModelConfig cfg = tiny_cfg();
  std::vector<Map> frames = make_frames(cfg, 11);
  audio::BFormatClip clip_a = make_clip(12, 0.0, 90.0);
  audio::BFormatClip clip_b = make_clip(13, 40.0, 300.0);

  auto run = [&frames](const ModelConfig& c, const audio::BFormatClip* clip) {
    ParamStore ps(14);
    nn::Tape t;
    return forward(t, ps, c, frames, clip).val();
  };

  // mute: audio contents (or absence) cannot change a single bit
  cfg.audio_mode = AudioMode::mute;
  std::vector<double> m1 = run(cfg, &clip_a);
  std::vector<double> m2 = run(cfg, &clip_b);
  std::vector<double> m3 = run(cfg, nullptr);
  CHECK(std::memcmp(m1.data(), m2.data(), m1.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(m1.data(), m3.data(), m1.size() * sizeof(double)) == 0);

  // fuse() in mute mode is the identity on the very same tape node
  {
    ParamStore ps(15);
    nn::Tape t;
    nn::Var f = t.leaf({4, 2, 2}, rnd_vec(16, 16, -1.0, 1.0));
    AudioTokens none;
    nn::Var out = fuse(t, ps, cfg, 0, f, none, 0);
    CHECK(out.idx == f.idx);
  }

  // fusion=none ignores audio entirely
  cfg = tiny_cfg();
  cfg.fusion = Fusion::none;
  std::vector<double> n1 = run(cfg, &clip_a);
  std::vector<double> n2 = run(cfg, &clip_b);
  CHECK(std::memcmp(n1.data(), n2.data(), n1.size() * sizeof(double)) == 0);

  // mono mode reads only the omni channel: X/Y/Z contents are irrelevant
  cfg = tiny_cfg();
  cfg.audio_mode = AudioMode::mono;
  audio::BFormatClip mono_a = clip_a;
  audio::BFormatClip mono_b = clip_a;
  Rng scramble(17);
  for (double& v : mono_b.x) v = scramble.uniform(-1.0, 1.0);
  for (double& v : mono_b.y) v = scramble.uniform(-1.0, 1.0);
  for (double& v : mono_b.z) v = scramble.uniform(-1.0, 1.0);
  std::vector<double> o1 = run(cfg, &mono_a);
  std::vector<double> o2 = run(cfg, &mono_b);
  CHECK(std::memcmp(o1.data(), o2.data(), o1.size() * sizeof(double)) == 0);

  // ...but the W channel does matter in mono mode
  audio::BFormatClip mono_c = clip_a;
  for (double& v : mono_c.w) v *= 0.25;
  std::vector<double> o3 = run(cfg, &mono_c);
  CHECK(o1 != o3);

  // and in ambisonics mode the orientation channels do matter
  cfg = tiny_cfg();
  std::vector<double> a1 = run(cfg, &mono_a);
  std::vector<double> a2 = run(cfg, &mono_b);
  CHECK(a1 != a2);
}

TEST_CASE("parameter count is a pure function of the config (golden count)") {
  const ModelConfig cfg;  // defaults: C=32, T=8, 64x32 input, st_transformer, CT fusion
  ParamStore ps(1);
  nn::Tape t;
  std::vector<Map> frames = make_frames(cfg, 2);
  audio::BFormatClip clip = make_clip(3, 15.0, 200.0, 24000);
  forward(t, ps, cfg, frames, &clip);

  // independent arithmetic, mirroring the written architecture description
  const long long C = 32, T = 8;
  auto lin = [](long long i, long long o) { return i * o + o; };
  auto ln = [](long long c) { return 2 * c; };
  auto mha_p = [&](long long c) { return 4 * lin(c, c); };
  auto ffn_p = [&](long long c) { return lin(c, 2 * c) + lin(2 * c, c); };
  auto ct_p = [&](long long c) { return 3 * ln(c) + 2 * mha_p(c) + ffn_p(c); };
  auto up_p = [&](long long c) { return 4 * c * c * 9 + 4 * c; };

  const long long enc = (C * 4 * 4 + C) + C * 8 * 16 +
                        7 * (ln(C) + (C * 9 + C) + ffn_p(C));
  const long long res = C * C * 9 + C;  // only stage 1 sits at the token resolution
  const long long tmp = 3 * (3 * ln(C) + 2 * mha_p(C) + ffn_p(C) + (C * C * T * 9 + C));
  const long long aud = (C * 16 * 16 + C) + C * 4 * 4 + 3 * (ln(C) + ffn_p(C));
  const long long fus = 3 * (4 * ct_p(C) + lin(3 * C, C));
  const long long dec = 3 * up_p(C) + 6 * lin(2 * C, C);
  const long long head = 2 * up_p(C) + lin(C, 1);
  const long long expect = enc + res + tmp + aud + fus + dec + head;

  CHECK(expect == 687969);  // frozen golden count for the default config
  CHECK(ps.total_params() == static_cast<std::size_t>(expect));

  // config knobs change the count through the config alone
  ParamStore ps2(1);
  nn::Tape t2;
  ModelConfig mono = cfg;
  mono.audio_mode = AudioMode::mono;
  forward(t2, ps2, mono, frames, &clip);
  const long long fus_mono = 3 * ct_p(C);  // no orientation stages, no projection
  CHECK(ps2.total_params() == static_cast<std::size_t>(expect - fus + fus_mono));
}
