// Command-line entry point: every pipeline stage behind one binary.
//
// Each subcommand writes its outputs plus a run manifest
// (<primary-output>.manifest.json) carrying the full argv, the resolved
// configuration, all input/output paths, the seed and the tool version, so a
// run can be replayed bit-exactly. Exit codes: 0 success, 1 invalid
// input/options, 2 internal error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ovsal/audio.hpp"
#include "ovsal/errors.hpp"
#include "ovsal/gaze.hpp"
#include "ovsal/io.hpp"
#include "ovsal/metrics.hpp"
#include "ovsal/model.hpp"
#include "ovsal/parallel.hpp"
#include "ovsal/rng.hpp"
#include "ovsal/sphere.hpp"
#include "ovsal/synth.hpp"
#include "ovsal/vattr.hpp"
#include "ovsal/version.hpp"

namespace fs = std::filesystem;
using namespace ovsal;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

GridShape parse_grid(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == s.size())
    throw ConfigError("grid must look like WIDTHxHEIGHT, got '" + s + "'");
  try {
    const int w = std::stoi(s.substr(0, x));
    const int h = std::stoi(s.substr(x + 1));
    if (w < 1 || h < 1) throw ConfigError("grid dimensions must be positive");
    return {w, h};
  } catch (const std::logic_error&) {
    throw ConfigError("grid must look like WIDTHxHEIGHT, got '" + s + "'");
  }
}

metrics::Weighting parse_weighting(const std::string& s) {
  if (s == "uniform") return metrics::Weighting::uniform;
  if (s == "sinusoidal") return metrics::Weighting::sinusoidal;
  throw ConfigError("weighting must be 'uniform' or 'sinusoidal', got '" + s + "'");
}

std::string zero_pad(int v, int width) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%0*d", width, v);
  return buf;
}

// Context shared by every subcommand: argv for the manifest, plus the timer.
struct RunContext {
  std::vector<std::string> argv;
  std::string command;
  Clock::time_point t0 = Clock::now();
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> inputs, outputs;
  std::uint64_t seed = 0;

  void emit_manifest(const std::string& primary_output) {
    io::RunManifest m;
    m.command = command;
    m.argv = argv;
    m.config = config;
    m.inputs = inputs;
    m.outputs = outputs;
    m.seed = seed;
    m.wall_seconds = seconds_since(t0);
    io::write_manifest(primary_output + ".manifest.json", m);
  }
};

// ---- shared input helpers ----------------------------------------------------

std::vector<gaze::Fixation> fixations_from_gaze_file(const std::string& path,
                                                     const gaze::IvtParams& ivt) {
  const auto samples = io::read_gaze_csv(path);
  return gaze::extract_fixations(samples, ivt).fixations;
}

int frame_count_of(const std::vector<gaze::Fixation>& fx, double fps) {
  double t_end = 0.0;
  for (const auto& f : fx) t_end = std::max(t_end, f.t_end);
  return std::max(1, static_cast<int>(std::floor(t_end * fps)) + 1);
}

FixationMap pool_fixation_rows(const std::vector<io::FrameFixation>& rows, GridShape grid) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto& r : rows) {
    const auto px = sphere::pixel_of({r.lat, r.lon}, grid);
    counts[{px.row, px.col}] += r.count;
  }
  FixationMap fm;
  fm.shape = grid;
  for (const auto& [rc, n] : counts) fm.pts.push_back({rc.first, rc.second, n});
  return fm;
}

std::vector<std::string> sorted_files(const std::string& dir, const char* what) {
  if (!fs::is_directory(dir)) throw InvalidInputError(std::string(what) + ": not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InvalidInputError(std::string(what) + ": no files in " + dir);
  return files;
}

Map read_luma_frame(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".pfm") return io::read_pfm(path);
  const io::Image img = io::read_image(path);
  Map m({img.width, img.height});
  m.v = io::to_luma(img);
  return m;
}

// ---- dataset (de)serialization ------------------------------------------------

nlohmann::json scene_config_to_json(const synth::SceneConfig& c) {
  return {{"grid_width", c.grid.width},
          {"grid_height", c.grid.height},
          {"duration_s", c.duration_s},
          {"fps", c.fps},
          {"audio_rate", c.audio_rate},
          {"n_blobs", c.n_blobs},
          {"sounding_index", c.sounding_index},
          {"blob_sigma_deg", c.blob_sigma_deg},
          {"speed_deg_s_min", c.speed_deg_s_min},
          {"speed_deg_s_max", c.speed_deg_s_max},
          {"sounding_share", c.sounding_share},
          {"fixations_per_frame", c.fixations_per_frame},
          {"yaw_deg", c.yaw_deg},
          {"seed", c.seed}};
}

synth::SceneConfig scene_config_from_json(const nlohmann::json& j) {
  synth::SceneConfig c;
  c.grid = {j.at("grid_width").get<int>(), j.at("grid_height").get<int>()};
  c.duration_s = j.at("duration_s").get<double>();
  c.fps = j.at("fps").get<double>();
  c.audio_rate = j.at("audio_rate").get<double>();
  c.n_blobs = j.at("n_blobs").get<int>();
  c.sounding_index = j.at("sounding_index").get<int>();
  c.blob_sigma_deg = j.at("blob_sigma_deg").get<double>();
  c.speed_deg_s_min = j.at("speed_deg_s_min").get<double>();
  c.speed_deg_s_max = j.at("speed_deg_s_max").get<double>();
  c.sounding_share = j.at("sounding_share").get<double>();
  c.fixations_per_frame = j.at("fixations_per_frame").get<int>();
  c.yaw_deg = j.at("yaw_deg").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// Writes one sample under dir/<id>/ and returns the file list.
void write_sample(const synth::SynthSample& s, const std::string& dir) {
  fs::create_directories(dir);
  const GridShape g = s.cfg.grid;
  for (int f = 0; f < s.n_frames(); ++f) {
    io::write_pfm(dir + "/frame_" + zero_pad(f, 4) + ".pfm", s.frames[static_cast<std::size_t>(f)]);
    io::write_pfm(dir + "/gt_" + zero_pad(f, 4) + ".pfm", s.gt[static_cast<std::size_t>(f)]);
  }
  io::WavData wav;
  wav.sample_rate = static_cast<int>(std::llround(s.cfg.audio_rate));
  wav.channels = {s.clip.w, s.clip.x, s.clip.y, s.clip.z};
  io::write_wav(dir + "/audio.wav", wav, true);
  std::vector<io::FrameFixation> rows;
  for (int f = 0; f < s.n_frames(); ++f)
    for (const auto& p : s.fixations[static_cast<std::size_t>(f)].pts) {
      const auto c = sphere::center_of(p.row, p.col, g);
      rows.push_back({f, c.lat_deg, c.lon_deg, p.count});
    }
  io::write_fixation_csv(dir + "/fixations.csv", rows);
  nlohmann::json meta;
  meta["id"] = s.id;
  meta["scene"] = scene_config_to_json(s.cfg);
  meta["n_frames"] = s.n_frames();
  nlohmann::json src = nlohmann::json::array();
  for (const auto& c : s.source_track) src.push_back({c.lat_deg, c.lon_deg});
  meta["source_track"] = src;
  nlohmann::json tracks = nlohmann::json::array();
  for (const auto& bt : s.blob_tracks) {
    nlohmann::json t = nlohmann::json::array();
    for (const auto& c : bt) t.push_back({c.lat_deg, c.lon_deg});
    tracks.push_back(t);
  }
  meta["blob_tracks"] = tracks;
  io::write_json(dir + "/meta.json", meta);
}

synth::SynthSample read_sample(const std::string& dir) {
  const nlohmann::json meta = io::read_json(dir + "/meta.json");
  synth::SynthSample s;
  s.id = meta.at("id").get<std::string>();
  s.cfg = scene_config_from_json(meta.at("scene"));
  const int nf = meta.at("n_frames").get<int>();
  const GridShape g = s.cfg.grid;
  for (int f = 0; f < nf; ++f) {
    s.frames.push_back(io::read_pfm(dir + "/frame_" + zero_pad(f, 4) + ".pfm"));
    s.gt.push_back(io::read_pfm(dir + "/gt_" + zero_pad(f, 4) + ".pfm"));
  }
  const io::WavData wav = io::read_wav(dir + "/audio.wav");
  if (wav.channels.size() != 4)
    throw FormatError(dir + "/audio.wav: expected 4 channels, got " +
                      std::to_string(wav.channels.size()));
  s.clip.sample_rate = wav.sample_rate;
  s.clip.w = wav.channels[0];
  s.clip.x = wav.channels[1];
  s.clip.y = wav.channels[2];
  s.clip.z = wav.channels[3];
  std::vector<std::vector<int>> counts(static_cast<std::size_t>(nf));
  for (auto& c : counts) c.assign(static_cast<std::size_t>(g.npix()), 0);
  for (const auto& r : io::read_fixation_csv(dir + "/fixations.csv")) {
    if (r.frame < 0 || r.frame >= nf)
      throw FormatError(dir + "/fixations.csv: frame index out of range");
    const auto px = sphere::pixel_of({r.lat, r.lon}, g);
    counts[static_cast<std::size_t>(r.frame)][static_cast<std::size_t>(px.row) * g.width + px.col] +=
        r.count;
  }
  for (int f = 0; f < nf; ++f) {
    FixationMap fm;
    fm.shape = g;
    for (int r = 0; r < g.height; ++r)
      for (int c = 0; c < g.width; ++c) {
        const int n = counts[static_cast<std::size_t>(f)][static_cast<std::size_t>(r) * g.width + c];
        if (n > 0) fm.pts.push_back({r, c, n});
      }
    s.fixations.push_back(fm);
  }
  for (const auto& pt : meta.at("source_track"))
    s.source_track.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
  for (const auto& tr : meta.at("blob_tracks")) {
    std::vector<sphere::SphericalCoord> t;
    for (const auto& pt : tr) t.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
    s.blob_tracks.push_back(t);
  }
  return s;
}

std::vector<synth::SynthSample> read_dataset(const std::string& manifest_path) {
  const nlohmann::json j = io::read_json(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<synth::SynthSample> out;
  for (const auto& row : j.at("samples"))
    out.push_back(read_sample((base / row.at("dir").get<std::string>()).string()));
  if (out.empty()) throw InvalidInputError(manifest_path + ": dataset has no samples");
  return out;
}

// ---- model config from file + flag overrides ----------------------------------

struct ModelFlags {
  std::string config_path;
  std::string temporal, fusion, audio_mode, schedule;
  int channels = -1, frames = -1, frame_step = -1, heads = -1, fusion_levels = -1;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--model-config", config_path, "Model config JSON (defaults when omitted)");
    cmd->add_option("--temporal", temporal, "conv3d|st_gru|st_transformer");
    cmd->add_option("--fusion", fusion, "none|concat|cross_transformer");
    cmd->add_option("--audio-mode", audio_mode, "mute|mono|ambisonics");
    cmd->add_option("--channels", channels, "Base channel count");
    cmd->add_option("--frames", frames, "Temporal window length");
    cmd->add_option("--frame-step", frame_step, "Frame stride inside the window");
    cmd->add_option("--heads", heads, "Attention heads");
    cmd->add_option("--fusion-levels", fusion_levels, "Audio fusion depth");
    cmd->add_option("--schedule", schedule, "7 comma-separated per-stage resolution divisors");
  }

  model::ModelConfig resolve(const GridShape* dataset_grid, RunContext& ctx) const {
    model::ModelConfig cfg;
    if (!config_path.empty()) {
      cfg = model::config_from_json(io::read_json(config_path));
      ctx.inputs.push_back(config_path);
    }
    if (!temporal.empty()) cfg.temporal = model::temporal_from_string(temporal);
    if (!fusion.empty()) cfg.fusion = model::fusion_from_string(fusion);
    if (!audio_mode.empty()) cfg.audio_mode = model::audio_mode_from_string(audio_mode);
    if (channels > 0) cfg.channels = channels;
    if (frames > 0) cfg.frames = frames;
    if (frame_step > 0) cfg.frame_step = frame_step;
    if (heads > 0) cfg.heads = heads;
    if (fusion_levels >= 0) cfg.fusion_levels = fusion_levels;
    if (!schedule.empty()) {
      std::vector<int> divs;
      std::size_t pos = 0;
      while (pos <= schedule.size()) {
        const std::size_t comma = schedule.find(',', pos);
        const std::string tok =
            schedule.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
          divs.push_back(std::stoi(tok));
        } catch (const std::logic_error&) {
          throw ConfigError("schedule: expected an integer, got '" + tok + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      if (divs.size() != static_cast<std::size_t>(model::ModelConfig::n_stages))
        throw ConfigError("schedule: expected " + std::to_string(model::ModelConfig::n_stages) +
                          " divisors, got " + std::to_string(divs.size()));
      std::copy(divs.begin(), divs.end(), cfg.schedule.begin());
    }
    if (dataset_grid && config_path.empty()) {
      // No explicit config: adopt the dataset grid so defaults just work.
      cfg.input_width = dataset_grid->width;
      cfg.input_height = dataset_grid->height;
    }
    model::validate(cfg);
    return cfg;
  }
};

// ---- subcommand implementations ------------------------------------------------

int cmd_fixations(RunContext& ctx, const std::string& gaze_path, const std::string& out,
                  double fps, double velocity, double min_duration) {
  gaze::IvtParams ivt{velocity, min_duration};
  const auto fx = fixations_from_gaze_file(gaze_path, ivt);
  const int n_frames = frame_count_of(fx, fps);
  std::vector<io::FrameFixation> rows;
  for (int f = 0; f < n_frames; ++f) {
    const double t = f / fps;
    for (const auto& x : fx)
      if (t >= x.t_start && t <= x.t_end) rows.push_back({f, x.center.lat_deg, x.center.lon_deg, 1});
  }
  io::write_fixation_csv(out, rows);
  ctx.config = {{"fps", fps},
                {"velocity_thresh_deg_s", velocity},
                {"min_duration_s", min_duration},
                {"n_fixations", fx.size()},
                {"n_frames", n_frames}};
  ctx.inputs = {gaze_path};
  ctx.outputs = {out};
  ctx.emit_manifest(out);
  std::printf("%zu fixations over %d frames -> %s\n", fx.size(), n_frames, out.c_str());
  return 0;
}

int cmd_salmap(RunContext& ctx, const std::string& gaze_path, const std::string& out_dir,
               const std::string& grid_s, double sigma, double fps, bool png) {
  const GridShape grid = parse_grid(grid_s);
  const auto fx = fixations_from_gaze_file(gaze_path, {});
  const int n_frames = frame_count_of(fx, fps);
  fs::create_directories(out_dir);
  ctx.inputs = {gaze_path};
  for (int f = 0; f < n_frames; ++f) {
    const FixationMap fm = gaze::fixation_map(fx, f, fps, grid);
    const Map sal = gaze::smooth(fm, sigma);
    const std::string path = out_dir + "/salmap_" + zero_pad(f, 4) + ".pfm";
    io::write_pfm(path, sal);
    ctx.outputs.push_back(path);
    if (png) {
      io::write_png_colormap(out_dir + "/salmap_" + zero_pad(f, 4) + ".png", sal);
      ctx.outputs.push_back(out_dir + "/salmap_" + zero_pad(f, 4) + ".png");
    }
  }
  ctx.config = {{"grid", grid_s}, {"sigma_deg", sigma}, {"fps", fps}, {"n_frames", n_frames},
                {"png", png}};
  ctx.emit_manifest(out_dir + "/salmap");
  std::printf("%d saliency maps -> %s\n", n_frames, out_dir.c_str());
  return 0;
}

int cmd_eval(RunContext& ctx, const std::string& pred_path, const std::string& fix_path,
             const std::string& gt_path, const std::string& neg_path, const std::string& weighting_s,
             double sigma, int sauc_splits, double kld_eps, const std::string& out) {
  const metrics::Weighting w = parse_weighting(weighting_s);
  const Map pred = io::read_pfm(pred_path);
  const FixationMap fix = pool_fixation_rows(io::read_fixation_csv(fix_path), pred.shape);
  if (fix.pts.empty()) throw InvalidInputError(fix_path + ": no fixations");
  ctx.inputs = {pred_path, fix_path};

  Map gt;
  if (!gt_path.empty()) {
    gt = io::read_pfm(gt_path);
    ctx.inputs.push_back(gt_path);
  } else {
    gt = gaze::smooth(fix, sigma);
  }

  FixationMap neg;
  std::string neg_source;
  if (!neg_path.empty()) {
    neg = pool_fixation_rows(io::read_fixation_csv(neg_path), pred.shape);
    ctx.inputs.push_back(neg_path);
    neg_source = "file";
  } else {
    // No shuffled pool available: fall back to uniform negatives over the
    // whole grid (the classic random-negatives AUC convention).
    neg.shape = pred.shape;
    for (int r = 0; r < pred.shape.height; ++r)
      for (int c = 0; c < pred.shape.width; ++c) neg.pts.push_back({r, c, 1});
    neg_source = "uniform";
  }

  nlohmann::json m;
  m["nss"] = metrics::nss(pred, fix, w).value;
  m["auc_judd"] = metrics::auc_judd(pred, fix);
  m["s_auc"] = metrics::s_auc(pred, fix, neg, sauc_splits, ctx.seed);
  m["cc"] = metrics::cc(pred, gt, w).value;
  m["sim"] = metrics::sim(pred, gt, w);
  m["kld"] = metrics::kld(pred, gt, w, kld_eps);
  nlohmann::json out_j;
  out_j["metrics"] = m;
  out_j["weighting"] = weighting_s;
  out_j["negatives"] = neg_source;
  out_j["reference"] = gt_path.empty() ? "smoothed_fixations" : "file";
  io::write_json(out, out_j);
  ctx.config = {{"weighting", weighting_s}, {"sigma_deg", sigma}, {"sauc_splits", sauc_splits},
                {"kld_eps", kld_eps},       {"negatives", neg_source}};
  ctx.outputs = {out};
  ctx.emit_manifest(out);
  std::printf("metrics -> %s\n", out.c_str());
  return 0;
}

int cmd_consistency(RunContext& ctx, const std::string& subjects_dir, const std::string& grid_s,
                    double sigma, int repeats, const std::string& weighting_s,
                    const std::string& out) {
  metrics::ConsistencyParams params;
  params.grid = parse_grid(grid_s);
  params.sigma_deg = sigma;
  params.repeats = repeats;
  params.seed = ctx.seed;
  params.weighting = parse_weighting(weighting_s);

  // Subdirectories are viewing modes; a flat directory of CSVs is one mode.
  std::map<std::string, std::vector<metrics::SubjectTrace>> modes;
  if (!fs::is_directory(subjects_dir))
    throw InvalidInputError("consistency: not a directory: " + subjects_dir);
  std::vector<std::string> subdirs;
  for (const auto& e : fs::directory_iterator(subjects_dir))
    if (e.is_directory()) subdirs.push_back(e.path().string());
  std::sort(subdirs.begin(), subdirs.end());
  auto load_mode = [&](const std::string& dir) {
    std::vector<metrics::SubjectTrace> traces;
    for (const auto& f : sorted_files(dir, "consistency")) {
      traces.push_back(fixations_from_gaze_file(f, {}));
      ctx.inputs.push_back(f);
    }
    return traces;
  };
  if (subdirs.empty()) {
    modes["all"] = load_mode(subjects_dir);
  } else {
    for (const auto& d : subdirs) modes[fs::path(d).filename().string()] = load_mode(d);
  }

  const metrics::ConsistencyReport rep = metrics::consistency(modes, params);
  auto triple = [](const metrics::MetricTriple& t) {
    return nlohmann::json{{"nss", t.nss}, {"sim", t.sim}, {"cc", t.cc}};
  };
  nlohmann::json j;
  j["baseline"] = triple(rep.baseline);
  j["pairs"] = nlohmann::json::object();
  j["pct_change"] = nlohmann::json::object();
  for (const auto& [k, v] : rep.pairs) j["pairs"][k] = triple(v);
  for (const auto& [k, v] : rep.pct) j["pct_change"][k] = triple(v);
  io::write_json(out, j);
  ctx.config = {{"grid", grid_s},     {"sigma_deg", sigma},          {"repeats", repeats},
                {"weighting", weighting_s}, {"n_modes", modes.size()}};
  ctx.outputs = {out};
  ctx.emit_manifest(out);
  std::printf("consistency over %zu mode(s) -> %s\n", modes.size(), out.c_str());
  return 0;
}

int cmd_audio_features(RunContext& ctx, const std::string& wav_path, const std::string& ordering_s,
                       const std::string& grid_s, const std::string& out_dir, bool png, bool mel) {
  audio::Ordering ord;
  if (ordering_s == "fuma") {
    ord = audio::Ordering::fuma;
  } else if (ordering_s == "ambix") {
    ord = audio::Ordering::ambix;
  } else {
    throw ConfigError("ordering must be 'fuma' or 'ambix', got '" + ordering_s + "'");
  }
  const GridShape grid = parse_grid(grid_s);
  const audio::BFormatClip clip = audio::load_bformat(wav_path, ord);
  fs::create_directories(out_dir);
  ctx.inputs = {wav_path};

  const Map em = audio::aem(clip, grid);
  io::write_pfm(out_dir + "/aem.pfm", em);
  ctx.outputs.push_back(out_dir + "/aem.pfm");
  if (png) {
    io::write_png_colormap(out_dir + "/aem.png", em);
    ctx.outputs.push_back(out_dir + "/aem.png");
  }

  nlohmann::json attrs;
  attrs["sef"] = audio::sef(clip.w, clip.sample_rate);
  attrs["zcr"] = audio::zcr(clip.w);
  attrs["duration_s"] = clip.duration();
  attrs["sample_rate"] = clip.sample_rate;
  attrs["n_samples"] = clip.n_samples();
  io::write_json(out_dir + "/attributes.json", attrs);
  ctx.outputs.push_back(out_dir + "/attributes.json");

  if (mel) {
    const std::vector<const std::vector<double>*> chans{&clip.w, &clip.x, &clip.y, &clip.z};
    const char* names[] = {"w", "x", "y", "z"};
    for (int c = 0; c < 4; ++c) {
      const audio::MelSpectrogram ms = audio::mel_spectrogram(*chans[c], clip.sample_rate);
      Map mmap({ms.n_mels, ms.n_frames});
      mmap.v = ms.v;
      const std::string path = out_dir + "/mel_" + names[c] + ".pfm";
      io::write_pfm(path, mmap);
      ctx.outputs.push_back(path);
    }
  }
  ctx.config = {{"ordering", ordering_s}, {"grid", grid_s}, {"png", png}, {"mel", mel}};
  ctx.emit_manifest(out_dir + "/aem.pfm");
  std::printf("audio features -> %s\n", out_dir.c_str());
  return 0;
}

int cmd_video_attrs(RunContext& ctx, const std::string& frames_dir, const std::string& out) {
  auto files = sorted_files(frames_dir, "video-attrs");
  std::erase_if(files, [](const std::string& f) {
    const std::string ext = fs::path(f).extension().string();
    return ext != ".pfm" && ext != ".png" && ext != ".ppm" && ext != ".pgm";
  });
  if (files.empty())
    throw InvalidInputError("video-attrs: no frame files (.pfm/.png/.ppm/.pgm) in " + frames_dir);
  std::vector<Map> frames;
  nlohmann::json per_frame = nlohmann::json::array();
  for (const auto& f : files) {
    frames.push_back(read_luma_frame(f));
    ctx.inputs.push_back(f);
  }
  double b_mean = 0.0, c_mean = 0.0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const vattr::FrameStats st = vattr::frame_attributes(frames[i]);
    per_frame.push_back({{"file", fs::path(files[i]).filename().string()},
                         {"brightness", st.brightness},
                         {"contrast", st.contrast},
                         {"si", vattr::si_frame(frames[i])}});
    b_mean += st.brightness / static_cast<double>(frames.size());
    c_mean += st.contrast / static_cast<double>(frames.size());
  }
  nlohmann::json j;
  j["brightness_mean"] = b_mean;
  j["contrast_mean"] = c_mean;
  j["si"] = vattr::si(frames);
  j["n_frames"] = frames.size();
  j["per_frame"] = per_frame;
  io::write_json(out, j);
  ctx.config = {{"n_frames", frames.size()}};
  ctx.outputs = {out};
  ctx.emit_manifest(out);
  std::printf("video attributes for %zu frames -> %s\n", frames.size(), out.c_str());
  return 0;
}

int cmd_synth_gen(RunContext& ctx, const synth::SceneConfig& base, int count,
                  const std::string& out_dir) {
  const auto samples = synth::make_dataset(base, count, ctx.seed);
  fs::create_directories(out_dir);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : samples) {
    write_sample(s, out_dir + "/" + s.id);
    rows.push_back({{"id", s.id}, {"dir", s.id}, {"seed", s.cfg.seed}});
    ctx.outputs.push_back(out_dir + "/" + s.id);
  }
  nlohmann::json manifest;
  manifest["scene"] = scene_config_to_json(base);
  manifest["count"] = count;
  manifest["seed"] = ctx.seed;
  manifest["samples"] = rows;
  io::write_json(out_dir + "/dataset.json", manifest);
  ctx.outputs.push_back(out_dir + "/dataset.json");
  ctx.config = scene_config_to_json(base);
  ctx.config["count"] = count;
  ctx.emit_manifest(out_dir + "/dataset.json");
  std::printf("%d samples -> %s\n", count, out_dir.c_str());
  return 0;
}

int cmd_train(RunContext& ctx, const std::string& dataset_path, const ModelFlags& mf,
              const synth::OptConfig& opt, const std::string& out_dir) {
  const auto data = read_dataset(dataset_path);
  ctx.inputs.push_back(dataset_path);
  const GridShape grid = data.front().cfg.grid;
  const model::ModelConfig mcfg = mf.resolve(&grid, ctx);

  const synth::TrainResult res = synth::train(mcfg, data, opt);
  fs::create_directories(out_dir);
  res.params.save(out_dir + "/params.bin");
  std::string log = "step,lr,l1,cc,kl,bce,total\n";
  for (const auto& row : res.log) {
    char buf[220];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", row.step, row.lr,
                  row.loss.l1, row.loss.cc, row.loss.kl, row.loss.bce, row.loss.total);
    log += buf;
  }
  io::write_text_file(out_dir + "/train_log.csv", log);
  io::write_json(out_dir + "/model_config.json", model::config_to_json(mcfg));
  ctx.outputs = {out_dir + "/params.bin", out_dir + "/train_log.csv",
                 out_dir + "/model_config.json"};
  ctx.config = {{"model", model::config_to_json(mcfg)},
                {"steps", opt.steps},
                {"batch", opt.batch},
                {"lr", opt.lr}};
  ctx.emit_manifest(out_dir + "/params.bin");
  if (!res.log.empty())
    std::printf("trained %d steps: total %.6f -> %.6f; params -> %s\n", opt.steps,
                res.log.front().loss.total, res.log.back().loss.total, out_dir.c_str());
  else
    std::printf("trained 0 steps; params -> %s\n", out_dir.c_str());
  return 0;
}

int cmd_ablate(RunContext& ctx, const std::string& train_ds, const std::string& test_ds,
               const std::string& axes_s, const ModelFlags& mf, const synth::OptConfig& opt,
               const synth::EvalConfig& ecfg, const std::string& out_dir) {
  const auto train_set = read_dataset(train_ds);
  const auto test_set = read_dataset(test_ds);
  ctx.inputs = {train_ds, test_ds};
  const GridShape grid = train_set.front().cfg.grid;
  const model::ModelConfig base = mf.resolve(&grid, ctx);

  std::vector<synth::AblateAxis> axes;
  if (!axes_s.empty()) {
    std::size_t pos = 0;
    while (pos <= axes_s.size()) {
      const std::size_t comma = axes_s.find(',', pos);
      const std::string tok =
          axes_s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      if (!tok.empty()) axes.push_back(synth::ablate_axis_from_string(tok));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }

  const synth::AblateReport rep = synth::ablate(base, train_set, test_set, opt, axes, ecfg);
  fs::create_directories(out_dir);
  // Timing lives in the manifest; the data file stays byte-reproducible.
  nlohmann::json rep_j = synth::report_to_json(rep);
  rep_j.erase("wall_seconds");
  io::write_json(out_dir + "/ablation.json", rep_j);
  io::write_text_file(out_dir + "/ablation.csv", synth::report_to_csv(rep));
  ctx.outputs = {out_dir + "/ablation.json", out_dir + "/ablation.csv"};
  ctx.config = {{"model", model::config_to_json(base)}, {"axes", axes_s},
                {"steps", opt.steps},                   {"batch", opt.batch},
                {"lr", opt.lr},                         {"frames_per_sample", ecfg.frames_per_sample}};
  ctx.emit_manifest(out_dir + "/ablation.json");
  std::printf("%zu ablation rows -> %s\n", rep.rows.size(), out_dir.c_str());
  return 0;
}

int cmd_bench(RunContext& ctx, const std::string& grid_s, int frames, int repeats,
              const std::string& out) {
  const GridShape grid = parse_grid(grid_s);
  Rng rng(ctx.seed);

  FixationMap fm;
  fm.shape = grid;
  {
    std::map<std::pair<int, int>, int> counts;
    for (int i = 0; i < 200; ++i)
      counts[{static_cast<int>(rng.below(static_cast<std::uint64_t>(grid.height))),
              static_cast<int>(rng.below(static_cast<std::uint64_t>(grid.width)))}] += 1;
    for (const auto& [rc, n] : counts) fm.pts.push_back({rc.first, rc.second, n});
  }
  audio::BFormatClip clip;
  clip.sample_rate = 48000.0;
  for (auto* ch : {&clip.w, &clip.x, &clip.y, &clip.z}) {
    ch->resize(96000);
    for (auto& v : *ch) v = rng.uniform(-0.5, 0.5);
  }
  std::vector<Map> vid(static_cast<std::size_t>(frames), Map(grid));
  for (auto& m : vid)
    for (auto& v : m.v) v = rng.uniform(0.0, 255.0);

  struct Row {
    std::string kernel;
    double serial_ms = 0.0, parallel_ms = 0.0;
    bool bitwise_equal = false;
  };
  auto time_best = [&](auto&& fn) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = Clock::now();
      fn();
      best = std::min(best, seconds_since(t0) * 1e3);
    }
    return best;
  };
  std::vector<Row> rows;
  {
    Row r{"smooth", 0, 0, false};
    Map a, b;
    r.serial_ms = time_best([&] { a = gaze::smooth_reference(fm, 6.0); });
    r.parallel_ms = time_best([&] { b = gaze::smooth(fm, 6.0); });
    r.bitwise_equal = a.v == b.v;
    rows.push_back(r);
  }
  {
    Row r{"aem", 0, 0, false};
    Map a, b;
    r.serial_ms = time_best([&] { a = audio::aem(clip, grid, Exec::serial); });
    r.parallel_ms = time_best([&] { b = audio::aem(clip, grid, Exec::parallel); });
    r.bitwise_equal = a.v == b.v;
    rows.push_back(r);
  }
  {
    Row r{"mel", 0, 0, false};
    audio::MelSpectrogram a, b;
    r.serial_ms = time_best([&] { a = audio::mel_spectrogram(clip.w, clip.sample_rate, {}, Exec::serial); });
    r.parallel_ms =
        time_best([&] { b = audio::mel_spectrogram(clip.w, clip.sample_rate, {}, Exec::parallel); });
    r.bitwise_equal = a.v == b.v;
    rows.push_back(r);
  }
  {
    Row r{"si", 0, 0, false};
    double a = 0, b = 0;
    r.serial_ms = time_best([&] { a = vattr::si(vid, Exec::serial); });
    r.parallel_ms = time_best([&] { b = vattr::si(vid, Exec::parallel); });
    r.bitwise_equal = a == b;
    rows.push_back(r);
  }

  std::printf("%-8s %12s %12s %9s %8s\n", "kernel", "serial_ms", "parallel_ms", "speedup",
              "bitwise");
  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& r : rows) {
    std::printf("%-8s %12.3f %12.3f %8.2fx %8s\n", r.kernel.c_str(), r.serial_ms, r.parallel_ms,
                r.serial_ms / std::max(1e-9, r.parallel_ms), r.bitwise_equal ? "yes" : "NO");
    jrows.push_back({{"kernel", r.kernel},
                     {"serial_ms", r.serial_ms},
                     {"parallel_ms", r.parallel_ms},
                     {"bitwise_equal", r.bitwise_equal}});
    if (!r.bitwise_equal) throw InternalError("bench: " + r.kernel + " serial/parallel mismatch");
  }
  if (!out.empty()) {
    nlohmann::json j;
    j["grid"] = grid_s;
    j["threads"] = thread_count();
    j["rows"] = jrows;
    io::write_json(out, j);
    ctx.config = {{"grid", grid_s}, {"frames", frames}, {"repeats", repeats}};
    ctx.outputs = {out};
    ctx.emit_manifest(out);
  }
  return 0;
}

int run(std::vector<std::string> args_vec) {
  CLI::App app{"Omnidirectional audio-visual saliency toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker thread count (default: OVSAL_THREADS or OpenMP)");

  RunContext ctx;
  ctx.argv = args_vec;

  // fixations
  auto* c_fix = app.add_subcommand("fixations", "Extract I-VT fixations from a gaze trace CSV");
  std::string fx_gaze, fx_out;
  double fx_fps = 30.0, fx_vel = 75.0, fx_min = 0.100;
  c_fix->add_option("--gaze", fx_gaze, "Gaze CSV (t,gx,gy,gz,pitch,yaw,roll)")->required();
  c_fix->add_option("--out", fx_out, "Output fixation CSV")->required();
  c_fix->add_option("--fps", fx_fps, "Frame rate for the per-frame expansion");
  c_fix->add_option("--velocity", fx_vel, "I-VT velocity threshold (deg/s)");
  c_fix->add_option("--min-duration", fx_min, "Minimum fixation duration (s)");

  // salmap
  auto* c_sal = app.add_subcommand("salmap", "Per-frame saliency maps from a gaze trace");
  std::string sm_gaze, sm_dir, sm_grid = "64x32";
  double sm_sigma = 3.34, sm_fps = 30.0;
  bool sm_png = false;
  c_sal->add_option("--gaze", sm_gaze, "Gaze CSV")->required();
  c_sal->add_option("--out-dir", sm_dir, "Output directory")->required();
  c_sal->add_option("--grid", sm_grid, "Map size WxH");
  c_sal->add_option("--sigma", sm_sigma, "Gaussian sigma (degrees)");
  c_sal->add_option("--fps", sm_fps, "Frame rate");
  c_sal->add_flag("--png", sm_png, "Also write PNG heatmaps");

  // eval
  auto* c_eval = app.add_subcommand("eval", "Six saliency metrics for a prediction");
  std::string ev_pred, ev_fix, ev_gt, ev_neg, ev_weight = "sinusoidal", ev_out;
  double ev_sigma = 3.34, ev_kld_eps = 1e-7;
  int ev_splits = 100;
  c_eval->add_option("--pred", ev_pred, "Prediction PFM")->required();
  c_eval->add_option("--fix", ev_fix, "Fixation CSV (frame,lat,lon,count)")->required();
  c_eval->add_option("--out", ev_out, "Output JSON")->required();
  c_eval->add_option("--gt", ev_gt, "Reference saliency PFM (default: smoothed fixations)");
  c_eval->add_option("--neg", ev_neg, "Negative-pool fixation CSV for s-AUC");
  c_eval->add_option("--weighting", ev_weight, "uniform|sinusoidal");
  c_eval->add_option("--sigma", ev_sigma, "Smoothing sigma when --gt is absent");
  c_eval->add_option("--sauc-splits", ev_splits, "s-AUC random splits");
  c_eval->add_option("--kld-eps", ev_kld_eps, "KLD epsilon");
  c_eval->add_option("--seed", ctx.seed, "s-AUC sampling seed");

  // consistency
  auto* c_cons = app.add_subcommand("consistency", "Split-half consistency over subjects");
  std::string cs_dir, cs_grid = "64x32", cs_weight = "sinusoidal", cs_out = "consistency.json";
  double cs_sigma = 3.34;
  int cs_repeats = 5;
  c_cons->add_option("--subjects", cs_dir, "Directory of gaze CSVs (subdirs = modes)")->required();
  c_cons->add_option("--out", cs_out, "Output JSON");
  c_cons->add_option("--grid", cs_grid, "Map size WxH");
  c_cons->add_option("--sigma", cs_sigma, "Gaussian sigma (degrees)");
  c_cons->add_option("--repeats", cs_repeats, "Random split repeats");
  c_cons->add_option("--weighting", cs_weight, "uniform|sinusoidal");
  c_cons->add_option("--seed", ctx.seed, "Split RNG seed");

  // audio-features
  auto* c_af = app.add_subcommand("audio-features", "AEM and scalar attributes from B-format WAV");
  std::string af_wav, af_ord = "fuma", af_grid = "64x32", af_dir;
  bool af_png = false, af_mel = false;
  c_af->add_option("--audio", af_wav, "4-channel WAV")->required();
  c_af->add_option("--out-dir", af_dir, "Output directory")->required();
  c_af->add_option("--ordering", af_ord, "fuma|ambix");
  c_af->add_option("--grid", af_grid, "AEM size WxH");
  c_af->add_flag("--png", af_png, "Also write a PNG heatmap");
  c_af->add_flag("--mel", af_mel, "Also write per-channel mel spectrogram PFMs");

  // video-attrs
  auto* c_va = app.add_subcommand("video-attrs", "Brightness / contrast / SI for a frame directory");
  std::string va_dir, va_out = "video_attrs.json";
  c_va->add_option("--frames", va_dir, "Directory of frames (PNG/PPM/PGM/PFM)")->required();
  c_va->add_option("--out", va_out, "Output JSON");

  // synth-gen
  auto* c_gen = app.add_subcommand("synth-gen", "Generate a synthetic audio-visual dataset");
  synth::SceneConfig gen_scene;
  std::string gen_dir, gen_grid = "64x32";
  int gen_count = 1;
  c_gen->add_option("--out-dir", gen_dir, "Output dataset directory")->required();
  c_gen->add_option("--count", gen_count, "Number of samples");
  c_gen->add_option("--grid", gen_grid, "Frame size WxH");
  c_gen->add_option("--duration", gen_scene.duration_s, "Clip length (s)");
  c_gen->add_option("--fps", gen_scene.fps, "Video frame rate");
  c_gen->add_option("--rate", gen_scene.audio_rate, "Audio sample rate");
  c_gen->add_option("--blobs", gen_scene.n_blobs, "Number of blobs (1-3)");
  c_gen->add_option("--sounding", gen_scene.sounding_index, "Index of the sounding blob");
  c_gen->add_option("--sigma-deg", gen_scene.blob_sigma_deg, "Blob angular sigma (degrees)");
  c_gen->add_option("--share", gen_scene.sounding_share, "GT mass share of the sounding blob");
  c_gen->add_option("--fixations", gen_scene.fixations_per_frame, "Fixation draws per frame");
  c_gen->add_option("--yaw", gen_scene.yaw_deg, "Extra yaw rotation (degrees)");
  c_gen->add_option("--seed", ctx.seed, "Dataset seed");

  // train
  auto* c_tr = app.add_subcommand("train", "Train the saliency model on a synthetic dataset");
  std::string tr_ds, tr_dir;
  ModelFlags tr_mf;
  synth::OptConfig tr_opt;
  c_tr->add_option("--dataset", tr_ds, "dataset.json from synth-gen")->required();
  c_tr->add_option("--out-dir", tr_dir, "Output directory")->required();
  tr_mf.add_to(c_tr);
  c_tr->add_option("--steps", tr_opt.steps, "SGD steps");
  c_tr->add_option("--batch", tr_opt.batch, "Batch size");
  c_tr->add_option("--lr", tr_opt.lr, "Peak learning rate (cosine-annealed)");
  c_tr->add_option("--seed", ctx.seed, "Init + sampling seed");

  // ablate
  auto* c_ab = app.add_subcommand("ablate", "Train and evaluate configuration variants");
  std::string ab_train, ab_test, ab_axes, ab_dir, ab_weight = "uniform";
  ModelFlags ab_mf;
  synth::OptConfig ab_opt;
  synth::EvalConfig ab_ecfg;
  c_ab->add_option("--train-dataset", ab_train, "Training dataset.json")->required();
  c_ab->add_option("--test-dataset", ab_test, "Test dataset.json")->required();
  c_ab->add_option("--out-dir", ab_dir, "Output directory")->required();
  c_ab->add_option("--axes", ab_axes,
                   "Comma list of temporal,fusion,fusion_levels,audio_mode,frame_sampling "
                   "(empty = base run)");
  ab_mf.add_to(c_ab);
  c_ab->add_option("--steps", ab_opt.steps, "SGD steps per variant");
  c_ab->add_option("--batch", ab_opt.batch, "Batch size");
  c_ab->add_option("--lr", ab_opt.lr, "Peak learning rate");
  c_ab->add_option("--frames-per-sample", ab_ecfg.frames_per_sample, "Evaluation frames per clip");
  c_ab->add_option("--sauc-splits", ab_ecfg.sauc_splits, "s-AUC random splits");
  c_ab->add_option("--weighting", ab_weight, "uniform|sinusoidal");
  c_ab->add_option("--seed", ctx.seed, "Training seed (shared across variants)");

  // bench
  auto* c_bn = app.add_subcommand("bench", "Time parallel kernels against their serial references");
  std::string bn_grid = "256x128", bn_out;
  int bn_frames = 8, bn_repeats = 3;
  c_bn->add_option("--grid", bn_grid, "Benchmark grid WxH");
  c_bn->add_option("--frames", bn_frames, "Video frames for the SI kernel");
  c_bn->add_option("--repeat", bn_repeats, "Timing repetitions (best is kept)");
  c_bn->add_option("--out", bn_out, "Optional JSON report");
  c_bn->add_option("--seed", ctx.seed, "Input-synthesis seed");

  std::vector<const char*> argv_c;
  argv_c.reserve(args_vec.size());
  for (const auto& a : args_vec) argv_c.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv_c.size()), argv_c.data());
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    std::fputs((subs.empty() ? app.help() : subs.front()->help()).c_str(), stdout);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    std::printf("%s\n", e.what());
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    std::fprintf(stderr, "error: %s\n\n%s", e.what(),
                 (subs.empty() ? app.help() : subs.front()->help()).c_str());
    return 1;
  }
  if (threads > 0) set_thread_count(threads);

  if (c_fix->parsed()) {
    ctx.command = "fixations";
    return cmd_fixations(ctx, fx_gaze, fx_out, fx_fps, fx_vel, fx_min);
  }
  if (c_sal->parsed()) {
    ctx.command = "salmap";
    return cmd_salmap(ctx, sm_gaze, sm_dir, sm_grid, sm_sigma, sm_fps, sm_png);
  }
  if (c_eval->parsed()) {
    ctx.command = "eval";
    return cmd_eval(ctx, ev_pred, ev_fix, ev_gt, ev_neg, ev_weight, ev_sigma, ev_splits,
                    ev_kld_eps, ev_out);
  }
  if (c_cons->parsed()) {
    ctx.command = "consistency";
    return cmd_consistency(ctx, cs_dir, cs_grid, cs_sigma, cs_repeats, cs_weight, cs_out);
  }
  if (c_af->parsed()) {
    ctx.command = "audio-features";
    return cmd_audio_features(ctx, af_wav, af_ord, af_grid, af_dir, af_png, af_mel);
  }
  if (c_va->parsed()) {
    ctx.command = "video-attrs";
    return cmd_video_attrs(ctx, va_dir, va_out);
  }
  if (c_gen->parsed()) {
    ctx.command = "synth-gen";
    gen_scene.grid = parse_grid(gen_grid);
    gen_scene.seed = ctx.seed;
    return cmd_synth_gen(ctx, gen_scene, gen_count, gen_dir);
  }
  if (c_tr->parsed()) {
    ctx.command = "train";
    tr_opt.seed = ctx.seed;
    return cmd_train(ctx, tr_ds, tr_mf, tr_opt, tr_dir);
  }
  if (c_ab->parsed()) {
    ctx.command = "ablate";
    ab_opt.seed = ctx.seed;
    ab_ecfg.weighting = parse_weighting(ab_weight);
    return cmd_ablate(ctx, ab_train, ab_test, ab_axes, ab_mf, ab_opt, ab_ecfg, ab_dir);
  }
  if (c_bn->parsed()) {
    ctx.command = "bench";
    return cmd_bench(ctx, bn_grid, bn_frames, bn_repeats, bn_out);
  }
  std::fprintf(stderr, "error: no subcommand\n\n%s", app.help().c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  try {
    return run(std::move(args));
  } catch (const InvalidInputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}
