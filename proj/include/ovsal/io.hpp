#pragma once
// File formats: PFM float maps, PNG/PPM/PGM images, multichannel WAV, the two
// CSV schemas (gaze traces, per-frame fixations), and the run manifest JSON
// written alongside every CLI output.
//
// All writers are deterministic: identical inputs produce identical bytes
// (the manifest's wall_clock field is the one documented exception).

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovsal/gaze.hpp"
#include "ovsal/map.hpp"

namespace ovsal::io {

// ---- PFM (grayscale portable float map) ----
// Written little-endian (negative scale), rows bottom-to-top per convention;
// values are narrowed to float32.
void write_pfm(const std::string& path, const Map& m);
Map read_pfm(const std::string& path);

// ---- images ----
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> data;  // row-major, interleaved
};

// PNG (any bit depth/color, decoded to 8-bit) or binary PPM/PGM, chosen by
// file magic.
Image read_image(const std::string& path);

// Rec.601 luma in [0, 255].
std::vector<double> to_luma(const Image& img);

// 8-bit PNG visualization with a fixed viridis-like palette; the map is
// scaled by its maximum (an all-zero map renders as the palette floor).
void write_png_colormap(const std::string& path, const Map& m);

// ---- WAV ----
struct WavData {
  int sample_rate = 0;
  std::vector<std::vector<double>> channels;
};

// PCM 16/24/32-bit and IEEE float 32/64 are accepted; integer samples are
// scaled to [-1, 1).
WavData read_wav(const std::string& path);

// format 3 (IEEE float32) when float32, else PCM16 with clamping.
void write_wav(const std::string& path, const WavData& w, bool float32 = true);

// ---- CSV ----
// Gaze trace, header exactly: t,gx,gy,gz,pitch,yaw,roll
std::vector<gaze::GazeSample> read_gaze_csv(const std::string& path);
void write_gaze_csv(const std::string& path, const std::vector<gaze::GazeSample>& samples);

// Per-frame fixations, header exactly: frame,lat,lon,count
struct FrameFixation {
  int frame = 0;
  double lat = 0.0;
  double lon = 0.0;
  int count = 1;
};
std::vector<FrameFixation> read_fixation_csv(const std::string& path);
void write_fixation_csv(const std::string& path, const std::vector<FrameFixation>& rows);

// ---- misc ----
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Run manifest written next to every CLI output (<name>.manifest.json).
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;  // full argv for replay
  nlohmann::json config;          // resolved options
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

void write_manifest(const std::string& path, const RunManifest& m);
nlohmann::json read_json(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace ovsal::io
