#pragma once
// First-order ambisonics (B-format, FuMa gains internally), audio energy maps,
// Mel spectrograms and the scalar audio attributes (SEF, ZCR).
//
// Audio frame: the listener faces the video front (lon 180). Azimuth theta is
// measured from the front, positive toward the listener's left (lon 270);
// elevation phi equals latitude.

#include <string>
#include <vector>

#include "ovsal/map.hpp"
#include "ovsal/parallel.hpp"
#include "ovsal/sphere.hpp"

namespace ovsal::audio {

struct BFormatClip {
  double sample_rate = 48000.0;
  std::vector<double> w, x, y, z;

  std::size_t n_samples() const { return w.size(); }
  double duration() const { return sample_rate > 0 ? w.size() / sample_rate : 0.0; }
};

enum class Ordering { fuma, ambix };

// 4-channel WAV -> B-format. fuma: file channels are W,X,Y,Z as stored.
// ambix: file channels are W,Y,Z,X; W is rescaled by 1/sqrt(2) to FuMa gain.
BFormatClip load_bformat(const std::string& path, Ordering ordering);

// Azimuth/elevation (radians) of a world unit direction in the audio frame.
void audio_angles(sphere::Vec3 u, double& theta_rad, double& phi_rad);

// W = s/sqrt(2), X = s cos(theta)cos(phi), Y = s sin(theta)cos(phi),
// Z = s sin(phi).
BFormatClip encode_point_source(const std::vector<double>& signal, double sample_rate,
                                sphere::SphericalCoord direction);

// Audio energy map: per pixel-center direction d, a virtual cardioid
// s_d = (sqrt(2) W + X cos(theta)cos(phi) + Y sin(theta)cos(phi) + Z sin(phi)) / 2
// and the value is the time mean of s_d^2, max-normalized to 1 (all zero for a
// silent clip). Computed from the 4x4 channel moment matrix, so the map is
// bitwise identical across serial/parallel execution.
Map aem(const BFormatClip& clip, GridShape grid, Exec exec = Exec::parallel);

struct StftParams {
  int n_fft = 1024;
  int hop = 480;
  int n_mels = 64;
};

// Magnitude-squared one-sided STFT, periodic Hann window, no padding:
// n_frames = 1 + floor((n_samples - n_fft)/hop).
struct PowerSpectrogram {
  int n_frames = 0;
  int n_bins = 0;  // n_fft/2 + 1
  std::vector<double> v;  // frame-major

  double& at(int f, int k) { return v[static_cast<std::size_t>(f) * n_bins + k]; }
  double at(int f, int k) const { return v[static_cast<std::size_t>(f) * n_bins + k]; }
};

PowerSpectrogram power_spectrogram(const std::vector<double>& samples, const StftParams& p,
                                   Exec exec = Exec::parallel);

// Peak-1 triangular filters on the HTK mel scale (2595 log10(1 + f/700)),
// band edges at 0 and sample_rate/2; row-major n_mels x (n_fft/2 + 1).
std::vector<double> mel_filterbank(int n_mels, int n_fft, double sample_rate);

struct MelSpectrogram {
  int n_frames = 0;
  int n_mels = 0;
  StftParams params;
  std::vector<double> v;  // frame-major, log energies

  double& at(int f, int m) { return v[static_cast<std::size_t>(f) * n_mels + m]; }
  double at(int f, int m) const { return v[static_cast<std::size_t>(f) * n_mels + m]; }
};

// log(filterbank * |STFT|^2 + 1e-10)
MelSpectrogram mel_spectrogram(const std::vector<double>& samples, double sample_rate,
                               const StftParams& p = {}, Exec exec = Exec::parallel);

// Coefficient of variation (population std / mean) of short-term frame
// energies; 0 for silence.
double sef(const std::vector<double>& mono, double sample_rate, double frame_seconds = 0.050,
           double hop_seconds = 0.025);

// Sign changes between consecutive samples, divided by the sample count.
double zcr(const std::vector<double>& mono);

}  // namespace ovsal::audio
