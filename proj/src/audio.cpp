#include "ovsal/audio.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>

#include "ovsal/errors.hpp"
#include "ovsal/io.hpp"

namespace ovsal::audio {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_clip(const BFormatClip& c) {
  if (c.w.empty()) throw InvalidInputError("b-format clip is empty");
  if (c.x.size() != c.w.size() || c.y.size() != c.w.size() || c.z.size() != c.w.size())
    throw InvalidInputError("b-format channels differ in length");
  if (!(c.sample_rate > 0)) throw InvalidInputError("b-format sample rate must be positive");
}

}  // namespace

BFormatClip load_bformat(const std::string& path, Ordering ordering) {
  io::WavData wav = io::read_wav(path);
  if (wav.channels.size() != 4)
    throw FormatError(path + ": b-format needs 4 channels, file has " +
                      std::to_string(wav.channels.size()));
  BFormatClip c;
  c.sample_rate = wav.sample_rate;
  if (ordering == Ordering::fuma) {
    c.w = std::move(wav.channels[0]);
    c.x = std::move(wav.channels[1]);
    c.y = std::move(wav.channels[2]);
    c.z = std::move(wav.channels[3]);
  } else {
    c.w = std::move(wav.channels[0]);
    c.y = std::move(wav.channels[1]);
    c.z = std::move(wav.channels[2]);
    c.x = std::move(wav.channels[3]);
    const double g = 1.0 / std::sqrt(2.0);
    for (double& s : c.w) s *= g;
  }
  return c;
}

void audio_angles(sphere::Vec3 u, double& theta_rad, double& phi_rad) {
  // front = lon 180 = (-1,0,0); left = lon 270 = (0,-1,0); up = +z
  theta_rad = std::atan2(-u.y, -u.x);
  double s = u.z;
  if (s > 1.0) s = 1.0;
  if (s < -1.0) s = -1.0;
  phi_rad = std::asin(s);
}

BFormatClip encode_point_source(const std::vector<double>& signal, double sample_rate,
                                sphere::SphericalCoord direction) {
  double theta, phi;
  audio_angles(sphere::latlon_to_vec(sphere::canonical(direction)), theta, phi);
  const double gw = 1.0 / std::sqrt(2.0);
  const double gx = std::cos(theta) * std::cos(phi);
  const double gy = std::sin(theta) * std::cos(phi);
  const double gz = std::sin(phi);
  BFormatClip c;
  c.sample_rate = sample_rate;
  const std::size_t n = signal.size();
  c.w.resize(n);
  c.x.resize(n);
  c.y.resize(n);
  c.z.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = signal[i];
    c.w[i] = gw * s;
    c.x[i] = gx * s;
    c.y[i] = gy * s;
    c.z[i] = gz * s;
  }
  return c;
}

Map aem(const BFormatClip& clip, GridShape grid, Exec exec) {
  require_clip(clip);
  const std::size_t n = clip.w.size();

  // time mean of m m^T for m = (W,X,Y,Z); one fixed accumulation order so the
  // per-pixel quadratic form below is deterministic under any thread count
  double mom[4][4] = {};
  for (std::size_t i = 0; i < n; ++i) {
    const double m[4] = {clip.w[i], clip.x[i], clip.y[i], clip.z[i]};
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b) mom[a][b] += m[a] * m[b];
  }
  for (int a = 0; a < 4; ++a)
    for (int b = a; b < 4; ++b) {
      mom[a][b] /= static_cast<double>(n);
      mom[b][a] = mom[a][b];
    }

  Map out(grid);
  parallel_for(
      out.v.size(),
      [&](std::size_t i) {
        const int row = static_cast<int>(i) / grid.width;
        const int col = static_cast<int>(i) % grid.width;
        double theta, phi;
        audio_angles(sphere::latlon_to_vec(sphere::center_of(row, col, grid)), theta, phi);
        const double g[4] = {0.5 * std::sqrt(2.0), 0.5 * std::cos(theta) * std::cos(phi),
                             0.5 * std::sin(theta) * std::cos(phi), 0.5 * std::sin(phi)};
        double v = 0.0;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) v += g[a] * g[b] * mom[a][b];
        out.v[i] = v > 0.0 ? v : 0.0;  // mean of squares; clip fp cancellation noise
      },
      exec);

  double mx = 0.0;
  for (double v : out.v)
    if (v > mx) mx = v;
  if (mx > 0.0)
    for (double& v : out.v) v /= mx;
  return out;
}

PowerSpectrogram power_spectrogram(const std::vector<double>& samples, const StftParams& p,
                                   Exec exec) {
  if (p.n_fft <= 0 || p.hop <= 0) throw InvalidInputError("stft: n_fft and hop must be positive");
  if (samples.size() < static_cast<std::size_t>(p.n_fft))
    throw InvalidInputError("stft: need at least n_fft = " + std::to_string(p.n_fft) +
                            " samples, got " + std::to_string(samples.size()));
  const int n_bins = p.n_fft / 2 + 1;
  const int n_frames = 1 + static_cast<int>((samples.size() - p.n_fft) / p.hop);

  std::vector<double> win(p.n_fft);
  for (int i = 0; i < p.n_fft; ++i)
    win[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / p.n_fft);  // periodic Hann

  PowerSpectrogram out;
  out.n_frames = n_frames;
  out.n_bins = n_bins;
  out.v.resize(static_cast<std::size_t>(n_frames) * n_bins);

  // One ESTIMATE plan; fftw_execute_dft_r2c on per-frame fftw_malloc'd buffers
  // is reentrant and alignment-compatible with the prototype.
  double* proto_in = fftw_alloc_real(p.n_fft);
  fftw_complex* proto_out = fftw_alloc_complex(n_bins);
  fftw_plan plan = fftw_plan_dft_r2c_1d(p.n_fft, proto_in, proto_out, FFTW_ESTIMATE);

  parallel_for(
      static_cast<std::size_t>(n_frames),
      [&](std::size_t f) {
        double* in = fftw_alloc_real(p.n_fft);
        fftw_complex* sp = fftw_alloc_complex(n_bins);
        const double* src = samples.data() + f * static_cast<std::size_t>(p.hop);
        for (int i = 0; i < p.n_fft; ++i) in[i] = src[i] * win[i];
        fftw_execute_dft_r2c(plan, in, sp);
        double* dst = out.v.data() + f * n_bins;
        for (int k = 0; k < n_bins; ++k) dst[k] = sp[k][0] * sp[k][0] + sp[k][1] * sp[k][1];
        fftw_free(sp);
        fftw_free(in);
      },
      exec);

  fftw_destroy_plan(plan);
  fftw_free(proto_out);
  fftw_free(proto_in);
  return out;
}

std::vector<double> mel_filterbank(int n_mels, int n_fft, double sample_rate) {
  if (n_mels <= 0 || n_fft <= 0 || !(sample_rate > 0))
    throw InvalidInputError("mel filterbank: bad parameters");
  const int n_bins = n_fft / 2 + 1;
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };

  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> pts(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) pts[i] = mel_to_hz(mel_hi * i / (n_mels + 1));

  std::vector<double> fb(static_cast<std::size_t>(n_mels) * n_bins, 0.0);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = pts[m], c = pts[m + 1], hi = pts[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * sample_rate / n_fft;
      double w = 0.0;
      if (f >= lo && f <= c)
        w = (f - lo) / (c - lo);
      else if (f > c && f <= hi)
        w = (hi - f) / (hi - c);
      fb[static_cast<std::size_t>(m) * n_bins + k] = w;
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const std::vector<double>& samples, double sample_rate,
                               const StftParams& p, Exec exec) {
  PowerSpectrogram ps = power_spectrogram(samples, p, exec);
  const std::vector<double> fb = mel_filterbank(p.n_mels, p.n_fft, sample_rate);

  MelSpectrogram out;
  out.n_frames = ps.n_frames;
  out.n_mels = p.n_mels;
  out.params = p;
  out.v.resize(static_cast<std::size_t>(ps.n_frames) * p.n_mels);

  parallel_for(
      static_cast<std::size_t>(ps.n_frames),
      [&](std::size_t f) {
        const double* spec = ps.v.data() + f * ps.n_bins;
        for (int m = 0; m < p.n_mels; ++m) {
          const double* row = fb.data() + static_cast<std::size_t>(m) * ps.n_bins;
          double acc = 0.0;
          for (int k = 0; k < ps.n_bins; ++k) acc += row[k] * spec[k];
          out.at(static_cast<int>(f), m) = std::log(acc + 1e-10);
        }
      },
      exec);
  return out;
}

double sef(const std::vector<double>& mono, double sample_rate, double frame_seconds,
           double hop_seconds) {
  if (mono.empty()) throw InvalidInputError("sef: empty signal");
  if (!(sample_rate > 0)) throw InvalidInputError("sef: sample rate must be positive");
  const int frame = std::max(1, static_cast<int>(std::lround(frame_seconds * sample_rate)));
  const int hop = std::max(1, static_cast<int>(std::lround(hop_seconds * sample_rate)));
  if (mono.size() < static_cast<std::size_t>(frame))
    throw InvalidInputError("sef: signal shorter than one frame");
  const int n_frames = 1 + static_cast<int>((mono.size() - frame) / hop);

  std::vector<double> e(n_frames);
  for (int f = 0; f < n_frames; ++f) {
    const double* src = mono.data() + static_cast<std::size_t>(f) * hop;
    double acc = 0.0;
    for (int i = 0; i < frame; ++i) acc += src[i] * src[i];
    e[f] = acc / frame;
  }
  double mean = 0.0;
  for (double v : e) mean += v;
  mean /= n_frames;
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (double v : e) var += (v - mean) * (v - mean);
  var /= n_frames;
  return std::sqrt(var) / mean;
}

double zcr(const std::vector<double>& mono) {
  if (mono.empty()) throw InvalidInputError("zcr: empty signal");
  std::size_t flips = 0;
  for (std::size_t i = 1; i < mono.size(); ++i)
    if (mono[i - 1] * mono[i] < 0.0) ++flips;
  return static_cast<double>(flips) / static_cast<double>(mono.size());
}

}  // namespace ovsal::audio
