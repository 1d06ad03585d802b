#include "ovsal/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ovsal/errors.hpp"
#include "ovsal/version.hpp"

namespace ovsal::io {

namespace {

std::ifstream open_in(const std::string& path, bool binary = true) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) throw InvalidInputError("cannot open " + path);
  return f;
}

std::ofstream open_out(const std::string& path, bool binary = true) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw InvalidInputError("cannot write " + path);
  return f;
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---- PFM ----

void write_pfm(const std::string& path, const Map& m) {
  if (m.shape.npix() == 0) throw InvalidInputError("refusing to write an empty map");
  auto f = open_out(path);
  f << "Pf\n" << m.shape.width << " " << m.shape.height << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(m.shape.width));
  for (int r = m.shape.height - 1; r >= 0; --r) {  // bottom-to-top
    for (int c = 0; c < m.shape.width; ++c) row[c] = static_cast<float>(m.at(r, c));
    f.write(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
  }
  if (!f) throw InvalidInputError("short write to " + path);
}

Map read_pfm(const std::string& path) {
  auto f = open_in(path);
  std::string magic;
  f >> magic;
  if (magic != "Pf") throw FormatError(path + ": not a grayscale PFM");
  int w = 0, h = 0;
  double scale = 0.0;
  f >> w >> h >> scale;
  if (!f || w <= 0 || h <= 0 || scale == 0.0) throw FormatError(path + ": bad PFM header");
  f.get();  // single whitespace after scale
  Map m({w, h});
  std::vector<float> row(static_cast<std::size_t>(w));
  const bool little = scale < 0.0;
  for (int r = h - 1; r >= 0; --r) {
    f.read(reinterpret_cast<char*>(row.data()), row.size() * sizeof(float));
    if (!f) throw FormatError(path + ": truncated PFM data");
    for (int c = 0; c < w; ++c) {
      float v = row[c];
      if (little != (std::endian::native == std::endian::little)) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        u = __builtin_bswap32(u);
        std::memcpy(&v, &u, 4);
      }
      m.at(r, c) = v;
    }
  }
  return m;
}

// ---- images ----

namespace {

Image read_pnm(const std::string& path) {
  auto f = open_in(path);
  std::string magic;
  f >> magic;
  if (magic != "P5" && magic != "P6") throw FormatError(path + ": unsupported PNM type");
  auto next_token = [&]() {
    std::string tok;
    for (;;) {
      f >> tok;
      if (!f) throw FormatError(path + ": truncated PNM header");
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return tok;
    }
  };
  int w = std::stoi(next_token());
  int h = std::stoi(next_token());
  int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw FormatError(path + ": unsupported PNM header");
  f.get();
  Image img;
  img.width = w;
  img.height = h;
  img.channels = (magic == "P6") ? 3 : 1;
  img.data.resize(static_cast<std::size_t>(w) * h * img.channels);
  f.read(reinterpret_cast<char*>(img.data.data()), img.data.size());
  if (!f) throw FormatError(path + ": truncated PNM data");
  if (maxval != 255)
    for (auto& b : img.data)
      b = static_cast<std::uint8_t>(b * 255 / maxval);
  return img;
}

Image read_png(const std::string& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str()))
    throw FormatError(path + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  Image img;
  img.width = static_cast<int>(pi.width);
  img.height = static_cast<int>(pi.height);
  img.channels = 3;
  img.data.resize(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, img.data.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw FormatError(path + ": " + pi.message);
  }
  return img;
}

}  // namespace

Image read_image(const std::string& path) {
  auto f = open_in(path);
  char magic[2] = {0, 0};
  f.read(magic, 2);
  f.close();
  if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) return read_pnm(path);
  if (static_cast<unsigned char>(magic[0]) == 0x89 && magic[1] == 'P') return read_png(path);
  throw FormatError(path + ": not a PNG or binary PNM file");
}

std::vector<double> to_luma(const Image& img) {
  std::vector<double> out(static_cast<std::size_t>(img.width) * img.height);
  if (img.channels == 1) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.data[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::uint8_t* px = &img.data[i * 3];
      out[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
  }
  return out;
}

namespace {

// viridis anchors at t = 0, 0.1, ..., 1.
constexpr double kPalette[11][3] = {
    {0.267004, 0.004874, 0.329415}, {0.282623, 0.140926, 0.457517},
    {0.253935, 0.265254, 0.529983}, {0.206756, 0.371758, 0.553117},
    {0.163625, 0.471133, 0.558148}, {0.127568, 0.566949, 0.550556},
    {0.134692, 0.658636, 0.517649}, {0.266941, 0.748751, 0.440573},
    {0.477504, 0.821444, 0.318195}, {0.741388, 0.873449, 0.149561},
    {0.993248, 0.906157, 0.143936}};

void palette_lookup(double t, std::uint8_t* rgb) {
  t = std::clamp(t, 0.0, 1.0) * 10.0;
  int i = std::min(9, static_cast<int>(t));
  double f = t - i;
  for (int k = 0; k < 3; ++k) {
    double v = kPalette[i][k] + f * (kPalette[i + 1][k] - kPalette[i][k]);
    rgb[k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
}

}  // namespace

void write_png_colormap(const std::string& path, const Map& m) {
  if (m.shape.npix() == 0) throw InvalidInputError("refusing to write an empty map");
  double peak = *std::max_element(m.v.begin(), m.v.end());
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(m.shape.npix()) * 3);
  for (std::int64_t i = 0; i < m.shape.npix(); ++i)
    palette_lookup(peak > 0.0 ? m.v[i] / peak : 0.0, &rgb[i * 3]);

  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(m.shape.width);
  pi.height = static_cast<png_uint_32>(m.shape.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, rgb.data(), 0, nullptr))
    throw InvalidInputError(path + ": " + pi.message);
}

// ---- WAV ----

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t rd_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

WavData read_wav(const std::string& path) {
  auto f = open_in(path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError(path + ": not a RIFF/WAVE file");

  int format = 0, channels = 0, bits = 0, rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t off = 12;
  while (off + 8 <= bytes.size()) {
    std::uint32_t len = rd_u32(p + off + 4);
    const unsigned char* body = p + off + 8;
    if (off + 8 + len > bytes.size()) throw FormatError(path + ": truncated chunk");
    if (std::memcmp(p + off, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError(path + ": short fmt chunk");
      format = rd_u16(body);
      channels = rd_u16(body + 2);
      rate = static_cast<int>(rd_u32(body + 4));
      bits = rd_u16(body + 14);
      if (format == 0xFFFE && len >= 40) format = rd_u16(body + 24);  // extensible
    } else if (std::memcmp(p + off, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    off += 8 + len + (len & 1);  // chunks are word-aligned
  }
  if (!data || channels <= 0 || rate <= 0) throw FormatError(path + ": missing fmt or data");

  const int bytes_per = bits / 8;
  if (bytes_per == 0) throw FormatError(path + ": bad bit depth");
  std::size_t n_frames = data_len / (static_cast<std::size_t>(bytes_per) * channels);

  WavData w;
  w.sample_rate = rate;
  w.channels.assign(channels, std::vector<double>(n_frames));
  for (std::size_t i = 0; i < n_frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      const unsigned char* s = data + (i * channels + c) * bytes_per;
      double v = 0.0;
      if (format == 1 && bits == 16) {
        v = static_cast<std::int16_t>(rd_u16(s)) / 32768.0;
      } else if (format == 1 && bits == 24) {
        std::int32_t x = s[0] | (s[1] << 8) | (s[2] << 16);
        if (x & 0x800000) x |= ~0xFFFFFF;
        v = x / 8388608.0;
      } else if (format == 1 && bits == 32) {
        v = static_cast<std::int32_t>(rd_u32(s)) / 2147483648.0;
      } else if (format == 3 && bits == 32) {
        float fv;
        std::uint32_t u = rd_u32(s);
        std::memcpy(&fv, &u, 4);
        v = fv;
      } else if (format == 3 && bits == 64) {
        std::uint64_t u = rd_u32(s) | (static_cast<std::uint64_t>(rd_u32(s + 4)) << 32);
        std::memcpy(&v, &u, 8);
      } else {
        throw FormatError(path + ": unsupported WAV encoding");
      }
      w.channels[c][i] = v;
    }
  }
  return w;
}

void write_wav(const std::string& path, const WavData& w, bool float32) {
  if (w.channels.empty() || w.sample_rate <= 0)
    throw InvalidInputError("wav needs at least one channel and a sample rate");
  const std::size_t n = w.channels[0].size();
  for (const auto& c : w.channels)
    if (c.size() != n) throw InvalidInputError("wav channels differ in length");

  const int channels = static_cast<int>(w.channels.size());
  const int bytes_per = float32 ? 4 : 2;
  const std::uint32_t data_len = static_cast<std::uint32_t>(n * channels * bytes_per);

  std::string out;
  out.reserve(60 + data_len);
  out += "RIFF";
  put_u32(out, 4 + (8 + 16) + (float32 ? 8 + 4 : 0) + 8 + data_len);
  out += "WAVE";
  out += "fmt ";
  put_u32(out, 16);
  put_u16(out, float32 ? 3 : 1);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate * channels * bytes_per));
  put_u16(out, static_cast<std::uint16_t>(channels * bytes_per));
  put_u16(out, static_cast<std::uint16_t>(bytes_per * 8));
  if (float32) {  // fact chunk, expected for non-PCM formats
    out += "fact";
    put_u32(out, 4);
    put_u32(out, static_cast<std::uint32_t>(n));
  }
  out += "data";
  put_u32(out, data_len);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < channels; ++c) {
      double v = w.channels[c][i];
      if (float32) {
        float fv = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &fv, 4);
        put_u32(out, u);
      } else {
        double clamped = std::clamp(v, -1.0, 32767.0 / 32768.0);
        put_u16(out, static_cast<std::uint16_t>(
                         static_cast<std::int16_t>(std::lround(clamped * 32768.0))));
      }
    }
  }
  auto f = open_out(path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw InvalidInputError("short write to " + path);
}

// ---- CSV ----

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& path, int line_no) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw FormatError(path + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::string& path, int line_no) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw FormatError(path + ":" + std::to_string(line_no) + ": bad integer '" + s + "'");
  }
}

void expect_header(std::ifstream& f, const char* expected, const std::string& path) {
  std::string line;
  if (!std::getline(f, line)) throw FormatError(path + ": empty file");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  if (line != expected)
    throw FormatError(path + ": expected header '" + expected + "', got '" + line + "'");
}

}  // namespace

std::vector<gaze::GazeSample> read_gaze_csv(const std::string& path) {
  auto f = open_in(path, false);
  expect_header(f, "t,gx,gy,gz,pitch,yaw,roll", path);
  std::vector<gaze::GazeSample> out;
  std::string line;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cols = split_csv_line(line);
    if (cols.size() != 7)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 7 columns");
    gaze::GazeSample s;
    s.t = parse_double(cols[0], path, line_no);
    s.dir = {parse_double(cols[1], path, line_no), parse_double(cols[2], path, line_no),
             parse_double(cols[3], path, line_no)};
    s.pitch_deg = parse_double(cols[4], path, line_no);
    s.yaw_deg = parse_double(cols[5], path, line_no);
    s.roll_deg = parse_double(cols[6], path, line_no);
    out.push_back(s);
  }
  return out;
}

void write_gaze_csv(const std::string& path, const std::vector<gaze::GazeSample>& samples) {
  auto f = open_out(path, false);
  f << "t,gx,gy,gz,pitch,yaw,roll\n";
  for (const auto& s : samples)
    f << fmt_double(s.t) << ',' << fmt_double(s.dir.x) << ',' << fmt_double(s.dir.y) << ','
      << fmt_double(s.dir.z) << ',' << fmt_double(s.pitch_deg) << ','
      << fmt_double(s.yaw_deg) << ',' << fmt_double(s.roll_deg) << '\n';
}

std::vector<FrameFixation> read_fixation_csv(const std::string& path) {
  auto f = open_in(path, false);
  expect_header(f, "frame,lat,lon,count", path);
  std::vector<FrameFixation> out;
  std::string line;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cols = split_csv_line(line);
    if (cols.size() != 4)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 4 columns");
    FrameFixation r;
    r.frame = parse_int(cols[0], path, line_no);
    r.lat = parse_double(cols[1], path, line_no);
    r.lon = parse_double(cols[2], path, line_no);
    r.count = parse_int(cols[3], path, line_no);
    out.push_back(r);
  }
  return out;
}

void write_fixation_csv(const std::string& path, const std::vector<FrameFixation>& rows) {
  auto f = open_out(path, false);
  f << "frame,lat,lon,count\n";
  for (const auto& r : rows)
    f << r.frame << ',' << fmt_double(r.lat) << ',' << fmt_double(r.lon) << ',' << r.count
      << '\n';
}

// ---- misc ----

std::string read_text_file(const std::string& path) {
  auto f = open_in(path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  auto f = open_out(path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw InvalidInputError("short write to " + path);
}

void write_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::json j;
  j["argv"] = m.argv;
  j["command"] = m.command;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["seed"] = m.seed;
  j["version"] = kVersion;
  j["wall_seconds"] = m.wall_seconds;
  write_json(path, j);
}

nlohmann::json read_json(const std::string& path) {
  auto f = open_in(path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return j;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace ovsal::io
