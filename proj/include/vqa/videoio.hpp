#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqa/errors.hpp"
#include "vqa/resample.hpp"
#include "vqa/tensor.hpp"

namespace vqa {

struct Rational {
  int64_t num = 0;
  int64_t den = 1;

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }

  // Accepts "30", "30000/1001", "29.97" style tokens. Decimal rates are
  // converted exactly from their digits (29.97 -> 2997/100).
  static Rational parse(const std::string& s) {
    auto bad = [&] { return DataError("cannot parse frame rate '" + s + "'"); };
    if (s.empty()) throw bad();
    auto slash = s.find('/');
    try {
      if (slash != std::string::npos) {
        Rational r{std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1))};
        if (r.num <= 0 || r.den <= 0) throw bad();
        return r;
      }
      auto dot = s.find('.');
      if (dot != std::string::npos) {
        const std::string frac = s.substr(dot + 1);
        int64_t den = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
        Rational r{std::stoll(s.substr(0, dot)) * den + std::stoll(frac), den};
        if (r.num <= 0) throw bad();
        return r;
      }
      Rational r{std::stoll(s), 1};
      if (r.num <= 0) throw bad();
      return r;
    } catch (const std::logic_error&) {
      throw bad();
    }
  }
};

enum class PixelFormat { kYuv420, kYuv444, kRgb };

inline std::string pixel_format_str(PixelFormat f) {
  switch (f) {
    case PixelFormat::kYuv420: return "yuv420";
    case PixelFormat::kYuv444: return "yuv444";
    default: return "rgb";
  }
}

// One decoded frame: three planes of native-range samples (16-bit storage
// covers both 8- and 10-bit content).
struct PlanarFrame {
  std::array<std::vector<uint16_t>, 3> planes;
};

struct FrameSequence {
  std::vector<PlanarFrame> frames;
  int64_t width = 0;
  int64_t height = 0;
  Rational frame_rate;
  int bit_depth = 8;
  PixelFormat pixel_format = PixelFormat::kYuv420;
  bool full_range = false;
  std::string transfer_tag;  // informational: "bt709", "pq", ...

  int64_t frame_count() const { return static_cast<int64_t>(frames.size()); }

  int64_t plane_width(int plane) const {
    return (plane > 0 && pixel_format == PixelFormat::kYuv420) ? width / 2 : width;
  }
  int64_t plane_height(int plane) const {
    return (plane > 0 && pixel_format == PixelFormat::kYuv420) ? height / 2 : height;
  }
};

// Temporally sampled, RGB-converted, spatially resized clip. Frames are
// [3,H',W'] tensors in [0,1].
struct SampledClip {
  std::vector<Tensor> frames;
  std::vector<int64_t> source_indices;

  int64_t frame_count() const { return static_cast<int64_t>(frames.size()); }
};

// ---------------------------------------------------------------------------
// Temporal sampling: R fps -> 1 fps. K = floor(N/R), index_i = floor(R*i),
// both evaluated in exact integer arithmetic on the rational rate.

inline std::vector<int64_t> temporal_sample_indices(int64_t n_frames, Rational rate) {
  if (rate.num <= 0 || rate.den <= 0)
    throw DataError("temporal sampling: frame rate must be positive");
  using I128 = __int128;
  if (static_cast<I128>(n_frames) * rate.den < static_cast<I128>(rate.num))
    throw DataError("video shorter than one second (" + std::to_string(n_frames) +
                    " frames at " + rate.str() + " fps)");
  const int64_t k =
      static_cast<int64_t>(static_cast<I128>(n_frames) * rate.den / rate.num);
  std::vector<int64_t> indices;
  indices.reserve(static_cast<std::size_t>(k));
  for (int64_t i = 0; i < k; ++i)
    indices.push_back(
        static_cast<int64_t>(static_cast<I128>(rate.num) * i / rate.den));
  return indices;
}

inline std::vector<int64_t> temporal_sample(const FrameSequence& video) {
  return temporal_sample_indices(video.frame_count(), video.frame_rate);
}

// ---------------------------------------------------------------------------
// YUV -> RGB. BT.709 matrix for 8-bit content, BT.2020 non-constant-luminance
// for 10-bit; limited-range expansion unless the source is tagged full range.
// Values stay in the coded nonlinear domain, clamped to [0,1].

inline Tensor to_rgb(const PlanarFrame& frame, const FrameSequence& meta) {
  const int64_t w = meta.width, h = meta.height;
  const double maxval = static_cast<double>((1 << meta.bit_depth) - 1);
  Tensor out({3, h, w});

  if (meta.pixel_format == PixelFormat::kRgb) {
    for (int p = 0; p < 3; ++p)
      for (int64_t i = 0; i < h * w; ++i)
        out[p * h * w + i] =
            std::clamp(static_cast<double>(frame.planes[static_cast<std::size_t>(p)]
                                               [static_cast<std::size_t>(i)]) /
                           maxval,
                       0.0, 1.0);
    return out;
  }

  const bool c420 = meta.pixel_format == PixelFormat::kYuv420;
  const int64_t cw = meta.plane_width(1);
  const double kr = meta.bit_depth > 8 ? 0.2627 : 0.2126;
  const double kb = meta.bit_depth > 8 ? 0.0593 : 0.0722;
  const double kg = 1.0 - kr - kb;
  const double s = static_cast<double>(1 << (meta.bit_depth - 8));
  const double mid = static_cast<double>(1 << (meta.bit_depth - 1));

  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double yv = frame.planes[0][static_cast<std::size_t>(y * w + x)];
      const int64_t ci = c420 ? (y / 2) * cw + (x / 2) : y * w + x;
      const double cb = frame.planes[1][static_cast<std::size_t>(ci)];
      const double cr = frame.planes[2][static_cast<std::size_t>(ci)];
      double yp, cbp, crp;
      if (meta.full_range) {
        yp = yv / maxval;
        cbp = (cb - mid) / maxval;
        crp = (cr - mid) / maxval;
      } else {
        yp = (yv - 16.0 * s) / (219.0 * s);
        cbp = (cb - 128.0 * s) / (224.0 * s);
        crp = (cr - 128.0 * s) / (224.0 * s);
      }
      const double r = yp + 2.0 * (1.0 - kr) * crp;
      const double b = yp + 2.0 * (1.0 - kb) * cbp;
      const double gch = (yp - kr * r - kb * b) / kg;
      out.at3(0, y, x) = std::clamp(r, 0.0, 1.0);
      out.at3(1, y, x) = std::clamp(gch, 0.0, 1.0);
      out.at3(2, y, x) = std::clamp(b, 0.0, 1.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Y4M decode/encode and raw planar YUV with a JSON sidecar.

namespace detail {

class CountingReader {
 public:
  explicit CountingReader(std::istream& is) : is_(is) {}

  std::size_t offset() const { return offset_; }

  int get() {
    int c = is_.get();
    if (c != std::char_traits<char>::eof()) ++offset_;
    return c;
  }

  bool read(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    offset_ += static_cast<std::size_t>(is_.gcount());
    return static_cast<std::size_t>(is_.gcount()) == n;
  }

  // Reads until '\n' (consumed, not returned). Fails on EOF before newline.
  std::optional<std::string> read_line(std::size_t max_len = 4096) {
    std::string line;
    while (line.size() < max_len) {
      int c = get();
      if (c == std::char_traits<char>::eof()) return std::nullopt;
      if (c == '\n') return line;
      line.push_back(static_cast<char>(c));
    }
    return std::nullopt;
  }

  bool at_eof() {
    return is_.peek() == std::char_traits<char>::eof();
  }

 private:
  std::istream& is_;
  std::size_t offset_ = 0;
};

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline void read_plane(CountingReader& rd, std::vector<uint16_t>& plane,
                       int64_t count, int bit_depth, int64_t frame_index) {
  plane.resize(static_cast<std::size_t>(count));
  const std::size_t start = rd.offset();
  if (bit_depth > 8) {
    std::vector<unsigned char> buf(static_cast<std::size_t>(count) * 2);
    if (!rd.read(buf.data(), buf.size()))
      throw ParseError("truncated payload in frame " + std::to_string(frame_index),
                       start);
    const uint16_t maxval = static_cast<uint16_t>((1 << bit_depth) - 1);
    for (int64_t i = 0; i < count; ++i) {
      const uint16_t v = static_cast<uint16_t>(
          buf[static_cast<std::size_t>(i) * 2] |
          (buf[static_cast<std::size_t>(i) * 2 + 1] << 8));
      if (v > maxval)
        throw ParseError("sample value " + std::to_string(v) + " exceeds " +
                             std::to_string(bit_depth) + "-bit range in frame " +
                             std::to_string(frame_index),
                         start + static_cast<std::size_t>(i) * 2);
      plane[static_cast<std::size_t>(i)] = v;
    }
  } else {
    std::vector<unsigned char> buf(static_cast<std::size_t>(count));
    if (!rd.read(buf.data(), buf.size()))
      throw ParseError("truncated payload in frame " + std::to_string(frame_index),
                       start);
    for (int64_t i = 0; i < count; ++i)
      plane[static_cast<std::size_t>(i)] = buf[static_cast<std::size_t>(i)];
  }
}

}  // namespace detail

inline FrameSequence decode_y4m(std::istream& is) {
  detail::CountingReader rd(is);
  auto header = rd.read_line();
  if (!header) throw ParseError("missing Y4M stream header", 0);
  auto tokens = detail::split_ws(*header);
  if (tokens.empty() || tokens[0] != "YUV4MPEG2")
    throw ParseError("not a YUV4MPEG2 stream", 0);

  FrameSequence seq;
  std::string chroma = "420";
  bool have_w = false, have_h = false, have_f = false;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    const std::string val = tok.substr(1);
    switch (tok[0]) {
      case 'W': seq.width = std::stoll(val); have_w = true; break;
      case 'H': seq.height = std::stoll(val); have_h = true; break;
      case 'F': {
        auto colon = val.find(':');
        if (colon == std::string::npos)
          throw ParseError("malformed F tag '" + tok + "'", 0);
        seq.frame_rate = {std::stoll(val.substr(0, colon)),
                          std::stoll(val.substr(colon + 1))};
        have_f = true;
        break;
      }
      case 'C': chroma = val; break;
      case 'I': break;  // interlacing: informational only
      case 'A': break;  // pixel aspect: informational only
      case 'X':
        if (val == "COLORRANGE=FULL") seq.full_range = true;
        else if (val == "COLORRANGE=LIMITED") seq.full_range = false;
        else if (val.rfind("TRANSFER=", 0) == 0) seq.transfer_tag = val.substr(9);
        break;
      default:
        throw ParseError("unknown Y4M header tag '" + tok + "'", 0);
    }
  }
  if (!have_w || !have_h || !have_f)
    throw ParseError("Y4M header missing W, H or F tag", 0);
  if (seq.width <= 0 || seq.height <= 0)
    throw ParseError("Y4M header has non-positive dimensions", 0);

  if (chroma == "420" || chroma == "420jpeg" || chroma == "420mpeg2" ||
      chroma == "420paldv") {
    seq.pixel_format = PixelFormat::kYuv420;
    seq.bit_depth = 8;
  } else if (chroma == "420p10") {
    seq.pixel_format = PixelFormat::kYuv420;
    seq.bit_depth = 10;
  } else if (chroma == "444") {
    seq.pixel_format = PixelFormat::kYuv444;
    seq.bit_depth = 8;
  } else if (chroma == "444p10") {
    seq.pixel_format = PixelFormat::kYuv444;
    seq.bit_depth = 10;
  } else {
    throw ParseError("unsupported chroma sampling C" + chroma, 0);
  }
  if (seq.pixel_format == PixelFormat::kYuv420 &&
      (seq.width % 2 != 0 || seq.height % 2 != 0))
    throw ParseError("4:2:0 requires even dimensions, got " +
                         std::to_string(seq.width) + "x" + std::to_string(seq.height),
                     0);
  if (seq.transfer_tag.empty())
    seq.transfer_tag = seq.bit_depth > 8 ? "pq" : "bt709";

  const int64_t luma = seq.width * seq.height;
  const int64_t chroma_n = seq.plane_width(1) * seq.plane_height(1);
  int64_t frame_index = 0;
  while (!rd.at_eof()) {
    const std::size_t frame_start = rd.offset();
    auto fh = rd.read_line();
    if (!fh)
      throw ParseError("truncated FRAME header at frame " +
                           std::to_string(frame_index),
                       frame_start);
    if (fh->rfind("FRAME", 0) != 0)
      throw ParseError("expected FRAME marker at frame " +
                           std::to_string(frame_index),
                       frame_start);
    PlanarFrame frame;
    detail::read_plane(rd, frame.planes[0], luma, seq.bit_depth, frame_index);
    detail::read_plane(rd, frame.planes[1], chroma_n, seq.bit_depth, frame_index);
    detail::read_plane(rd, frame.planes[2], chroma_n, seq.bit_depth, frame_index);
    seq.frames.push_back(std::move(frame));
    ++frame_index;
  }
  return seq;
}

// Raw planar YUV/RGB with a JSON sidecar describing geometry:
// {"width","height","fps","bit_depth","pixel_format","range"(opt),"transfer"(opt)}
inline FrameSequence decode_raw(std::istream& is, const nlohmann::json& sidecar) {
  FrameSequence seq;
  try {
    seq.width = sidecar.at("width").get<int64_t>();
    seq.height = sidecar.at("height").get<int64_t>();
    seq.frame_rate = Rational::parse(sidecar.at("fps").get<std::string>());
    seq.bit_depth = sidecar.at("bit_depth").get<int>();
    const std::string fmt = sidecar.at("pixel_format").get<std::string>();
    if (fmt == "yuv420") seq.pixel_format = PixelFormat::kYuv420;
    else if (fmt == "yuv444") seq.pixel_format = PixelFormat::kYuv444;
    else if (fmt == "rgb") seq.pixel_format = PixelFormat::kRgb;
    else throw DataError("sidecar: unsupported pixel_format '" + fmt + "'");
    if (sidecar.contains("range")) {
      const std::string range = sidecar["range"].get<std::string>();
      if (range == "full") seq.full_range = true;
      else if (range == "limited") seq.full_range = false;
      else throw DataError("sidecar: unknown range '" + range + "'");
    }
    if (sidecar.contains("transfer"))
      seq.transfer_tag = sidecar["transfer"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid sidecar: ") + e.what());
  }
  if (seq.bit_depth != 8 && seq.bit_depth != 10)
    throw DataError("sidecar: bit_depth must be 8 or 10");
  if (seq.width <= 0 || seq.height <= 0)
    throw DataError("sidecar: non-positive dimensions");
  if (seq.pixel_format == PixelFormat::kYuv420 &&
      (seq.width % 2 != 0 || seq.height % 2 != 0))
    throw DataError("sidecar: 4:2:0 requires even dimensions");
  if (seq.transfer_tag.empty())
    seq.transfer_tag = seq.bit_depth > 8 ? "pq" : "bt709";
  if (seq.pixel_format == PixelFormat::kRgb) seq.full_range = true;

  detail::CountingReader rd(is);
  const int64_t plane0 = seq.width * seq.height;
  const int64_t plane12 = seq.pixel_format == PixelFormat::kRgb
                              ? plane0
                              : seq.plane_width(1) * seq.plane_height(1);
  int64_t frame_index = 0;
  while (!rd.at_eof()) {
    PlanarFrame frame;
    detail::read_plane(rd, frame.planes[0], plane0, seq.bit_depth, frame_index);
    detail::read_plane(rd, frame.planes[1], plane12, seq.bit_depth, frame_index);
    detail::read_plane(rd, frame.planes[2], plane12, seq.bit_depth, frame_index);
    seq.frames.push_back(std::move(frame));
    ++frame_index;
  }
  if (seq.frames.empty()) throw DataError("raw video contains no frames");
  return seq;
}

inline FrameSequence decode(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open video '" + path.string() + "'");
  if (ext == ".y4m") return decode_y4m(is);

  const std::filesystem::path sidecar_path = path.string() + ".json";
  std::ifstream sc(sidecar_path);
  if (!sc)
    throw DataError("raw video '" + path.string() + "' needs sidecar '" +
                    sidecar_path.string() + "'");
  nlohmann::json sidecar;
  try {
    sc >> sidecar;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid sidecar JSON '" + sidecar_path.string() +
                    "': " + e.what());
  }
  return decode_raw(is, sidecar);
}

inline void encode_y4m(std::ostream& os, const FrameSequence& seq) {
  std::string chroma;
  if (seq.pixel_format == PixelFormat::kYuv420)
    chroma = seq.bit_depth > 8 ? "C420p10" : "C420";
  else if (seq.pixel_format == PixelFormat::kYuv444)
    chroma = seq.bit_depth > 8 ? "C444p10" : "C444";
  else
    throw DataError("Y4M cannot carry RGB frames");
  os << "YUV4MPEG2 W" << seq.width << " H" << seq.height << " F"
     << seq.frame_rate.num << ":" << seq.frame_rate.den << " Ip A1:1 " << chroma;
  if (seq.full_range) os << " XCOLORRANGE=FULL";
  os << "\n";
  for (const PlanarFrame& frame : seq.frames) {
    os << "FRAME\n";
    for (const auto& plane : frame.planes) {
      if (seq.bit_depth > 8) {
        for (uint16_t v : plane) {
          const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                      static_cast<unsigned char>(v >> 8)};
          os.write(reinterpret_cast<const char*>(b), 2);
        }
      } else {
        for (uint16_t v : plane) {
          const unsigned char b = static_cast<unsigned char>(v);
          os.write(reinterpret_cast<const char*>(&b), 1);
        }
      }
    }
  }
  if (!os) throw DataError("Y4M write failed");
}

inline void encode_y4m(const std::filesystem::path& path, const FrameSequence& seq) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  encode_y4m(os, seq);
}

// ---------------------------------------------------------------------------
// Full preprocessing: 1-fps temporal sampling, RGB conversion, bicubic
// downsampling to H'xW' (default 384x384).

inline SampledClip preprocess(const FrameSequence& video, int64_t out_h = 384,
                              int64_t out_w = 384) {
  SampledClip clip;
  clip.source_indices = temporal_sample(video);
  clip.frames.reserve(clip.source_indices.size());
  for (int64_t idx : clip.source_indices) {
    Tensor rgb = to_rgb(video.frames[static_cast<std::size_t>(idx)], video);
    if (rgb.dim(1) == out_h && rgb.dim(2) == out_w)
      clip.frames.push_back(std::move(rgb));
    else
      clip.frames.push_back(bicubic_resize(rgb, out_h, out_w));
  }
  return clip;
}

}  // namespace vqa
