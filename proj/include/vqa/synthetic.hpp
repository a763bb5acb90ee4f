#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vqa/dataset.hpp"
#include "vqa/errors.hpp"
#include "vqa/rng.hpp"
#include "vqa/videoio.hpp"

namespace vqa {

struct SyntheticOptions {
  int64_t n_refs = 5;
  int64_t levels = 4;
  int64_t width = 64;
  int64_t height = 64;
  int64_t frames = 24;
  Rational fps{8, 1};
  uint64_t seed = 1;
  std::string dataset_id = "synthetic";
  double split_ratio = 0.8;
  bool references_in_manifest = true;  // false -> emit a no-reference manifest
};

enum class Distortion { kBlur, kNoise };

inline const char* distortion_name(Distortion d) {
  return d == Distortion::kBlur ? "blur" : "noise";
}

namespace detail {

struct Wave {
  double amp, fx, fy, phase, vel;
};

// Smoothly varying textured content: gradient + moving sinusoids + a
// separable grating whose fine structure blur destroys.
struct RefField {
  double gx, gy;
  std::vector<Wave> waves;
  Wave grating_x, grating_y;
  Wave cb, cr;

  double luma(double x, double y, double t, double w, double h) const {
    double v = 0.5 + gx * (x / w - 0.5) + gy * (y / h - 0.5);
    for (const Wave& s : waves)
      v += s.amp * std::sin(s.fx * x + s.fy * y + s.phase + s.vel * t);
    v += grating_x.amp * std::sin(grating_x.fx * x + grating_x.phase +
                                  grating_x.vel * t) *
         std::sin(grating_y.fy * y + grating_y.phase);
    return std::clamp(v, 0.05, 0.95);
  }

  double chroma_cb(double x, double y, double t) const {
    return 0.5 + cb.amp * std::sin(cb.fx * x + cb.fy * y + cb.phase + cb.vel * t);
  }
  double chroma_cr(double x, double y, double t) const {
    return 0.5 + cr.amp * std::sin(cr.fx * x + cr.fy * y + cr.phase + cr.vel * t);
  }
};

inline RefField make_ref_field(Rng& rng, double w) {
  auto freq = [&](double lo, double hi) {
    return 2.0 * 3.14159265358979323846 * rng.uniform(lo, hi) / w;
  };
  RefField f;
  f.gx = rng.uniform(-0.5, 0.5);
  f.gy = rng.uniform(-0.5, 0.5);
  for (int k = 0; k < 3; ++k)
    f.waves.push_back({rng.uniform(0.05, 0.18), freq(1.0, 6.0), freq(1.0, 6.0),
                       rng.uniform(0.0, 6.28), rng.uniform(-0.6, 0.6)});
  f.grating_x = {rng.uniform(0.06, 0.15), freq(6.0, 12.0), 0.0,
                 rng.uniform(0.0, 6.28), rng.uniform(-0.4, 0.4)};
  f.grating_y = {0.0, 0.0, freq(6.0, 12.0), rng.uniform(0.0, 6.28), 0.0};
  f.cb = {rng.uniform(0.05, 0.14), freq(0.5, 2.0), freq(0.5, 2.0),
          rng.uniform(0.0, 6.28), rng.uniform(-0.3, 0.3)};
  f.cr = {rng.uniform(0.05, 0.14), freq(0.5, 2.0), freq(0.5, 2.0),
          rng.uniform(0.0, 6.28), rng.uniform(-0.3, 0.3)};
  return f;
}

inline uint16_t quantize(double v01, double offset, double range) {
  const double code = offset + range * v01;
  const long q = std::lround(code);
  return static_cast<uint16_t>(std::clamp(q, 0L, 255L));
}

// Separable Gaussian with edge clamp, on one plane of 8-bit codes.
inline void blur_plane(std::vector<uint16_t>& plane, int64_t w, int64_t h,
                       double sigma) {
  if (sigma <= 0.0) return;
  const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int64_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(static_cast<double>(i * i)) /
                              (2.0 * sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& k : kernel) k /= sum;

  std::vector<double> a(plane.begin(), plane.end());
  std::vector<double> b(a.size());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t i = -radius; i <= radius; ++i) {
        const int64_t xi = std::clamp<int64_t>(x + i, 0, w - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               a[static_cast<std::size_t>(y * w + xi)];
      }
      b[static_cast<std::size_t>(y * w + x)] = acc;
    }
  for (int64_t x = 0; x < w; ++x)
    for (int64_t y = 0; y < h; ++y) {
      double acc = 0.0;
      for (int64_t i = -radius; i <= radius; ++i) {
        const int64_t yi = std::clamp<int64_t>(y + i, 0, h - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               b[static_cast<std::size_t>(yi * w + x)];
      }
      plane[static_cast<std::size_t>(y * w + x)] = static_cast<uint16_t>(
          std::clamp(std::lround(acc), 0L, 255L));
    }
}

inline void add_noise(std::vector<uint16_t>& plane, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  for (uint16_t& v : plane) {
    const double n = static_cast<double>(v) + rng.normal(0.0, sigma);
    v = static_cast<uint16_t>(std::clamp(std::lround(n), 0L, 255L));
  }
}

}  // namespace detail

// Deterministic reference clip: 8-bit 4:2:0 limited-range Y4M content.
inline FrameSequence synthesize_reference(const SyntheticOptions& opt,
                                          int64_t ref_index) {
  if (opt.width % 2 != 0 || opt.height % 2 != 0)
    throw DataError("synthetic clips need even dimensions for 4:2:0");
  Rng rng =
      Rng::substream(opt.seed, "ref/" + std::to_string(ref_index));
  detail::RefField field = detail::make_ref_field(rng, static_cast<double>(opt.width));

  FrameSequence seq;
  seq.width = opt.width;
  seq.height = opt.height;
  seq.frame_rate = opt.fps;
  seq.bit_depth = 8;
  seq.pixel_format = PixelFormat::kYuv420;
  seq.full_range = false;
  seq.transfer_tag = "bt709";
  const int64_t cw = opt.width / 2, ch = opt.height / 2;
  for (int64_t t = 0; t < opt.frames; ++t) {
    PlanarFrame fr;
    fr.planes[0].resize(static_cast<std::size_t>(opt.width * opt.height));
    fr.planes[1].resize(static_cast<std::size_t>(cw * ch));
    fr.planes[2].resize(static_cast<std::size_t>(cw * ch));
    const double td = static_cast<double>(t);
    for (int64_t y = 0; y < opt.height; ++y)
      for (int64_t x = 0; x < opt.width; ++x)
        fr.planes[0][static_cast<std::size_t>(y * opt.width + x)] =
            detail::quantize(field.luma(static_cast<double>(x),
                                        static_cast<double>(y), td,
                                        static_cast<double>(opt.width),
                                        static_cast<double>(opt.height)),
                             16.0, 219.0);
    for (int64_t y = 0; y < ch; ++y)
      for (int64_t x = 0; x < cw; ++x) {
        const double fx = static_cast<double>(2 * x), fy = static_cast<double>(2 * y);
        fr.planes[1][static_cast<std::size_t>(y * cw + x)] =
            detail::quantize(field.chroma_cb(fx, fy, td), 16.0, 224.0);
        fr.planes[2][static_cast<std::size_t>(y * cw + x)] =
            detail::quantize(field.chroma_cr(fx, fy, td), 16.0, 224.0);
      }
    seq.frames.push_back(std::move(fr));
  }
  return seq;
}

// level 0 returns a bit-exact copy; severity grows linearly up to `levels`.
inline FrameSequence distort(const FrameSequence& ref, Distortion type,
                             int64_t level, int64_t levels, Rng& rng) {
  if (level < 0 || levels < 1 || level > levels)
    throw DataError("distortion level out of range");
  FrameSequence out = ref;
  if (level == 0) return out;
  const double severity = static_cast<double>(level) / static_cast<double>(levels);
  const int64_t cw = ref.plane_width(1), chh = ref.plane_height(1);
  for (PlanarFrame& fr : out.frames) {
    if (type == Distortion::kBlur) {
      const double sigma = 2.0 * severity;
      detail::blur_plane(fr.planes[0], ref.width, ref.height, sigma);
      detail::blur_plane(fr.planes[1], cw, chh, sigma);
      detail::blur_plane(fr.planes[2], cw, chh, sigma);
    } else {
      const double sigma = 0.12 * severity * 255.0;
      detail::add_noise(fr.planes[0], sigma, rng);
      detail::add_noise(fr.planes[1], sigma * 0.5, rng);
      detail::add_noise(fr.planes[2], sigma * 0.5, rng);
    }
  }
  return out;
}

// Writes reference and distorted Y4M clips plus manifest.csv into out_dir.
// MOS = 5 - 4*severity with small seeded jitter (below half the inter-level
// gap, so within-reference rank order always follows severity).
inline DatasetManifest generate_synthetic(const std::filesystem::path& out_dir,
                                          const SyntheticOptions& opt) {
  if (opt.n_refs < 2) throw DataError("generate_synthetic: need n_refs >= 2");
  if (opt.levels < 2) throw DataError("generate_synthetic: need levels >= 2");
  std::filesystem::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.dataset_id = opt.dataset_id;
  manifest.base_dir = out_dir;

  const double jitter_amp = 0.8 / static_cast<double>(opt.levels);
  for (int64_t r = 0; r < opt.n_refs; ++r) {
    FrameSequence ref = synthesize_reference(opt, r);
    const std::string ref_name = "ref" + std::to_string(r) + ".y4m";
    encode_y4m(out_dir / ref_name, ref);
    for (Distortion type : {Distortion::kBlur, Distortion::kNoise}) {
      for (int64_t level = 1; level <= opt.levels; ++level) {
        const std::string clip_name = "dist_r" + std::to_string(r) + "_" +
                                      distortion_name(type) + "_l" +
                                      std::to_string(level) + ".y4m";
        Rng clip_rng = Rng::substream(opt.seed, "noise/" + clip_name);
        FrameSequence dist = distort(ref, type, level, opt.levels, clip_rng);
        encode_y4m(out_dir / clip_name, dist);

        Rng jitter_rng = Rng::substream(opt.seed, "jitter/" + clip_name);
        const double severity =
            static_cast<double>(level) / static_cast<double>(opt.levels);
        ManifestRecord rec;
        rec.dataset_id = opt.dataset_id;
        rec.video = clip_name;
        rec.reference = ref_name;
        rec.mos = 5.0 - 4.0 * severity +
                  jitter_rng.uniform(-jitter_amp, jitter_amp);
        rec.split = "train";
        manifest.records.push_back(std::move(rec));
      }
    }
  }

  assign_splits_by_reference(manifest.records, opt.split_ratio, opt.seed);
  if (!opt.references_in_manifest)
    for (ManifestRecord& rec : manifest.records) rec.reference.clear();
  save_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

}  // namespace vqa
