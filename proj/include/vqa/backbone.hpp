#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqa/autodiff.hpp"
#include "vqa/container.hpp"
#include "vqa/errors.hpp"
#include "vqa/optim.hpp"
#include "vqa/rng.hpp"
#include "vqa/tensor.hpp"

namespace vqa {

struct BackboneConfig {
  int64_t stage_count = 4;
  std::vector<int64_t> channels_per_stage{16, 32, 64, 128};
  std::vector<int64_t> stride_per_stage{2, 2, 2, 2};
  int64_t kernel_size = 3;
  int64_t in_channels = 3;

  void validate() const {
    if (stage_count < 1) throw DataError("backbone: stage_count must be >= 1");
    if (static_cast<int64_t>(channels_per_stage.size()) != stage_count ||
        static_cast<int64_t>(stride_per_stage.size()) != stage_count)
      throw DataError("backbone: per-stage list lengths must equal stage_count");
    for (int64_t c : channels_per_stage)
      if (c < 1) throw DataError("backbone: channels must be >= 1");
    for (int64_t s : stride_per_stage)
      if (s < 1) throw DataError("backbone: strides must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw DataError("backbone: kernel_size must be odd");
    if (in_channels < 1) throw DataError("backbone: in_channels must be >= 1");
  }

  int64_t cumulative_stride() const {
    int64_t p = 1;
    for (int64_t s : stride_per_stage) p *= s;
    return p;
  }

  int64_t total_channels() const {
    int64_t t = 0;
    for (int64_t c : channels_per_stage) t += c;
    return t;
  }

  int64_t last_channels() const { return channels_per_stage.back(); }

  nlohmann::json to_json() const {
    return {{"stage_count", stage_count},
            {"channels_per_stage", channels_per_stage},
            {"stride_per_stage", stride_per_stage},
            {"kernel_size", kernel_size},
            {"in_channels", in_channels}};
  }

  static BackboneConfig from_json(const nlohmann::json& j) {
    BackboneConfig c;
    try {
      c.stage_count = j.at("stage_count").get<int64_t>();
      c.channels_per_stage = j.at("channels_per_stage").get<std::vector<int64_t>>();
      c.stride_per_stage = j.at("stride_per_stage").get<std::vector<int64_t>>();
      c.kernel_size = j.at("kernel_size").get<int64_t>();
      if (j.contains("in_channels")) c.in_channels = j.at("in_channels").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("invalid backbone config: ") + e.what());
    }
    c.validate();
    return c;
  }

  bool operator==(const BackboneConfig&) const = default;
};

// Per-stage feature maps for one frame, spatial size non-increasing with depth.
struct FeaturePyramid {
  std::vector<Tensor> stages;

  int64_t stage_count() const { return static_cast<int64_t>(stages.size()); }

  void validate() const {
    if (stages.empty()) throw DataError("pyramid has no stages");
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const Tensor& t = stages[s];
      if (t.rank() != 3)
        throw DataError("pyramid stage " + std::to_string(s) + " is not CxHxW");
      int64_t bad = t.first_nonfinite();
      if (bad >= 0)
        throw DataError("pyramid stage " + std::to_string(s) +
                        " has non-finite value at flat index " + std::to_string(bad));
      if (s > 0 && (t.dim(1) > stages[s - 1].dim(1) || t.dim(2) > stages[s - 1].dim(2)))
        throw DataError("pyramid stage " + std::to_string(s) +
                        " is larger than its predecessor");
    }
  }
};

inline std::string stage_param_name(const std::string& prefix, int64_t stage,
                                    const char* leaf) {
  return prefix + ".stage" + std::to_string(stage) + "." + leaf;
}

// Kaiming-uniform conv weights (bound sqrt(6 / fan_in)), zero biases. Draw
// order is fixed: stages in order, weights row-major, so a given seed always
// produces the same parameters.
inline ParamSet init_backbone(const BackboneConfig& cfg, Rng& rng,
                              const std::string& prefix = "backbone") {
  cfg.validate();
  ParamSet params;
  int64_t cin = cfg.in_channels;
  for (int64_t s = 0; s < cfg.stage_count; ++s) {
    const int64_t cout = cfg.channels_per_stage[static_cast<std::size_t>(s)];
    const int64_t k = cfg.kernel_size;
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * k * k));
    Tensor w({cout, cin, k, k});
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    params.emplace(stage_param_name(prefix, s, "weight"), std::move(w));
    params.emplace(stage_param_name(prefix, s, "bias"), Tensor::zeros({cout}));
    cin = cout;
  }
  return params;
}

inline void check_frame_compatible(const BackboneConfig& cfg, int64_t c, int64_t h,
                                   int64_t w) {
  if (c != cfg.in_channels)
    throw DataError("backbone expects " + std::to_string(cfg.in_channels) +
                    " input channels, got " + std::to_string(c));
  const int64_t cum = cfg.cumulative_stride();
  if (h % cum != 0 || w % cum != 0)
    throw DataError("frame " + std::to_string(h) + "x" + std::to_string(w) +
                    " not divisible by cumulative stride " + std::to_string(cum));
}

// Eager pyramid extraction; shares the conv kernel with the graph path so
// both produce bit-identical maps.
inline FeaturePyramid extract(const Tensor& frame, const ParamSet& params,
                              const BackboneConfig& cfg,
                              const std::string& prefix = "backbone") {
  cfg.validate();
  if (frame.rank() != 3) throw DataError("extract: frame must be CxHxW");
  check_frame_compatible(cfg, frame.dim(0), frame.dim(1), frame.dim(2));

  FeaturePyramid pyr;
  const Tensor* x = &frame;
  for (int64_t s = 0; s < cfg.stage_count; ++s) {
    const auto wi = params.find(stage_param_name(prefix, s, "weight"));
    const auto bi = params.find(stage_param_name(prefix, s, "bias"));
    if (wi == params.end() || bi == params.end())
      throw DataError("missing parameters for backbone stage " + std::to_string(s));
    const Tensor& w = wi->second;
    const int64_t stride = cfg.stride_per_stage[static_cast<std::size_t>(s)];
    const int64_t pad = (cfg.kernel_size - 1) / 2;
    const int64_t oh = (x->dim(1) + 2 * pad - cfg.kernel_size) / stride + 1;
    const int64_t ow = (x->dim(2) + 2 * pad - cfg.kernel_size) / stride + 1;
    Tensor out({w.dim(0), oh, ow});
    detail::conv2d_kernel(*x, w, bi->second, stride, pad, out);
    for (int64_t i = 0; i < out.numel(); ++i)
      out[i] = out[i] > 0.0 ? out[i] : 0.0;
    pyr.stages.push_back(std::move(out));
    x = &pyr.stages.back();
  }
  return pyr;
}

// Graph-side backbone: parameter nodes are declared once and can feed several
// input branches (reference and distorted share weights).
struct BackboneGraph {
  BackboneConfig config;
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;
};

inline BackboneGraph declare_backbone(Graph& g, const ParamSet& params,
                                      const BackboneConfig& cfg,
                                      const std::string& prefix = "backbone") {
  cfg.validate();
  BackboneGraph bg;
  bg.config = cfg;
  for (int64_t s = 0; s < cfg.stage_count; ++s) {
    const std::string wn = stage_param_name(prefix, s, "weight");
    const std::string bn = stage_param_name(prefix, s, "bias");
    const auto wi = params.find(wn);
    const auto bi = params.find(bn);
    if (wi == params.end() || bi == params.end())
      throw DataError("missing parameters for backbone stage " + std::to_string(s));
    bg.weights.push_back(g.parameter(wn, wi->second));
    bg.biases.push_back(g.parameter(bn, bi->second));
  }
  return bg;
}

// Applies the conv stack to node `x`, returning the post-relu node per stage.
inline std::vector<NodeId> apply_backbone(Graph& g, const BackboneGraph& bg,
                                          NodeId x) {
  const BackboneConfig& cfg = bg.config;
  check_frame_compatible(cfg, g.shape(x)[0], g.shape(x)[1], g.shape(x)[2]);
  std::vector<NodeId> stage_nodes;
  NodeId cur = x;
  for (int64_t s = 0; s < cfg.stage_count; ++s) {
    const int64_t stride = cfg.stride_per_stage[static_cast<std::size_t>(s)];
    const int64_t pad = (cfg.kernel_size - 1) / 2;
    NodeId conv = ops::conv2d(g, cur, bg.weights[static_cast<std::size_t>(s)],
                              bg.biases[static_cast<std::size_t>(s)], stride, pad,
                              "stage" + std::to_string(s));
    cur = ops::relu(g, conv);
    stage_nodes.push_back(cur);
  }
  return stage_nodes;
}

// ---------------------------------------------------------------------------
// Pyramid files: standard container with meta {"kind":"pyramid",...} and one
// tensor per stage named stage0, stage1, ...

inline void export_pyramid(const std::filesystem::path& path,
                           const FeaturePyramid& pyr) {
  pyr.validate();
  container::File file;
  nlohmann::json shapes = nlohmann::json::array();
  for (const Tensor& t : pyr.stages) shapes.push_back(t.shape());
  file.meta = {{"kind", "pyramid"},
               {"stage_count", pyr.stage_count()},
               {"stage_shapes", shapes}};
  for (std::size_t s = 0; s < pyr.stages.size(); ++s)
    file.tensors.emplace_back("stage" + std::to_string(s), pyr.stages[s]);
  container::save(path, file);
}

inline FeaturePyramid import_pyramid(const std::filesystem::path& path) {
  container::File file = container::load(path);
  int64_t declared = 0;
  try {
    if (file.meta.at("kind").get<std::string>() != "pyramid")
      throw DataError("'" + path.string() + "' is not a pyramid file");
    declared = file.meta.at("stage_count").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("pyramid meta malformed: ") + e.what(), 8);
  }
  if (declared != static_cast<int64_t>(file.tensors.size()))
    throw ParseError("pyramid declares " + std::to_string(declared) +
                         " stages but file contains " +
                         std::to_string(file.tensors.size()) +
                         " (missing stage" +
                         std::to_string(file.tensors.size()) + ")",
                     8);
  FeaturePyramid pyr;
  for (int64_t s = 0; s < declared; ++s) {
    const std::string want = "stage" + std::to_string(s);
    if (file.tensors[static_cast<std::size_t>(s)].first != want)
      throw ParseError("pyramid tensor " + std::to_string(s) + " named '" +
                           file.tensors[static_cast<std::size_t>(s)].first +
                           "', expected '" + want + "'",
                       8);
    pyr.stages.push_back(std::move(file.tensors[static_cast<std::size_t>(s)].second));
  }
  pyr.validate();
  return pyr;
}

}  // namespace vqa
