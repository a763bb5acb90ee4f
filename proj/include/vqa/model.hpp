#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqa/autodiff.hpp"
#include "vqa/backbone.hpp"
#include "vqa/container.hpp"
#include "vqa/errors.hpp"
#include "vqa/features.hpp"
#include "vqa/optim.hpp"
#include "vqa/rng.hpp"
#include "vqa/tensor.hpp"
#include "vqa/videoio.hpp"

namespace vqa {

inline constexpr int64_t kHiddenUnits = 128;

inline std::string head_param_name(const std::string& prefix, int layer,
                                   const char* leaf) {
  return prefix + ".layer" + std::to_string(layer) + "." + leaf;
}

// Two-layer regression head. layer1 is Kaiming-uniform; layer2 starts tiny
// (uniform in ±1e-3) rather than exactly zero: early predictions are still
// nearly constant, but they carry enough spread for the correlation loss to
// be defined and emit a usable gradient from step one.
inline ParamSet init_head(int64_t in_dim, Rng& rng,
                          const std::string& prefix = "head",
                          int64_t hidden = kHiddenUnits) {
  if (in_dim < 1 || hidden < 1) throw DataError("init_head: bad dimensions");
  ParamSet params;
  const double bound1 = std::sqrt(6.0 / static_cast<double>(in_dim));
  Tensor w1({in_dim, hidden});
  for (int64_t i = 0; i < w1.numel(); ++i) w1[i] = rng.uniform(-bound1, bound1);
  params.emplace(head_param_name(prefix, 1, "weight"), std::move(w1));
  params.emplace(head_param_name(prefix, 1, "bias"), Tensor::zeros({hidden}));
  Tensor w2({hidden, 1});
  for (int64_t i = 0; i < w2.numel(); ++i) w2[i] = rng.uniform(-1e-3, 1e-3);
  params.emplace(head_param_name(prefix, 2, "weight"), std::move(w2));
  params.emplace(head_param_name(prefix, 2, "bias"), Tensor::zeros({1}));
  return params;
}

inline const Tensor& head_param(const ParamSet& params, const std::string& prefix,
                                int layer, const char* leaf) {
  auto it = params.find(head_param_name(prefix, layer, leaf));
  if (it == params.end())
    throw DataError("missing head parameter '" +
                    head_param_name(prefix, layer, leaf) + "'");
  return it->second;
}

// affine -> relu -> affine, scalar out. Shares the affine kernel with the
// graph path, so eager and differentiable scores match bitwise.
inline double regress(const Tensor& feature, const ParamSet& params,
                      const std::string& prefix = "head") {
  if (feature.rank() != 1) throw DataError("regress: feature must be rank 1");
  const Tensor& w1 = head_param(params, prefix, 1, "weight");
  const Tensor& b1 = head_param(params, prefix, 1, "bias");
  const Tensor& w2 = head_param(params, prefix, 2, "weight");
  const Tensor& b2 = head_param(params, prefix, 2, "bias");
  if (w1.dim(0) != feature.numel())
    throw DataError("regress: feature length " + std::to_string(feature.numel()) +
                    " does not match head input dim " + std::to_string(w1.dim(0)));
  Tensor hidden({w1.dim(1)});
  detail::affine_kernel(feature, w1, b1, hidden);
  for (int64_t i = 0; i < hidden.numel(); ++i)
    hidden[i] = hidden[i] > 0.0 ? hidden[i] : 0.0;
  Tensor out({1});
  detail::affine_kernel(hidden, w2, b2, out);
  return out[0];
}

struct HeadGraph {
  NodeId w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

inline HeadGraph declare_head(Graph& g, const ParamSet& params,
                              const std::string& prefix = "head") {
  HeadGraph h;
  h.w1 = g.parameter(head_param_name(prefix, 1, "weight"),
                     head_param(params, prefix, 1, "weight"));
  h.b1 = g.parameter(head_param_name(prefix, 1, "bias"),
                     head_param(params, prefix, 1, "bias"));
  h.w2 = g.parameter(head_param_name(prefix, 2, "weight"),
                     head_param(params, prefix, 2, "weight"));
  h.b2 = g.parameter(head_param_name(prefix, 2, "bias"),
                     head_param(params, prefix, 2, "bias"));
  return h;
}

// Returns a [1] node holding the frame score.
inline NodeId apply_head(Graph& g, const HeadGraph& h, NodeId feature) {
  NodeId a1 = ops::affine(g, feature, h.w1, h.b1, "head.layer1");
  NodeId r = ops::relu(g, a1);
  return ops::affine(g, r, h.w2, h.b2, "head.layer2");
}

// ---------------------------------------------------------------------------
// Complete models: backbone + similarity constants + one regression head.
// FR and NR instances keep fully independent parameter sets.

struct Model {
  FeatureKind kind = FeatureKind::kFr;
  BackboneConfig backbone_config;
  SimilarityConfig similarity;
  ParamSet params;
  std::string head_prefix = "head";

  int64_t feature_length() const {
    return kind == FeatureKind::kFr ? fr_feature_length(backbone_config)
                                    : nr_feature_length(backbone_config);
  }

  void validate() const {
    backbone_config.validate();
    similarity.validate();
    const Tensor& w1 = head_param(params, head_prefix, 1, "weight");
    if (w1.dim(0) != feature_length())
      throw DataError("model head expects input dim " + std::to_string(w1.dim(0)) +
                      " but feature length is " + std::to_string(feature_length()));
  }
};

inline Model make_model(FeatureKind kind, const BackboneConfig& bcfg,
                        const SimilarityConfig& scfg, uint64_t seed) {
  Model m;
  m.kind = kind;
  m.backbone_config = bcfg;
  m.similarity = scfg;
  Rng brng = Rng::substream(seed, "backbone");
  m.params = init_backbone(bcfg, brng);
  const int64_t in_dim =
      kind == FeatureKind::kFr ? fr_feature_length(bcfg) : nr_feature_length(bcfg);
  Rng hrng = Rng::substream(seed, "head");
  ParamSet head = init_head(in_dim, hrng);
  m.params.insert(head.begin(), head.end());
  return m;
}

inline double frame_score_fr(const Model& m, const Tensor& ref_frame,
                             const Tensor& dist_frame) {
  FeaturePyramid rp = extract(ref_frame, m.params, m.backbone_config);
  FeaturePyramid dp = extract(dist_frame, m.params, m.backbone_config);
  QualityFeatureVector f = fr_feature(rp, dp, m.similarity);
  return regress(f.values, m.params, m.head_prefix);
}

inline double frame_score_nr(const Model& m, const Tensor& frame) {
  FeaturePyramid p = extract(frame, m.params, m.backbone_config);
  QualityFeatureVector f = nr_feature(p);
  return regress(f.values, m.params, m.head_prefix);
}

struct VideoScore {
  std::vector<double> frame_scores;
  double video_score = 0.0;
};

inline VideoScore finalize_score(std::vector<double> frame_scores) {
  if (frame_scores.empty()) throw DataError("no frames to score");
  double sum = 0.0;
  for (double s : frame_scores) sum += s;
  VideoScore vs;
  vs.video_score = sum / static_cast<double>(frame_scores.size());
  vs.frame_scores = std::move(frame_scores);
  return vs;
}

inline VideoScore score_video_fr(const Model& m, const SampledClip& ref,
                                 const SampledClip& dist) {
  if (m.kind != FeatureKind::kFr) throw DataError("model is not full-reference");
  if (ref.frame_count() != dist.frame_count())
    throw DataError("reference has " + std::to_string(ref.frame_count()) +
                    " sampled frames but distorted has " +
                    std::to_string(dist.frame_count()));
  std::vector<double> scores;
  scores.reserve(dist.frames.size());
  for (std::size_t i = 0; i < dist.frames.size(); ++i)
    scores.push_back(frame_score_fr(m, ref.frames[i], dist.frames[i]));
  return finalize_score(std::move(scores));
}

inline VideoScore score_video_nr(const Model& m, const SampledClip& dist) {
  if (m.kind != FeatureKind::kNr) throw DataError("model is not no-reference");
  std::vector<double> scores;
  scores.reserve(dist.frames.size());
  for (const Tensor& f : dist.frames) scores.push_back(frame_score_nr(m, f));
  return finalize_score(std::move(scores));
}

// ---------------------------------------------------------------------------
// Model checkpoints: the standard container with config in the manifest meta
// and every parameter tensor in map order.

inline void save_model(const std::filesystem::path& path, const Model& m) {
  m.validate();
  container::File file;
  file.meta = {{"kind", "model"},
               {"model_kind", m.kind == FeatureKind::kFr ? "fr" : "nr"},
               {"head_prefix", m.head_prefix},
               {"backbone", m.backbone_config.to_json()},
               {"similarity", m.similarity.to_json()}};
  for (const auto& [name, t] : m.params) file.tensors.emplace_back(name, t);
  container::save(path, file);
}

inline Model load_model(const std::filesystem::path& path) {
  container::File file = container::load(path, /*require_finite=*/true);
  Model m;
  try {
    if (file.meta.at("kind").get<std::string>() != "model")
      throw DataError("'" + path.string() + "' is not a model checkpoint");
    const std::string mk = file.meta.at("model_kind").get<std::string>();
    if (mk == "fr") m.kind = FeatureKind::kFr;
    else if (mk == "nr") m.kind = FeatureKind::kNr;
    else throw DataError("unknown model_kind '" + mk + "'");
    m.head_prefix = file.meta.at("head_prefix").get<std::string>();
    m.backbone_config = BackboneConfig::from_json(file.meta.at("backbone"));
    m.similarity = SimilarityConfig::from_json(file.meta.at("similarity"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model manifest malformed: ") + e.what(), 8);
  }
  for (auto& [name, t] : file.tensors) m.params.emplace(name, std::move(t));
  m.validate();
  return m;
}

}  // namespace vqa
