#pragma once

#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqa/autodiff.hpp"
#include "vqa/backbone.hpp"
#include "vqa/errors.hpp"
#include "vqa/tensor.hpp"

namespace vqa {

struct SimilarityConfig {
  double c1 = 1e-6;
  double c2 = 1e-6;

  void validate() const {
    if (!(c1 > 0.0) || !(c2 > 0.0))
      throw DataError("similarity constants must be positive");
  }

  nlohmann::json to_json() const { return {{"c1", c1}, {"c2", c2}}; }

  static SimilarityConfig from_json(const nlohmann::json& j) {
    SimilarityConfig c;
    try {
      c.c1 = j.at("c1").get<double>();
      c.c2 = j.at("c2").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("invalid similarity config: ") + e.what());
    }
    c.validate();
    return c;
  }

  bool operator==(const SimilarityConfig&) const = default;
};

enum class FeatureKind { kFr, kNr };
enum class FeatureType { kTexture, kStructure, kPool };

struct FeatureLayoutEntry {
  int64_t stage = 0;
  FeatureType type = FeatureType::kTexture;
  int64_t channel = 0;

  std::string label() const {
    const char* t = type == FeatureType::kTexture ? "texture"
                    : type == FeatureType::kStructure ? "structure"
                                                      : "pool";
    return "stage" + std::to_string(stage) + "_" + t + "_ch" +
           std::to_string(channel);
  }
};

struct QualityFeatureVector {
  Tensor values;  // rank-1
  FeatureKind kind = FeatureKind::kFr;
  std::vector<FeatureLayoutEntry> layout;

  int64_t length() const { return values.numel(); }
};

inline int64_t fr_feature_length(const BackboneConfig& cfg) {
  return 2 * cfg.total_channels();
}

inline int64_t nr_feature_length(const BackboneConfig& cfg) {
  return cfg.last_channels();
}

// ---------------------------------------------------------------------------
// Per-channel population statistics over the spatial dimensions.

struct ChannelStats {
  Tensor mean;
  Tensor variance;
};

inline ChannelStats channel_stats(const Tensor& map) {
  if (map.rank() != 3) throw DataError("channel_stats: map must be CxHxW");
  if (map.dim(1) * map.dim(2) < 1)
    throw DataError("channel_stats: empty spatial extent");
  ChannelStats st{Tensor({map.dim(0)}), Tensor({map.dim(0)})};
  detail::channel_mean_kernel(map, st.mean);
  detail::channel_var_kernel(map, st.mean, st.variance);
  return st;
}

struct PairedChannelStats {
  ChannelStats ref;
  ChannelStats dist;
  Tensor covariance;
};

inline PairedChannelStats channel_stats(const Tensor& ref, const Tensor& dist) {
  if (!ref.same_shape(dist))
    throw DataError("channel_stats: paired maps differ in shape, " +
                    shape_str(ref.shape()) + " vs " + shape_str(dist.shape()));
  PairedChannelStats st;
  st.ref = channel_stats(ref);
  st.dist = channel_stats(dist);
  st.covariance = Tensor({ref.dim(0)});
  detail::channel_cov_kernel(ref, dist, st.ref.mean, st.dist.mean, st.covariance);
  return st;
}

// ---------------------------------------------------------------------------
// Similarity terms. The arithmetic mirrors the graph ops step for step
// (product, double, add constant; squares, sum, add constant) so the eager
// and differentiable paths agree bit for bit.

inline Tensor texture_similarity(const Tensor& mean_ref, const Tensor& mean_dist,
                                 double c1) {
  if (!mean_ref.same_shape(mean_dist))
    throw DataError("texture_similarity: channel count mismatch");
  Tensor out(mean_ref.shape());
  for (int64_t c = 0; c < out.numel(); ++c) {
    const double mr = mean_ref[c], md = mean_dist[c];
    out[c] = ((mr * md) * 2.0 + c1) / (((mr * mr) + (md * md)) + c1);
  }
  return out;
}

inline Tensor structure_similarity(const Tensor& var_ref, const Tensor& var_dist,
                                   const Tensor& covariance, double c2) {
  if (!var_ref.same_shape(var_dist) || !var_ref.same_shape(covariance))
    throw DataError("structure_similarity: channel count mismatch");
  Tensor out(var_ref.shape());
  for (int64_t c = 0; c < out.numel(); ++c)
    out[c] = (covariance[c] * 2.0 + c2) /
             ((var_ref[c] + var_dist[c]) + c2);
  return out;
}

// ---------------------------------------------------------------------------
// Full feature vectors (eager).

inline void check_pyramids_matched(const FeaturePyramid& ref,
                                   const FeaturePyramid& dist) {
  if (ref.stage_count() != dist.stage_count())
    throw DataError("pyramids have different stage counts: " +
                    std::to_string(ref.stage_count()) + " vs " +
                    std::to_string(dist.stage_count()));
  for (int64_t s = 0; s < ref.stage_count(); ++s)
    if (!ref.stages[static_cast<std::size_t>(s)].same_shape(
            dist.stages[static_cast<std::size_t>(s)]))
      throw DataError(
          "pyramid stage " + std::to_string(s) + " shape mismatch: " +
          shape_str(ref.stages[static_cast<std::size_t>(s)].shape()) + " vs " +
          shape_str(dist.stages[static_cast<std::size_t>(s)].shape()));
}

// Concatenation is stage-major; within a stage all texture terms precede all
// structure terms, each ordered by channel.
inline QualityFeatureVector fr_feature(const FeaturePyramid& ref,
                                       const FeaturePyramid& dist,
                                       const SimilarityConfig& cfg) {
  cfg.validate();
  if (ref.stage_count() == 0) throw DataError("fr_feature: empty pyramid");
  check_pyramids_matched(ref, dist);

  QualityFeatureVector out;
  out.kind = FeatureKind::kFr;
  std::vector<double> values;
  for (int64_t s = 0; s < ref.stage_count(); ++s) {
    const Tensor& rs = ref.stages[static_cast<std::size_t>(s)];
    const Tensor& ds = dist.stages[static_cast<std::size_t>(s)];
    PairedChannelStats st = channel_stats(rs, ds);
    Tensor ft = texture_similarity(st.ref.mean, st.dist.mean, cfg.c1);
    Tensor fs =
        structure_similarity(st.ref.variance, st.dist.variance, st.covariance,
                             cfg.c2);
    for (int64_t c = 0; c < ft.numel(); ++c) {
      values.push_back(ft[c]);
      out.layout.push_back({s, FeatureType::kTexture, c});
    }
    for (int64_t c = 0; c < fs.numel(); ++c) {
      values.push_back(fs[c]);
      out.layout.push_back({s, FeatureType::kStructure, c});
    }
  }
  out.values = Tensor::vector(std::move(values));
  return out;
}

// Global average pooling of the final stage only.
inline QualityFeatureVector nr_feature(const FeaturePyramid& pyr) {
  if (pyr.stage_count() == 0) throw DataError("nr_feature: empty pyramid");
  const int64_t last = pyr.stage_count() - 1;
  const Tensor& map = pyr.stages[static_cast<std::size_t>(last)];
  if (map.rank() != 3) throw DataError("nr_feature: final stage must be CxHxW");

  QualityFeatureVector out;
  out.kind = FeatureKind::kNr;
  out.values = Tensor({map.dim(0)});
  detail::channel_mean_kernel(map, out.values);
  for (int64_t c = 0; c < map.dim(0); ++c)
    out.layout.push_back({last, FeatureType::kPool, c});
  return out;
}

// ---------------------------------------------------------------------------
// Graph-side feature construction for training.

inline NodeId fr_feature_graph(Graph& g, const std::vector<NodeId>& ref_stages,
                               const std::vector<NodeId>& dist_stages,
                               const SimilarityConfig& cfg) {
  cfg.validate();
  if (ref_stages.empty() || ref_stages.size() != dist_stages.size())
    throw DataError("fr_feature_graph: stage lists empty or mismatched");
  std::vector<NodeId> parts;
  for (std::size_t s = 0; s < ref_stages.size(); ++s) {
    const NodeId r = ref_stages[s], d = dist_stages[s];
    const std::string tag = "s" + std::to_string(s);
    NodeId mr = ops::channel_mean(g, r, tag + ".mean_r");
    NodeId md = ops::channel_mean(g, d, tag + ".mean_d");
    NodeId ft_num = ops::add_const(g, ops::scale(g, ops::mul(g, mr, md), 2.0),
                                   cfg.c1, tag + ".ft_num");
    NodeId ft_den = ops::add_const(
        g, ops::add(g, ops::mul(g, mr, mr), ops::mul(g, md, md)), cfg.c1,
        tag + ".ft_den");
    parts.push_back(ops::div(g, ft_num, ft_den, tag + ".ft"));

    NodeId vr = ops::channel_var(g, r, tag + ".var_r");
    NodeId vd = ops::channel_var(g, d, tag + ".var_d");
    NodeId cov = ops::channel_cov(g, r, d, tag + ".cov");
    NodeId fs_num =
        ops::add_const(g, ops::scale(g, cov, 2.0), cfg.c2, tag + ".fs_num");
    NodeId fs_den =
        ops::add_const(g, ops::add(g, vr, vd), cfg.c2, tag + ".fs_den");
    parts.push_back(ops::div(g, fs_num, fs_den, tag + ".fs"));
  }
  return ops::concat(g, parts, "fr_feature");
}

inline NodeId nr_feature_graph(Graph& g, NodeId last_stage) {
  return ops::channel_mean(g, last_stage, "nr_feature");
}

// ---------------------------------------------------------------------------
// CSV export: one row per frame, header taken from the layout.

inline void write_features_csv(std::ostream& os,
                               const std::vector<QualityFeatureVector>& rows) {
  if (rows.empty()) throw DataError("no feature rows to write");
  os << "frame";
  for (const FeatureLayoutEntry& e : rows[0].layout) os << "," << e.label();
  os << "\n";
  char buf[40];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].length() != rows[0].length())
      throw DataError("feature rows have inconsistent lengths");
    os << i;
    for (int64_t c = 0; c < rows[i].length(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", rows[i].values[c]);
      os << "," << buf;
    }
    os << "\n";
  }
}

}  // namespace vqa
