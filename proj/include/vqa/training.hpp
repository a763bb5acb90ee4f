#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "vqa/autodiff.hpp"
#include "vqa/backbone.hpp"
#include "vqa/container.hpp"
#include "vqa/dataset.hpp"
#include "vqa/errors.hpp"
#include "vqa/features.hpp"
#include "vqa/model.hpp"
#include "vqa/optim.hpp"
#include "vqa/rng.hpp"
#include "vqa/tensor.hpp"
#include "vqa/videoio.hpp"

namespace vqa {

struct TrainConfig {
  double learning_rate = 1e-4;
  int64_t batch_size = 6;
  int64_t epochs = 30;
  uint64_t seed = 1;
  int64_t pretrain_epochs = 10;
  int64_t finetune_epochs = 30;
  int64_t e_min = 10;
  int64_t loops = 3;
  int64_t imdt_finetune_epochs = 30;
  bool freeze_shared_in_finetune = false;

  static TrainConfig fr_defaults() { return TrainConfig{}; }

  static TrainConfig nr_defaults() {
    TrainConfig c;
    c.learning_rate = 1e-5;
    return c;
  }

  void validate() const {
    if (!(learning_rate > 0.0))
      throw DataError("learning_rate must be positive");
    if (batch_size < 2)
      throw DataError("batch_size must be >= 2 (the correlation loss needs at "
                      "least 2 samples)");
    if (epochs < 0 || pretrain_epochs < 0 || finetune_epochs < 0 ||
        imdt_finetune_epochs < 0)
      throw DataError("epoch counts must be non-negative");
    if (e_min < 1 || loops < 1)
      throw DataError("e_min and loops must be >= 1");
  }
};

// Epoch allocation across datasets of sizes N_i: each gets
// max(floor(N_max / N_i), E_min) epochs per loop.
struct IMDTSchedule {
  std::vector<int64_t> dataset_sizes;
  int64_t e_min = 10;
  int64_t loops = 3;
  std::vector<int64_t> epochs_per_dataset;

  static IMDTSchedule build(std::vector<int64_t> sizes, int64_t e_min,
                            int64_t loops) {
    if (sizes.empty()) throw DataError("schedule needs at least one dataset");
    if (e_min < 1 || loops < 1)
      throw DataError("schedule needs e_min >= 1 and loops >= 1");
    for (int64_t n : sizes)
      if (n < 1) throw DataError("schedule: dataset sizes must be >= 1");
    IMDTSchedule s;
    s.dataset_sizes = std::move(sizes);
    s.e_min = e_min;
    s.loops = loops;
    const int64_t n_max =
        *std::max_element(s.dataset_sizes.begin(), s.dataset_sizes.end());
    for (int64_t n : s.dataset_sizes)
      s.epochs_per_dataset.push_back(std::max(n_max / n, e_min));
    return s;
  }

  int64_t total_loop_epochs() const {
    int64_t t = 0;
    for (int64_t e : epochs_per_dataset) t += e;
    return t * loops;
  }
};

// ---------------------------------------------------------------------------
// PLCC loss: (1 - pearson(pred, labels)) / 2. Constant labels are a caller
// error; constant predictions yield a flagged 0.5 with no gradient.

struct PlccLossValue {
  double loss = 0.5;
  bool degenerate = false;
};

inline PlccLossValue plcc_loss(const std::vector<double>& pred,
                               const std::vector<double>& labels) {
  if (pred.size() != labels.size())
    throw DataError("plcc_loss: length mismatch");
  const int64_t n = static_cast<int64_t>(pred.size());
  if (n < 2) throw DataError("plcc_loss: need at least 2 samples");

  double my = 0.0;
  for (double y : labels) my += y;
  my /= static_cast<double>(n);
  double syy = 0.0;
  for (double y : labels) syy += (y - my) * (y - my);
  if (syy == 0.0)
    throw DataError("plcc_loss: constant labels (degenerate batch)");

  double mp = 0.0;
  for (double p : pred) mp += p;
  mp /= static_cast<double>(n);
  double spp = 0.0;
  for (double p : pred) spp += (p - mp) * (p - mp);
  if (std::sqrt(spp / static_cast<double>(n)) < 1e-12) return {0.5, true};

  double spy = 0.0;
  for (int64_t i = 0; i < n; ++i) spy += (pred[i] - mp) * (labels[i] - my);
  const double r = spy / std::sqrt(spp * syy);
  return {(1.0 - r) / 2.0, false};
}

// Graph twin of plcc_loss for a [B] prediction node; label statistics are
// folded in as constants. Mirrors the eager arithmetic exactly.
inline NodeId plcc_loss_graph(Graph& g, NodeId pred,
                              const std::vector<double>& labels) {
  const int64_t n = static_cast<int64_t>(labels.size());
  if (n < 2) throw DataError("plcc_loss: need at least 2 samples");
  if (g.shape(pred) != Shape{n})
    throw DataError("plcc_loss: prediction node shape " +
                    shape_str(g.shape(pred)) + " does not match " +
                    std::to_string(n) + " labels");
  double my = 0.0;
  for (double y : labels) my += y;
  my /= static_cast<double>(n);
  std::vector<double> cy(labels.size());
  double syy = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cy[i] = labels[i] - my;
    syy += (labels[i] - my) * (labels[i] - my);
  }
  if (syy == 0.0)
    throw DataError("plcc_loss: constant labels (degenerate batch)");

  NodeId mp = ops::mean_all(g, pred, "loss.mean_pred");
  NodeId cp = ops::sub(g, pred, mp, "loss.centered");
  NodeId cyc = g.constant(Tensor::vector(std::move(cy)));
  NodeId spy = ops::dot(g, cp, cyc, "loss.cov");
  NodeId spp = ops::dot(g, cp, cp, "loss.var");
  NodeId den = ops::sqrt_op(g, ops::scale(g, spp, syy), "loss.den");
  NodeId r = ops::div(g, spy, den, "loss.plcc");
  return ops::scale(g, ops::add_const(g, ops::scale(g, r, -1.0), 1.0), 0.5,
                    "loss");
}

// ---------------------------------------------------------------------------
// Samples and batch graphs.

struct VideoSample {
  std::string id;
  SampledClip dist;
  std::shared_ptr<const SampledClip> ref;  // null for no-reference data
  double mos = 0.0;
};

// Decodes and preprocesses one split of a manifest; reference clips shared
// between distorted versions are decoded once.
inline std::vector<VideoSample> load_samples(const DatasetManifest& m,
                                             const std::string& which,
                                             int64_t out_h = 384,
                                             int64_t out_w = 384) {
  std::map<std::string, std::shared_ptr<const SampledClip>> ref_cache;
  std::vector<VideoSample> out;
  for (const ManifestRecord* r : m.split(which)) {
    VideoSample s;
    s.id = r->video;
    s.mos = r->mos;
    FrameSequence seq = decode(m.resolve(r->video));
    s.dist = preprocess(seq, out_h, out_w);
    if (!r->reference.empty()) {
      auto it = ref_cache.find(r->reference);
      if (it == ref_cache.end()) {
        FrameSequence rseq = decode(m.resolve(r->reference));
        it = ref_cache
                 .emplace(r->reference, std::make_shared<const SampledClip>(
                                            preprocess(rseq, out_h, out_w)))
                 .first;
      }
      s.ref = it->second;
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct BatchGraph {
  Graph graph;
  NodeId predictions = -1;  // [B]
  NodeId loss = -1;         // [1]
};

/// One differentiable graph per batch: every video's frames go through the
// shared backbone, per-frame scores are averaged per video, and the batch of
// video scores meets the labels in the correlation loss.
inline BatchGraph build_batch_graph(const ParamSet& params,
                                    const std::vector<const VideoSample*>& batch,
                                    FeatureKind kind, const BackboneConfig& bcfg,
                                    const SimilarityConfig& scfg,
                                    const std::string& head_prefix) {
  if (batch.size() < 2) throw DataError("batch needs at least 2 videos");
  BatchGraph bg;
  Graph& g = bg.graph;
  BackboneGraph bb = declare_backbone(g, params, bcfg);
  HeadGraph head = declare_head(g, params, head_prefix);

  std::vector<NodeId> video_scores;
  std::vector<double> labels;
  for (const VideoSample* vs : batch) {
    if (vs->dist.frame_count() == 0)
      throw DataError("video '" + vs->id + "' has no sampled frames");
    if (kind == FeatureKind::kFr) {
      if (!vs->ref)
        throw DataError("video '" + vs->id + "' lacks a reference clip");
      if (vs->ref->frame_count() != vs->dist.frame_count())
        throw DataError("video '" + vs->id + "': reference has " +
                        std::to_string(vs->ref->frame_count()) +
                        " frames, distorted has " +
                        std::to_string(vs->dist.frame_count()));
    }
    std::vector<NodeId> frame_scores;
    for (std::size_t f = 0; f < vs->dist.frames.size(); ++f) {
      NodeId feat;
      NodeId dnode = g.constant(vs->dist.frames[f]);
      std::vector<NodeId> dist_stages = apply_backbone(g, bb, dnode);
      if (kind == FeatureKind::kFr) {
        NodeId rnode = g.constant(vs->ref->frames[f]);
        std::vector<NodeId> ref_stages = apply_backbone(g, bb, rnode);
        feat = fr_feature_graph(g, ref_stages, dist_stages, scfg);
      } else {
        feat = nr_feature_graph(g, dist_stages.back());
      }
      frame_scores.push_back(apply_head(g, head, feat));
    }
    NodeId stacked = ops::stack_scalars(g, frame_scores, "frames:" + vs->id);
    video_scores.push_back(ops::mean_all(g, stacked, "score:" + vs->id));
    labels.push_back(vs->mos);
  }
  bg.predictions = ops::stack_scalars(g, video_scores, "predictions");
  bg.loss = plcc_loss_graph(g, bg.predictions, labels);
  g.set_output(bg.loss);
  return bg;
}

// ---------------------------------------------------------------------------
// Epoch driver.

struct BatchLog {
  double loss = 0.0;
  bool degenerate = false;
  int64_t size = 0;
};

struct EpochLog {
  std::string phase = "train";
  std::string dataset_id;
  int64_t loop = -1;  // IMDT loop index, -1 elsewhere
  int64_t epoch = 0;
  std::vector<BatchLog> batches;

  double mean_loss() const {
    if (batches.empty()) return 0.0;
    double s = 0.0;
    for (const BatchLog& b : batches) s += b.loss;
    return s / static_cast<double>(batches.size());
  }
};

using ParamFilter = std::function<bool(const std::string&)>;

// One pass over the samples: seeded shuffle, fixed-size batches (final ragged
// batch kept when >= 2 videos, dropped otherwise), Adam step per batch.
// `updatable` (when set) limits which parameters receive updates.
inline EpochLog train_epoch(ParamSet& params, AdamState& adam,
                            const std::vector<VideoSample>& samples,
                            FeatureKind kind, const BackboneConfig& bcfg,
                            const SimilarityConfig& scfg,
                            const std::string& head_prefix,
                            const TrainConfig& cfg, Rng& shuffle_rng,
                            const ParamFilter& updatable = {}) {
  cfg.validate();
  const int64_t n = static_cast<int64_t>(samples.size());
  if (n < cfg.batch_size)
    throw DataError("epoch needs at least batch_size=" +
                    std::to_string(cfg.batch_size) + " videos, got " +
                    std::to_string(n));

  std::vector<int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), int64_t{0});
  shuffle_rng.shuffle(order);

  EpochLog log;
  int64_t batch_index = 0;
  for (int64_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
    const int64_t end = std::min(n, start + cfg.batch_size);
    if (end - start < 2) break;
    std::vector<const VideoSample*> batch;
    std::vector<double> labels;
    std::string ids;
    for (int64_t i = start; i < end; ++i) {
      const VideoSample& vs = samples[static_cast<std::size_t>(order[i])];
      batch.push_back(&vs);
      labels.push_back(vs.mos);
      ids += (ids.empty() ? "" : ", ") + vs.id;
    }
    try {
      BatchGraph bg =
          build_batch_graph(params, batch, kind, bcfg, scfg, head_prefix);
      const Tensor& loss_value = bg.graph.forward();
      const Tensor& pred = bg.graph.value(bg.predictions);
      std::vector<double> pv(pred.data(), pred.data() + pred.numel());
      PlccLossValue eager = plcc_loss(pv, labels);
      if (eager.degenerate) {
        log.batches.push_back({0.5, true, end - start});
        continue;
      }
      const double loss = loss_value[0];
      if (!std::isfinite(loss))
        throw NumericError("loss is not finite");
      std::map<std::string, Tensor> grads = bg.graph.backward(Tensor::scalar(1.0));
      if (updatable)
        for (auto it = grads.begin(); it != grads.end();)
          it = updatable(it->first) ? std::next(it) : grads.erase(it);
      adam_step(adam, params, grads, cfg.learning_rate);
      log.batches.push_back({loss, false, end - start});
    } catch (const NumericError& e) {
      throw NumericError("batch " + std::to_string(batch_index) + " (videos " +
                         ids + "): " + e.what());
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// FR transfer learning: pretrain on the large manifest, then fine-tune on the
// target with a fresh optimizer. Parameters carry over between stages.

inline std::vector<EpochLog> transfer_train_fr(
    Model& model, const std::vector<VideoSample>& pretrain_samples,
    const std::vector<VideoSample>& finetune_samples, const TrainConfig& cfg,
    const std::function<void(const EpochLog&, const ParamSet&)>& on_epoch = {}) {
  cfg.validate();
  if (model.kind != FeatureKind::kFr)
    throw DataError("transfer_train_fr needs a full-reference model");
  std::vector<EpochLog> logs;

  AdamState adam;
  Rng pre_rng = Rng::substream(cfg.seed, "shuffle/pretrain");
  for (int64_t e = 0; e < cfg.pretrain_epochs; ++e) {
    EpochLog log = train_epoch(model.params, adam, pretrain_samples,
                               FeatureKind::kFr, model.backbone_config,
                               model.similarity, model.head_prefix, cfg, pre_rng);
    log.phase = "pretrain";
    log.epoch = e;
    if (on_epoch) on_epoch(log, model.params);
    logs.push_back(std::move(log));
  }

  AdamState fresh;
  Rng fin_rng = Rng::substream(cfg.seed, "shuffle/finetune");
  for (int64_t e = 0; e < cfg.finetune_epochs; ++e) {
    EpochLog log = train_epoch(model.params, fresh, finetune_samples,
                               FeatureKind::kFr, model.backbone_config,
                               model.similarity, model.head_prefix, cfg, fin_rng);
    log.phase = "finetune";
    log.epoch = e;
    if (on_epoch) on_epoch(log, model.params);
    logs.push_back(std::move(log));
  }
  return logs;
}

// ---------------------------------------------------------------------------
// Iterative mixed-dataset training for the NR model: one shared trunk, one
// regression head per dataset (prefix "head.<dataset-id>"), looped epoch
// allocation from the schedule, then fine-tuning on the target dataset's
// existing head.

struct ImdtDataset {
  std::string id;
  std::vector<VideoSample> train;
};

struct ImdtState {
  BackboneConfig backbone_config;
  SimilarityConfig similarity;
  ParamSet params;
  std::vector<std::string> dataset_ids;
  std::string target_id;
  IMDTSchedule schedule;
};

inline std::string imdt_head_prefix(const std::string& dataset_id) {
  return "head." + dataset_id;
}

inline ImdtState imdt_train_nr(
    const std::vector<ImdtDataset>& datasets, const std::string& target_id,
    const BackboneConfig& bcfg, const SimilarityConfig& scfg,
    const TrainConfig& cfg, std::vector<EpochLog>* logs_out = nullptr,
    const std::function<void(const EpochLog&, const ParamSet&)>& on_epoch = {}) {
  cfg.validate();
  bcfg.validate();
  scfg.validate();
  if (datasets.empty()) throw DataError("imdt_train_nr: no datasets");

  ImdtState state;
  state.backbone_config = bcfg;
  state.similarity = scfg;
  state.target_id = target_id;

  std::vector<int64_t> sizes;
  bool target_found = false;
  for (const ImdtDataset& ds : datasets) {
    state.dataset_ids.push_back(ds.id);
    const int64_t n = static_cast<int64_t>(ds.train.size());
    if (n < cfg.batch_size)
      throw DataError("dataset '" + ds.id + "' has " + std::to_string(n) +
                      " training videos, fewer than batch_size " +
                      std::to_string(cfg.batch_size));
    sizes.push_back(n);
    target_found = target_found || ds.id == target_id;
  }
  if (!target_found)
    throw DataError("target dataset '" + target_id + "' not among inputs");
  state.schedule = IMDTSchedule::build(sizes, cfg.e_min, cfg.loops);

  Rng brng = Rng::substream(cfg.seed, "backbone");
  state.params = init_backbone(bcfg, brng);
  const int64_t in_dim = nr_feature_length(bcfg);
  for (const ImdtDataset& ds : datasets) {
    Rng hrng = Rng::substream(cfg.seed, "head/" + ds.id);
    ParamSet head = init_head(in_dim, hrng, imdt_head_prefix(ds.id));
    state.params.insert(head.begin(), head.end());
  }

  std::map<std::string, Rng> shuffle_rngs;
  for (const ImdtDataset& ds : datasets)
    shuffle_rngs.emplace(ds.id, Rng::substream(cfg.seed, "shuffle/" + ds.id));

  AdamState adam;
  for (int64_t loop = 0; loop < state.schedule.loops; ++loop) {
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      const ImdtDataset& ds = datasets[i];
      const int64_t e_i = state.schedule.epochs_per_dataset[i];
      for (int64_t e = 0; e < e_i; ++e) {
        EpochLog log = train_epoch(state.params, adam, ds.train,
                                   FeatureKind::kNr, bcfg, scfg,
                                   imdt_head_prefix(ds.id), cfg,
                                   shuffle_rngs.at(ds.id));
        log.phase = "imdt";
        log.dataset_id = ds.id;
        log.loop = loop;
        log.epoch = e;
        if (on_epoch) on_epoch(log, state.params);
        if (logs_out) logs_out->push_back(std::move(log));
      }
    }
  }

  const ImdtDataset* target = nullptr;
  for (const ImdtDataset& ds : datasets)
    if (ds.id == target_id) target = &ds;

  AdamState fresh;
  Rng fin_rng = Rng::substream(cfg.seed, "shuffle/finetune");
  ParamFilter filter;
  if (cfg.freeze_shared_in_finetune) {
    const std::string prefix = imdt_head_prefix(target_id) + ".";
    filter = [prefix](const std::string& name) {
      return name.rfind(prefix, 0) == 0;
    };
  }
  for (int64_t e = 0; e < cfg.imdt_finetune_epochs; ++e) {
    EpochLog log = train_epoch(state.params, fresh, target->train,
                               FeatureKind::kNr, bcfg, scfg,
                               imdt_head_prefix(target_id), cfg, fin_rng,
                               filter);
    log.phase = "imdt-finetune";
    log.dataset_id = target_id;
    log.epoch = e;
    if (on_epoch) on_epoch(log, state.params);
    if (logs_out) logs_out->push_back(std::move(log));
  }
  return state;
}

// Extracts a standalone scoring model for one dataset's head.
inline Model imdt_target_model(const ImdtState& state,
                               const std::string& dataset_id) {
  const std::string prefix = imdt_head_prefix(dataset_id);
  Model m;
  m.kind = FeatureKind::kNr;
  m.backbone_config = state.backbone_config;
  m.similarity = state.similarity;
  m.head_prefix = prefix;
  for (const auto& [name, t] : state.params)
    if (name.rfind("backbone.", 0) == 0 || name.rfind(prefix + ".", 0) == 0)
      m.params.emplace(name, t);
  m.validate();
  return m;
}

inline void save_imdt(const std::filesystem::path& path, const ImdtState& state) {
  container::File file;
  file.meta = {{"kind", "imdt"},
               {"dataset_ids", state.dataset_ids},
               {"target", state.target_id},
               {"backbone", state.backbone_config.to_json()},
               {"similarity", state.similarity.to_json()},
               {"schedule",
                {{"dataset_sizes", state.schedule.dataset_sizes},
                 {"e_min", state.schedule.e_min},
                 {"loops", state.schedule.loops},
                 {"epochs_per_dataset", state.schedule.epochs_per_dataset}}}};
  for (const auto& [name, t] : state.params) file.tensors.emplace_back(name, t);
  container::save(path, file);
}

inline ImdtState load_imdt(const std::filesystem::path& path) {
  container::File file = container::load(path, /*require_finite=*/true);
  ImdtState state;
  try {
    if (file.meta.at("kind").get<std::string>() != "imdt")
      throw DataError("'" + path.string() + "' is not a multi-dataset checkpoint");
    state.dataset_ids =
        file.meta.at("dataset_ids").get<std::vector<std::string>>();
    state.target_id = file.meta.at("target").get<std::string>();
    state.backbone_config = BackboneConfig::from_json(file.meta.at("backbone"));
    state.similarity = SimilarityConfig::from_json(file.meta.at("similarity"));
    const auto& sj = file.meta.at("schedule");
    state.schedule = IMDTSchedule::build(
        sj.at("dataset_sizes").get<std::vector<int64_t>>(),
        sj.at("e_min").get<int64_t>(), sj.at("loops").get<int64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint manifest malformed: ") + e.what(), 8);
  }
  for (auto& [name, t] : file.tensors) state.params.emplace(name, std::move(t));
  return state;
}

}  // namespace vqa
