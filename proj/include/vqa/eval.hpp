#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqa/dataset.hpp"
#include "vqa/errors.hpp"
#include "vqa/metrics.hpp"
#include "vqa/model.hpp"
#include "vqa/parallel.hpp"
#include "vqa/training.hpp"

namespace vqa {

struct EvalRow {
  std::string video;
  double pred = 0.0;
  double mos = 0.0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  std::optional<MetricsReport> report;
  std::string failure_reason;  // set when the correlations are undefined
  bool logistic = false;
};

// Scores every sample (in parallel, aggregated by index) and computes the
// metric quartet. Degenerate inputs (e.g. a constant model) surface as a
// missing report with the reason attached instead of an exception.
inline EvalResult evaluate_samples(const Model& model,
                                   const std::vector<VideoSample>& samples,
                                   bool logistic_remap_preds = false,
                                   int64_t jobs = 1) {
  if (samples.empty()) throw DataError("evaluate: empty split");
  EvalResult res;
  res.logistic = logistic_remap_preds;
  res.rows.resize(samples.size());
  parallel_for(static_cast<int64_t>(samples.size()), jobs, [&](int64_t i) {
    const VideoSample& s = samples[static_cast<std::size_t>(i)];
    if (model.kind == FeatureKind::kFr && !s.ref)
      throw DataError("video '" + s.id + "' lacks a reference clip");
    VideoScore vs = model.kind == FeatureKind::kFr
                        ? score_video_fr(model, *s.ref, s.dist)
                        : score_video_nr(model, s.dist);
    res.rows[static_cast<std::size_t>(i)] = {s.id, vs.video_score, s.mos};
  });

  std::vector<double> pred, mos;
  for (const EvalRow& r : res.rows) {
    pred.push_back(r.pred);
    mos.push_back(r.mos);
  }
  try {
    if (logistic_remap_preds) pred = logistic_remap(pred, mos);
    res.report = compute_metrics(pred, mos);
  } catch (const DataError& e) {
    res.failure_reason = e.what();
  }
  return res;
}

inline EvalResult evaluate(const Model& model, const DatasetManifest& manifest,
                           const std::string& split, int64_t frame_size = 384,
                           bool logistic_remap_preds = false, int64_t jobs = 1) {
  if (model.kind == FeatureKind::kFr && !manifest.is_fr())
    throw DataError("full-reference evaluation needs a manifest with references");
  std::vector<VideoSample> samples =
      load_samples(manifest, split, frame_size, frame_size);
  if (samples.empty())
    throw DataError("split '" + split + "' of dataset '" + manifest.dataset_id +
                    "' is empty");
  return evaluate_samples(model, samples, logistic_remap_preds, jobs);
}

inline nlohmann::json eval_report_json(const EvalResult& res) {
  nlohmann::json j;
  j["schema"] = "vqa-eval-report/1";
  j["n"] = res.rows.size();
  j["logistic_remap"] = res.logistic;
  if (res.report) {
    j["srcc"] = res.report->srcc;
    j["krcc"] = res.report->krcc;
    j["plcc"] = res.report->plcc;
    j["rmse"] = res.report->rmse;
  } else {
    j["srcc"] = nullptr;
    j["krcc"] = nullptr;
    j["plcc"] = nullptr;
    j["rmse"] = nullptr;
    j["reason"] = res.failure_reason;
  }
  return j;
}

inline void write_eval_csv(std::ostream& os, const EvalResult& res) {
  os << "video,prediction,mos\n";
  char buf[40];
  for (const EvalRow& r : res.rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.pred);
    os << r.video << "," << buf;
    std::snprintf(buf, sizeof(buf), "%.17g", r.mos);
    os << "," << buf << "\n";
  }
}

}  // namespace vqa
