#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "support/testutil.hpp"
#include "vqa/eval.hpp"
#include "vqa/synthetic.hpp"

using namespace vqa;

namespace {

BackboneConfig tiny_bcfg() {
  BackboneConfig b;
  b.stage_count = 2;
  b.channels_per_stage = {2, 3};
  b.stride_per_stage = {2, 2};
  b.kernel_size = 3;
  return b;
}

std::vector<VideoSample> random_nr_samples(std::mt19937_64& rng,
                                           std::size_t count) {
  std::vector<VideoSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    VideoSample s;
    s.id = "clip" + std::to_string(i);
    s.mos = 1.0 + static_cast<double>(i);
    s.dist.frames.push_back(testing::random_tensor(rng, {3, 8, 8}, 0.0, 1.0));
    s.dist.source_indices.push_back(0);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("a model that reproduces the labels scores perfectly") {
  std::mt19937_64 rng(61);
  const Model model = make_model(FeatureKind::kNr, tiny_bcfg(),
                                 SimilarityConfig{}, 5);
  auto samples = random_nr_samples(rng, 5);

  // Relabel each clip with the model's own prediction: agreement is total.
  std::vector<double> preds;
  for (auto& s : samples) {
    s.mos = score_video_nr(model, s.dist).video_score;
    preds.push_back(s.mos);
  }
  std::sort(preds.begin(), preds.end());
  REQUIRE(std::adjacent_find(preds.begin(), preds.end()) == preds.end());

  const EvalResult res = evaluate_samples(model, samples);
  REQUIRE(res.report.has_value());
  CHECK(res.report->srcc == 1.0);
  CHECK(res.report->krcc == 1.0);
  CHECK(res.report->plcc == 1.0);
  CHECK(res.report->rmse == 0.0);
  CHECK(res.report->n == 5);
  CHECK(res.failure_reason.empty());
  REQUIRE(res.rows.size() == 5);
  for (const EvalRow& r : res.rows) CHECK(r.pred == r.mos);

  const nlohmann::json j = eval_report_json(res);
  CHECK(j.at("schema") == "vqa-eval-report/1");
  CHECK(j.at("n") == 5);
  CHECK(j.at("srcc") == 1.0);
  CHECK(j.at("rmse") == 0.0);
  CHECK(j.at("logistic_remap") == false);
  CHECK_FALSE(j.contains("reason"));
}

TEST_CASE("a constant model yields no correlations but a reason") {
  std::mt19937_64 rng(62);
  Model model = make_model(FeatureKind::kNr, tiny_bcfg(), SimilarityConfig{}, 6);
  Tensor& w2 = model.params.at("head.layer2.weight");
  for (int64_t i = 0; i < w2.numel(); ++i) w2[i] = 0.0;
  model.params.at("head.layer2.bias")[0] = 2.5;

  auto samples = random_nr_samples(rng, 4);
  const EvalResult res = evaluate_samples(model, samples);
  CHECK_FALSE(res.report.has_value());
  CHECK(res.failure_reason.find("constant input") != std::string::npos);
  REQUIRE(res.rows.size() == 4);
  for (const EvalRow& r : res.rows) CHECK(r.pred == 2.5);

  const nlohmann::json j = eval_report_json(res);
  CHECK(j.at("srcc").is_null());
  CHECK(j.at("krcc").is_null());
  CHECK(j.at("plcc").is_null());
  CHECK(j.at("rmse").is_null());
  CHECK(j.at("reason").get<std::string>().find("constant input") !=
        std::string::npos);
}

TEST_CASE("parallel evaluation matches serial bit for bit") {
  std::mt19937_64 rng(63);
  const Model model = make_model(FeatureKind::kNr, tiny_bcfg(),
                                 SimilarityConfig{}, 7);
  const auto samples = random_nr_samples(rng, 7);
  const EvalResult serial = evaluate_samples(model, samples, false, 1);
  const EvalResult parallel = evaluate_samples(model, samples, false, 3);
  REQUIRE(serial.rows.size() == parallel.rows.size());
  for (std::size_t i = 0; i < serial.rows.size(); ++i) {
    CHECK(serial.rows[i].video == parallel.rows[i].video);
    CHECK(std::bit_cast<std::uint64_t>(serial.rows[i].pred) ==
          std::bit_cast<std::uint64_t>(parallel.rows[i].pred));
  }
  REQUIRE(serial.report.has_value());
  REQUIRE(parallel.report.has_value());
  CHECK(serial.report->srcc == parallel.report->srcc);
}

TEST_CASE("evaluation guards its inputs") {
  std::mt19937_64 rng(64);
  const Model nr = make_model(FeatureKind::kNr, tiny_bcfg(), SimilarityConfig{}, 8);
  CHECK_THROWS_MATCHES(evaluate_samples(nr, {}), DataError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("empty split")));

  const Model fr = make_model(FeatureKind::kFr, tiny_bcfg(), SimilarityConfig{}, 8);
  auto samples = random_nr_samples(rng, 2);  // no reference clips attached
  CHECK_THROWS_MATCHES(evaluate_samples(fr, samples), DataError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("lacks a reference")));
}

TEST_CASE("evaluation from a manifest decodes, scores, and aggregates") {
  testing::TempDir tmp;
  SyntheticOptions opt;
  opt.n_refs = 3;
  opt.levels = 2;
  opt.width = 16;
  opt.height = 16;
  opt.frames = 4;
  opt.fps = Rational{4, 1};
  opt.seed = 55;
  opt.dataset_id = "evaltest";
  const DatasetManifest manifest = generate_synthetic(tmp.path(), opt);

  const Model fr = make_model(FeatureKind::kFr, tiny_bcfg(), SimilarityConfig{}, 9);
  const EvalResult res = evaluate(fr, manifest, "val", 16);
  REQUIRE(res.report.has_value());
  CHECK(res.rows.size() == 4);  // one held-out reference, 2 types x 2 levels
  CHECK(res.report->n == 4);
  CHECK(std::abs(res.report->srcc) <= 1.0);
  CHECK(std::abs(res.report->plcc) <= 1.0);
  for (const EvalRow& r : res.rows) CHECK(std::isfinite(r.pred));

  SECTION("missing splits and mismatched manifests are refused") {
    DatasetManifest train_only = manifest;
    for (ManifestRecord& r : train_only.records) r.split = "train";
    CHECK_THROWS_MATCHES(evaluate(fr, train_only, "val", 16), DataError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("is empty")));

    DatasetManifest no_refs = manifest;
    for (ManifestRecord& r : no_refs.records) r.reference.clear();
    CHECK_THROWS_MATCHES(
        evaluate(fr, no_refs, "val", 16), DataError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(
            "needs a manifest with references")));
  }

  SECTION("a no-reference model evaluates the same manifest") {
    const Model nr = make_model(FeatureKind::kNr, tiny_bcfg(),
                                SimilarityConfig{}, 9);
    const EvalResult nres = evaluate(nr, manifest, "val", 16);
    REQUIRE(nres.report.has_value());
    CHECK(nres.rows.size() == 4);
  }
}

TEST_CASE("logistic remapping keeps rank order and reports the flag") {
  std::mt19937_64 rng(65);
  const Model model = make_model(FeatureKind::kNr, tiny_bcfg(),
                                 SimilarityConfig{}, 10);
  auto samples = random_nr_samples(rng, 6);
  for (auto& s : samples) s.mos = score_video_nr(model, s.dist).video_score;

  const EvalResult res = evaluate_samples(model, samples, true);
  CHECK(res.logistic);
  REQUIRE(res.report.has_value());
  CHECK(res.report->srcc == 1.0);  // remap is monotone, ranks unchanged
  CHECK(res.report->plcc > 0.99);
  CHECK(eval_report_json(res).at("logistic_remap") == true);

  // Raw rows keep the unmapped predictions.
  for (std::size_t i = 0; i < samples.size(); ++i)
    CHECK(res.rows[i].pred == samples[i].mos);
}

TEST_CASE("per-video CSV uses full-precision round-trippable numbers") {
  EvalResult res;
  res.rows.push_back({"va.y4m", 0.5, 1.0});
  res.rows.push_back({"vb.y4m", -0.25, 2.0});
  res.rows.push_back({"vc.y4m", 1.0 / 3.0, 4.5});
  std::ostringstream os;
  write_eval_csv(os, res);
  std::istringstream is(os.str());
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line == "video,prediction,mos");
  REQUIRE(std::getline(is, line));
  CHECK(line == "va.y4m,0.5,1");
  REQUIRE(std::getline(is, line));
  CHECK(line == "vb.y4m,-0.25,2");
  REQUIRE(std::getline(is, line));
  CHECK(line.rfind("vc.y4m,0.3333333333333333", 0) == 0);
  const std::string num = line.substr(line.find(',') + 1);
  const std::string pred_str = num.substr(0, num.find(','));
  CHECK(std::stod(pred_str) == 1.0 / 3.0);
}
