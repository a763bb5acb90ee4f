#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles/fd.hpp"
#include "support/testutil.hpp"
#include "vqa/model.hpp"

using namespace vqa;
using vqa::testing::random_tensor;

namespace {

BackboneConfig tiny_config() {
  BackboneConfig cfg;
  cfg.stage_count = 2;
  cfg.channels_per_stage = {2, 3};
  cfg.stride_per_stage = {2, 2};
  cfg.kernel_size = 3;
  return cfg;
}

SampledClip clip_of(std::mt19937_64& gen, int frames) {
  SampledClip c;
  for (int i = 0; i < frames; ++i) {
    c.frames.push_back(random_tensor(gen, {3, 8, 8}, 0.0, 1.0));
    c.source_indices.push_back(i);
  }
  return c;
}

}  // namespace

TEST_CASE("head initialization shapes and ranges") {
  Rng rng(5);
  ParamSet head = init_head(10, rng, "head", 16);
  REQUIRE(head.size() == 4);
  CHECK(head.at("head.layer1.weight").shape() == Shape{10, 16});
  CHECK(head.at("head.layer1.bias").shape() == Shape{16});
  CHECK(head.at("head.layer2.weight").shape() == Shape{16, 1});
  CHECK(head.at("head.layer2.bias").shape() == Shape{1});

  const double bound1 = std::sqrt(6.0 / 10.0);
  const Tensor& w1 = head.at("head.layer1.weight");
  for (int64_t i = 0; i < w1.numel(); ++i)
    CHECK(std::fabs(w1[i]) <= bound1);
  const Tensor& w2 = head.at("head.layer2.weight");
  double maxabs = 0.0;
  for (int64_t i = 0; i < w2.numel(); ++i)
    maxabs = std::max(maxabs, std::fabs(w2[i]));
  CHECK(maxabs <= 1e-3);
  CHECK(maxabs > 0.0);  // tiny but not zero, so batch scores have spread
  CHECK(head.at("head.layer2.bias")[0] == 0.0);
}

TEST_CASE("zero weights with a final bias give a constant score") {
  ParamSet params;
  params.emplace("head.layer1.weight", Tensor::zeros({4, 3}));
  params.emplace("head.layer1.bias", Tensor::zeros({3}));
  params.emplace("head.layer2.weight", Tensor::zeros({3, 1}));
  params.emplace("head.layer2.bias", Tensor::vector({2.75}));
  std::mt19937_64 gen(6);
  for (int i = 0; i < 5; ++i) {
    Tensor f = random_tensor(gen, {4});
    CHECK(regress(f, params) == 2.75);
  }
}

TEST_CASE("regress matches the two-matrix-multiply oracle") {
  std::mt19937_64 gen(7);
  Rng rng(7);
  ParamSet head = init_head(6, rng, "head", 5);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor f = random_tensor(gen, {6});
    std::vector<double> fv(f.data(), f.data() + 6);
    const double expect = vqa::testing::mlp_oracle(
        fv, head.at("head.layer1.weight"), head.at("head.layer1.bias"),
        head.at("head.layer2.weight"), head.at("head.layer2.bias"));
    CHECK(regress(f, head) == Catch::Approx(expect).margin(1e-12));
  }
  CHECK_THROWS_AS(regress(Tensor({2, 3}), head), DataError);
  CHECK_THROWS_AS(regress(Tensor({7}), head), DataError);
}

TEST_CASE("eager regress and graph head agree bit-for-bit") {
  std::mt19937_64 gen(8);
  Rng rng(8);
  ParamSet head = init_head(6, rng, "head", 5);
  Tensor f = random_tensor(gen, {6});

  Graph g;
  HeadGraph h = declare_head(g, head);
  NodeId out = apply_head(g, h, g.constant(f));
  g.set_output(out);
  g.forward();
  const double eager = regress(f, head);
  CHECK(g.value(out)[0] == eager);

  auto r = vqa::testing::fd_check(g, {"head.layer1.weight", "head.layer1.bias",
                                      "head.layer2.weight", "head.layer2.bias"});
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("video score is the mean of frame scores") {
  VideoScore vs = finalize_score({1.0, 2.0, 4.0});
  CHECK(vs.video_score == Catch::Approx(7.0 / 3.0).margin(1e-12));
  REQUIRE(vs.frame_scores.size() == 3);
  CHECK_THROWS_AS(finalize_score({}), DataError);
}

TEST_CASE("full-reference scoring end to end") {
  Model m = make_model(FeatureKind::kFr, tiny_config(), SimilarityConfig{}, 11);
  m.validate();
  std::mt19937_64 gen(11);
  SampledClip ref = clip_of(gen, 3);
  SampledClip dist = clip_of(gen, 3);
  VideoScore vs = score_video_fr(m, ref, dist);
  REQUIRE(vs.frame_scores.size() == 3);
  double mean = 0.0;
  for (double s : vs.frame_scores) mean += s / 3.0;
  CHECK(vs.video_score == Catch::Approx(mean).margin(1e-12));

  // Frame-count mismatch and wrong-kind guards.
  SampledClip two = clip_of(gen, 2);
  CHECK_THROWS_AS(score_video_fr(m, ref, two), DataError);
  CHECK_THROWS_AS(score_video_nr(m, dist), DataError);

  // Scoring the reference against itself uses the all-ones feature for every
  // frame, so all frame scores coincide.
  VideoScore self = score_video_fr(m, ref, ref);
  for (double s : self.frame_scores) CHECK(s == self.frame_scores[0]);
}

TEST_CASE("no-reference scoring end to end") {
  Model m = make_model(FeatureKind::kNr, tiny_config(), SimilarityConfig{}, 12);
  m.validate();
  std::mt19937_64 gen(12);
  SampledClip dist = clip_of(gen, 2);
  VideoScore vs = score_video_nr(m, dist);
  REQUIRE(vs.frame_scores.size() == 2);
  CHECK_THROWS_AS(score_video_fr(m, dist, dist), DataError);
}

TEST_CASE("same seed builds the same model, different seeds differ") {
  Model a = make_model(FeatureKind::kFr, tiny_config(), SimilarityConfig{}, 99);
  Model b = make_model(FeatureKind::kFr, tiny_config(), SimilarityConfig{}, 99);
  Model c = make_model(FeatureKind::kFr, tiny_config(), SimilarityConfig{}, 100);
  for (const auto& [name, t] : a.params) CHECK(bit_equal(t, b.params.at(name)));
  CHECK_FALSE(bit_equal(a.params.at("head.layer1.weight"),
                        c.params.at("head.layer1.weight")));
}

TEST_CASE("model checkpoints round-trip bit-exactly") {
  vqa::testing::TempDir dir("model");
  Model m = make_model(FeatureKind::kNr, tiny_config(), SimilarityConfig{}, 13);
  save_model(dir / "m.ckpt", m);
  Model back = load_model(dir / "m.ckpt");
  CHECK(back.kind == FeatureKind::kNr);
  CHECK(back.backbone_config == m.backbone_config);
  CHECK(back.similarity == m.similarity);
  REQUIRE(back.params.size() == m.params.size());
  for (const auto& [name, t] : m.params) CHECK(bit_equal(t, back.params.at(name)));

  // Scoring after reload is bit-identical.
  std::mt19937_64 gen(13);
  SampledClip clip = clip_of(gen, 2);
  VideoScore s1 = score_video_nr(m, clip);
  VideoScore s2 = score_video_nr(back, clip);
  CHECK(s1.video_score == s2.video_score);
}

TEST_CASE("checkpoint loading rejects corrupted content") {
  vqa::testing::TempDir dir("model_bad");
  Model m = make_model(FeatureKind::kFr, tiny_config(), SimilarityConfig{}, 14);
  // Poison one parameter with a NaN: save_model itself validates shapes only,
  // but load_model requires finite payloads.
  m.params.at("head.layer2.bias")[0] = std::nan("");
  save_model(dir / "bad.ckpt", m);
  CHECK_THROWS_WITH(load_model(dir / "bad.ckpt"),
                    Catch::Matchers::ContainsSubstring("head.layer2.bias"));

  container::File f;
  f.meta = {{"kind", "pyramid"}};
  container::save(dir / "notmodel.ckpt", f);
  CHECK_THROWS_AS(load_model(dir / "notmodel.ckpt"), Error);
}

TEST_CASE("validate rejects a head sized for the wrong feature length") {
  Model m = make_model(FeatureKind::kFr, tiny_config(), SimilarityConfig{}, 15);
  m.kind = FeatureKind::kNr;  // NR features are shorter; head no longer fits
  CHECK_THROWS_WITH(m.validate(),
                    Catch::Matchers::ContainsSubstring("feature length"));
}
