#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "support/testutil.hpp"
#include "vqa/cli.hpp"

using namespace vqa;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the dispatcher in-process with captured streams.
CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> owned;
  owned.push_back("vqa");
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(owned.size());
  for (const auto& a : owned) argv.push_back(a.c_str());

  std::ostringstream captured_out, captured_err;
  struct Restore {
    std::streambuf* out;
    std::streambuf* err;
    ~Restore() {
      std::cout.rdbuf(out);
      std::cerr.rdbuf(err);
    }
  } restore{std::cout.rdbuf(captured_out.rdbuf()),
            std::cerr.rdbuf(captured_err.rdbuf())};

  CliResult r;
  r.code = cli::dispatch(static_cast<int>(argv.size()), argv.data());
  r.out = captured_out.str();
  r.err = captured_err.str();
  return r;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  REQUIRE(is.good());
  nlohmann::json j;
  is >> j;
  return j;
}

}  // namespace

TEST_CASE("usage problems exit with code 1") {
  CHECK(run_cli({}).code == cli::kExitUsage);
  CHECK(run_cli({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run_cli({"eval"}).code == cli::kExitUsage);  // missing required flags
  CHECK(run_cli({"score", "--mode", "fr", "--model", "m", "--dist", "d"}).code ==
        cli::kExitUsage);  // fr scoring without --ref
  const CliResult bad_mode = run_cli({"score", "--mode", "zz", "--model", "m",
                                      "--dist", "d"});
  CHECK(bad_mode.code == cli::kExitUsage);
  CHECK(bad_mode.err.find("'fr' or 'nr'") != std::string::npos);
}

TEST_CASE("help and version exit cleanly") {
  const CliResult version = run_cli({"--version"});
  CHECK(version.code == cli::kExitOk);
  CHECK(version.out.find(kVersion) != std::string::npos);
  const CliResult help = run_cli({"--help"});
  CHECK(help.code == cli::kExitOk);
  CHECK(help.out.find("train-fr") != std::string::npos);
  CHECK(help.out.find("gen-synthetic") != std::string::npos);
}

TEST_CASE("data problems exit with code 2") {
  testing::TempDir tmp;
  const CliResult missing_model =
      run_cli({"eval", "--model", (tmp.path() / "no.ckpt").string(),
               "--manifest", (tmp.path() / "no.csv").string()});
  CHECK(missing_model.code == cli::kExitData);

  const CliResult missing_input =
      run_cli({"preprocess", "--input", (tmp.path() / "no.y4m").string(),
               "--out", (tmp.path() / "frames").string()});
  CHECK(missing_input.code == cli::kExitData);

  // Config typos are data errors too, not silent fallbacks.
  const fs::path cfg = tmp.path() / "bad.toml";
  {
    std::ofstream os(cfg);
    os << "[train]\nreps = 3\n";
  }
  const CliResult typo =
      run_cli({"gen-synthetic", "--config", cfg.string(), "--out",
               (tmp.path() / "g").string()});
  CHECK(typo.code == cli::kExitData);
  CHECK(typo.err.find("unknown config key 'train.reps'") != std::string::npos);
}

TEST_CASE("the command-line pipeline runs end to end") {
  testing::TempDir tmp;
  const fs::path data = tmp.path() / "data";
  const fs::path cfg_path = tmp.path() / "cfg.toml";
  {
    std::ofstream os(cfg_path);
    os << "[run]\n"
          "frame_size = 16\n"
          "[backbone]\n"
          "stage_count = 2\n"
          "channels_per_stage = [2, 3]\n"
          "stride_per_stage = [2, 2]\n"
          "[train]\n"
          "pretrain_epochs = 1\n"
          "finetune_epochs = 1\n"
          "batch_size = 2\n"
          "learning_rate = 0.001\n"
          "e_min = 1\n"
          "loops = 1\n"
          "imdt_finetune_epochs = 1\n";
  }

  // --- synthetic data ------------------------------------------------------
  const CliResult gen = run_cli({"gen-synthetic", "--out", data.string(),
                                 "--refs", "3", "--levels", "2", "--width",
                                 "16", "--height", "16", "--frames", "8",
                                 "--dataset-id", "demo", "--seed", "5"});
  REQUIRE(gen.code == cli::kExitOk);
  CHECK(gen.out.find("12 clips") != std::string::npos);
  REQUIRE(fs::exists(data / "manifest.csv"));
  CHECK(fs::exists(data / "ref0.y4m"));
  CHECK(read_json(data / "run_record.json").at("command") == "gen-synthetic");

  // --- preprocess ----------------------------------------------------------
  const fs::path frames = tmp.path() / "frames";
  const CliResult pre =
      run_cli({"preprocess", "--input", (data / "ref0.y4m").string(), "--out",
               frames.string(), "--size", "16"});
  REQUIRE(pre.code == cli::kExitOk);
  const nlohmann::json findex = read_json(frames / "index.json");
  CHECK(findex.at("schema") == "vqa-frames/1");
  CHECK(findex.at("width") == 16);
  CHECK(findex.at("count") == 1);  // 8 frames at 8 fps -> one sampled frame
  REQUIRE(findex.at("frames").size() == 1);
  CHECK(fs::exists(
      frames / findex.at("frames").at(0).at("file").get<std::string>()));

  // --- extract (fresh seeded parameters, default trunk) --------------------
  const fs::path pyr = tmp.path() / "pyr";
  const CliResult ext =
      run_cli({"extract", "--frames", frames.string(), "--out", pyr.string(),
               "--features-csv", (pyr / "features.csv").string()});
  REQUIRE(ext.code == cli::kExitOk);
  const nlohmann::json pindex = read_json(pyr / "index.json");
  CHECK(pindex.at("schema") == "vqa-pyramids/1");
  CHECK(fs::exists(pyr / "pyramid_0000.bin"));
  {
    std::ifstream is(pyr / "features.csv");
    std::string header;
    REQUIRE(std::getline(is, header));
    CHECK(header.rfind("frame,", 0) == 0);
    CHECK(header.find("pool_ch0") != std::string::npos);
  }

  // --- train the full-reference model --------------------------------------
  const fs::path trained = tmp.path() / "trained";
  const CliResult tr = run_cli({"train-fr", "--pretrain",
                                (data / "manifest.csv").string(), "--finetune",
                                (data / "manifest.csv").string(), "--config",
                                cfg_path.string(), "--out", trained.string()});
  REQUIRE(tr.code == cli::kExitOk);
  REQUIRE(fs::exists(trained / "model.ckpt"));
  CHECK(read_json(trained / "run_record.json")
            .at("config")
            .at("provenance")
            .at("train.batch_size") == "file");
  {
    std::ifstream is(trained / "train_log.jsonl");
    std::string line;
    std::vector<std::string> phases;
    while (std::getline(is, line)) {
      const nlohmann::json j = nlohmann::json::parse(line);
      phases.push_back(j.at("phase"));
      CHECK(j.at("batches").is_array());
      CHECK(j.at("mean_loss").is_number());
    }
    CHECK(phases == std::vector<std::string>{"pretrain", "finetune"});
  }

  // --- score one clip ------------------------------------------------------
  const fs::path score_json = tmp.path() / "sc" / "score.json";
  const CliResult sc = run_cli(
      {"score", "--mode", "fr", "--model", (trained / "model.ckpt").string(),
       "--ref", (data / "ref0.y4m").string(), "--dist",
       (data / "dist_r0_blur_l1.y4m").string(), "--size", "16", "--out",
       score_json.string()});
  REQUIRE(sc.code == cli::kExitOk);
  const nlohmann::json sj = read_json(score_json);
  CHECK(sj.at("schema") == "vqa-score/1");
  CHECK(sj.at("mode") == "fr");
  CHECK(sj.at("frame_scores").size() == 1);
  CHECK(sj.at("video_score").is_number());
  CHECK(sc.out.find("vqa-score/1") != std::string::npos);  // also on stdout

  // Scoring through the wrong mode is a data error (checkpoint kind).
  CHECK(run_cli({"score", "--mode", "nr", "--model",
                 (trained / "model.ckpt").string(), "--dist",
                 (data / "dist_r0_blur_l1.y4m").string(), "--size", "16"})
            .code == cli::kExitData);

  // --- evaluate on the held-out split --------------------------------------
  const fs::path report = tmp.path() / "ev" / "report.json";
  const CliResult ev = run_cli(
      {"eval", "--model", (trained / "model.ckpt").string(), "--manifest",
       (data / "manifest.csv").string(), "--split", "val", "--size", "16",
       "--out", report.string()});
  REQUIRE(ev.code == cli::kExitOk);
  const nlohmann::json rj = read_json(report);
  CHECK(rj.at("schema") == "vqa-eval-report/1");
  CHECK(rj.at("n") == 4);
  CHECK(fs::exists(tmp.path() / "ev" / "report.csv"));
  CHECK(read_json(tmp.path() / "ev" / "run_record.json").at("command") == "eval");

  // --- no-reference training over two datasets -----------------------------
  const fs::path nra = tmp.path() / "nra";
  const fs::path nrb = tmp.path() / "nrb";
  REQUIRE(run_cli({"gen-synthetic", "--out", nra.string(), "--refs", "3",
                   "--levels", "2", "--width", "16", "--height", "16",
                   "--frames", "8", "--dataset-id", "dsa", "--nr", "--seed",
                   "6"})
              .code == cli::kExitOk);
  REQUIRE(run_cli({"gen-synthetic", "--out", nrb.string(), "--refs", "2",
                   "--levels", "2", "--width", "16", "--height", "16",
                   "--frames", "8", "--dataset-id", "dsb", "--nr", "--seed",
                   "7"})
              .code == cli::kExitOk);
  const fs::path nrout = tmp.path() / "nrout";
  const CliResult tn = run_cli(
      {"train-nr", "--datasets", (nra / "manifest.csv").string(),
       (nrb / "manifest.csv").string(), "--target", "dsb", "--config",
       cfg_path.string(), "--out", nrout.string()});
  REQUIRE(tn.code == cli::kExitOk);
  CHECK(fs::exists(nrout / "imdt.ckpt"));
  REQUIRE(fs::exists(nrout / "model.ckpt"));
  const Model target = load_model(nrout / "model.ckpt");
  CHECK(target.kind == FeatureKind::kNr);
  CHECK(target.head_prefix == "head.dsb");

  // Unknown target id fails with a data error.
  CHECK(run_cli({"train-nr", "--datasets", (nra / "manifest.csv").string(),
                 "--target", "nope", "--config", cfg_path.string(), "--out",
                 (tmp.path() / "x").string()})
            .code == cli::kExitData);
}
