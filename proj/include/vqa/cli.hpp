#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vqa/config.hpp"
#include "vqa/container.hpp"
#include "vqa/dataset.hpp"
#include "vqa/errors.hpp"
#include "vqa/eval.hpp"
#include "vqa/features.hpp"
#include "vqa/model.hpp"
#include "vqa/synthetic.hpp"
#include "vqa/training.hpp"
#include "vqa/version.hpp"
#include "vqa/videoio.hpp"

namespace vqa::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

namespace detail {

inline void write_json_file(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << j.dump(2) << "\n";
}

inline nlohmann::json epoch_log_json(const EpochLog& log) {
  nlohmann::json batches = nlohmann::json::array();
  for (const BatchLog& b : log.batches)
    batches.push_back(
        {{"loss", b.loss}, {"degenerate", b.degenerate}, {"size", b.size}});
  return {{"phase", log.phase},     {"dataset", log.dataset_id},
          {"loop", log.loop},       {"epoch", log.epoch},
          {"mean_loss", log.mean_loss()}, {"batches", batches}};
}

inline void append_epoch_log(std::ostream& os, const EpochLog& log) {
  os << epoch_log_json(log).dump() << "\n";
}

struct CommonFlags {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<int64_t> jobs;
  std::optional<int64_t> size;

  void attach(CLI::App* cmd, bool with_size = true) {
    cmd->add_option("--config", config_path, "config file (key = value sections)");
    cmd->add_option("--seed", seed, "root random seed");
    cmd->add_option("--jobs", jobs, "parallel worker count");
    if (with_size)
      cmd->add_option("--size", size, "square frame size after preprocessing");
  }

  RunConfig resolve(FeatureKind kind) const {
    RunConfig rc;
    rc.kind = kind;
    if (kind == FeatureKind::kNr) rc.train = TrainConfig::nr_defaults();
    if (!config_path.empty()) apply_config_file(rc, load_config(config_path));
    if (seed) {
      rc.seed = *seed;
      rc.note("run.seed", "flag");
    }
    if (jobs) {
      rc.jobs = *jobs;
      rc.note("run.jobs", "flag");
    }
    if (size) {
      rc.frame_size = *size;
      rc.note("run.frame_size", "flag");
    }
    rc.train.seed = rc.seed;
    return rc;
  }
};

// ---------------------------------------------------------------------------

inline int cmd_preprocess(const std::string& input, const CommonFlags& flags,
                          const std::string& out_dir) {
  RunConfig rc = flags.resolve(FeatureKind::kFr);
  FrameSequence seq = decode(input);
  SampledClip clip = preprocess(seq, rc.frame_size, rc.frame_size);

  fs::create_directories(out_dir);
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.bin", i);
    container::File file;
    file.meta = {{"kind", "frame"}, {"source_index", clip.source_indices[i]}};
    file.tensors.emplace_back("rgb", clip.frames[i]);
    container::save(fs::path(out_dir) / name, file);
    frames.push_back({{"file", name}, {"source_index", clip.source_indices[i]}});
  }
  write_json_file(fs::path(out_dir) / "index.json",
                  {{"schema", "vqa-frames/1"},
                   {"width", rc.frame_size},
                   {"height", rc.frame_size},
                   {"count", clip.frames.size()},
                   {"frame_rate", seq.frame_rate.str()},
                   {"frames", frames}});
  write_run_record(out_dir, rc, "preprocess");
  std::cout << "wrote " << clip.frames.size() << " frames to " << out_dir
            << "\n";
  return kExitOk;
}

inline int cmd_extract(const std::string& frames_dir, const CommonFlags& flags,
                       const std::string& model_path,
                       const std::string& features_csv,
                       const std::string& out_dir) {
  RunConfig rc = flags.resolve(FeatureKind::kNr);

  ParamSet params;
  BackboneConfig bcfg;
  if (!model_path.empty()) {
    Model m = load_model(model_path);
    params = std::move(m.params);
    bcfg = m.backbone_config;
  } else {
    bcfg = rc.backbone;
    Rng rng = Rng::substream(rc.seed, "backbone");
    params = init_backbone(bcfg, rng);
  }

  std::ifstream idx(fs::path(frames_dir) / "index.json");
  if (!idx)
    throw DataError("no index.json in '" + frames_dir +
                    "' (run preprocess first)");
  nlohmann::json index;
  idx >> index;

  fs::create_directories(out_dir);
  std::vector<QualityFeatureVector> feature_rows;
  nlohmann::json out_index = nlohmann::json::array();
  for (const auto& entry : index.at("frames")) {
    const std::string fname = entry.at("file").get<std::string>();
    container::File file =
        container::load(fs::path(frames_dir) / fname, /*require_finite=*/true);
    const Tensor* rgb = file.find("rgb");
    if (!rgb) throw DataError("frame file '" + fname + "' has no rgb tensor");
    FeaturePyramid pyr = extract(*rgb, params, bcfg);
    const std::string pname = "pyramid_" + fname.substr(6);
    export_pyramid(fs::path(out_dir) / pname, pyr);
    out_index.push_back({{"frame", fname}, {"pyramid", pname}});
    if (!features_csv.empty()) feature_rows.push_back(nr_feature(pyr));
  }
  write_json_file(fs::path(out_dir) / "index.json",
                  {{"schema", "vqa-pyramids/1"}, {"pyramids", out_index}});
  if (!features_csv.empty()) {
    std::ofstream os(features_csv);
    if (!os) throw DataError("cannot write '" + features_csv + "'");
    write_features_csv(os, feature_rows);
  }
  write_run_record(out_dir, rc, "extract");
  std::cout << "wrote " << out_index.size() << " pyramids to " << out_dir << "\n";
  return kExitOk;
}

inline int cmd_train_fr(const std::string& pretrain_path,
                        const std::string& finetune_path,
                        const CommonFlags& flags, const std::string& out_dir) {
  RunConfig rc = flags.resolve(FeatureKind::kFr);
  DatasetManifest pre = load_manifest(pretrain_path);
  DatasetManifest fin = load_manifest(finetune_path);
  if (!pre.is_fr() || !fin.is_fr())
    throw DataError("train-fr manifests must carry references on every row");

  std::vector<VideoSample> pre_train =
      load_samples(pre, "train", rc.frame_size, rc.frame_size);
  std::vector<VideoSample> fin_train =
      load_samples(fin, "train", rc.frame_size, rc.frame_size);

  Model model = make_model(FeatureKind::kFr, rc.backbone, rc.similarity, rc.seed);
  fs::create_directories(out_dir);
  std::ofstream log_os(fs::path(out_dir) / "train_log.jsonl");
  std::vector<EpochLog> logs = transfer_train_fr(
      model, pre_train, fin_train, rc.train,
      [&](const EpochLog& log, const ParamSet&) { append_epoch_log(log_os, log); });

  save_model(fs::path(out_dir) / "model.ckpt", model);
  write_run_record(out_dir, rc, "train-fr");
  std::cout << "trained " << logs.size() << " epochs; checkpoint at "
            << (fs::path(out_dir) / "model.ckpt").string() << "\n";
  return kExitOk;
}

inline int cmd_train_nr(const std::vector<std::string>& dataset_paths,
                        const std::string& target_id, const CommonFlags& flags,
                        const std::string& out_dir) {
  RunConfig rc = flags.resolve(FeatureKind::kNr);
  std::vector<ImdtDataset> datasets;
  for (const std::string& path : dataset_paths) {
    DatasetManifest m = load_manifest(path);
    ImdtDataset ds;
    ds.id = m.dataset_id;
    ds.train = load_samples(m, "train", rc.frame_size, rc.frame_size);
    datasets.push_back(std::move(ds));
  }

  fs::create_directories(out_dir);
  std::ofstream log_os(fs::path(out_dir) / "train_log.jsonl");
  std::vector<EpochLog> logs;
  ImdtState state = imdt_train_nr(
      datasets, target_id, rc.backbone, rc.similarity, rc.train, &logs,
      [&](const EpochLog& log, const ParamSet&) { append_epoch_log(log_os, log); });

  save_imdt(fs::path(out_dir) / "imdt.ckpt", state);
  save_model(fs::path(out_dir) / "model.ckpt",
             imdt_target_model(state, target_id));
  write_run_record(out_dir, rc, "train-nr");
  std::cout << "trained " << logs.size() << " epochs; target checkpoint at "
            << (fs::path(out_dir) / "model.ckpt").string() << "\n";
  return kExitOk;
}

inline int cmd_score(const std::string& mode, const std::string& model_path,
                     const std::string& dist_path, const std::string& ref_path,
                     const CommonFlags& flags, const std::string& out_path) {
  if (mode != "fr" && mode != "nr")
    throw UsageError("--mode must be 'fr' or 'nr'");
  if (mode == "fr" && ref_path.empty())
    throw UsageError("--ref is required when --mode fr");
  RunConfig rc =
      flags.resolve(mode == "fr" ? FeatureKind::kFr : FeatureKind::kNr);

  Model model = load_model(model_path);
  if ((mode == "fr") != (model.kind == FeatureKind::kFr))
    throw DataError("checkpoint kind does not match --mode " + mode);

  SampledClip dist =
      preprocess(decode(dist_path), rc.frame_size, rc.frame_size);
  VideoScore score;
  if (mode == "fr") {
    SampledClip ref =
        preprocess(decode(ref_path), rc.frame_size, rc.frame_size);
    score = score_video_fr(model, ref, dist);
  } else {
    score = score_video_nr(model, dist);
  }

  nlohmann::json j = {{"schema", "vqa-score/1"},
                      {"mode", mode},
                      {"video_score", score.video_score},
                      {"frame_scores", score.frame_scores}};
  std::cout << j.dump(2) << "\n";
  if (!out_path.empty()) {
    write_json_file(out_path, j);
    write_run_record(fs::path(out_path).parent_path(), rc, "score");
  }
  return kExitOk;
}

inline int cmd_eval(const std::string& model_path, const std::string& manifest_path,
                    const std::string& split, bool logistic,
                    const CommonFlags& flags, const std::string& out_path) {
  Model model = load_model(model_path);
  RunConfig rc = flags.resolve(model.kind);
  DatasetManifest manifest = load_manifest(manifest_path);
  EvalResult res =
      evaluate(model, manifest, split, rc.frame_size, logistic, rc.jobs);

  const fs::path report_path(out_path);
  write_json_file(report_path, eval_report_json(res));
  fs::path csv_path = report_path;
  csv_path.replace_extension(".csv");
  {
    std::ofstream os(csv_path);
    if (!os) throw DataError("cannot write '" + csv_path.string() + "'");
    write_eval_csv(os, res);
  }
  const fs::path dir = report_path.has_parent_path() ? report_path.parent_path()
                                                     : fs::path(".");
  write_run_record(dir, rc, "eval");
  std::cout << eval_report_json(res).dump(2) << "\n";
  return kExitOk;
}

inline int cmd_gen_synthetic(const CommonFlags& flags, int64_t refs,
                             int64_t levels, int64_t width, int64_t height,
                             int64_t frames, const std::string& dataset_id,
                             bool no_reference, const std::string& out_dir) {
  RunConfig rc = flags.resolve(FeatureKind::kFr);
  SyntheticOptions opt;
  opt.n_refs = refs;
  opt.levels = levels;
  opt.width = width;
  opt.height = height;
  opt.frames = frames;
  opt.seed = rc.seed;
  opt.dataset_id = dataset_id;
  opt.references_in_manifest = !no_reference;
  DatasetManifest m = generate_synthetic(out_dir, opt);
  write_run_record(out_dir, rc, "gen-synthetic");
  std::cout << "wrote " << m.records.size() << " clips and manifest.csv to "
            << out_dir << "\n";
  return kExitOk;
}

}  // namespace detail

// Entry point behind main(): builds the command tree, maps exceptions to the
// documented exit codes (1 usage, 2 data, 3 numeric).
inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{"video quality assessment toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  detail::CommonFlags flags;

  auto* preprocess = app.add_subcommand("preprocess",
                                        "sample to 1 fps, convert to RGB, resize");
  std::string pre_input, pre_out;
  preprocess->add_option("--input", pre_input, "input video (.y4m or raw+json)")
      ->required();
  preprocess->add_option("--out", pre_out, "output directory")->required();
  detail::CommonFlags pre_flags;
  pre_flags.attach(preprocess);

  auto* extract = app.add_subcommand("extract", "compute feature pyramids");
  std::string ex_frames, ex_model, ex_csv, ex_out;
  extract->add_option("--frames", ex_frames, "preprocessed frames directory")
      ->required();
  extract->add_option("--model", ex_model, "checkpoint supplying parameters");
  extract->add_option("--features-csv", ex_csv, "also write pooled features CSV");
  extract->add_option("--out", ex_out, "output directory")->required();
  detail::CommonFlags ex_flags;
  ex_flags.attach(extract, /*with_size=*/false);

  auto* train_fr = app.add_subcommand("train-fr",
                                      "pretrain + fine-tune the FR model");
  std::string tf_pre, tf_fin, tf_out;
  train_fr->add_option("--pretrain", tf_pre, "pretraining manifest")->required();
  train_fr->add_option("--finetune", tf_fin, "fine-tuning manifest")->required();
  train_fr->add_option("--out", tf_out, "output directory")->required();
  detail::CommonFlags tf_flags;
  tf_flags.attach(train_fr);

  auto* train_nr = app.add_subcommand("train-nr",
                                      "mixed-dataset training for the NR model");
  std::vector<std::string> tn_datasets;
  std::string tn_target, tn_out;
  train_nr->add_option("--datasets", tn_datasets, "dataset manifests")
      ->required()
      ->expected(-1);
  train_nr->add_option("--target", tn_target, "target dataset id")->required();
  train_nr->add_option("--out", tn_out, "output directory")->required();
  detail::CommonFlags tn_flags;
  tn_flags.attach(train_nr);

  auto* score = app.add_subcommand("score", "score one video");
  std::string sc_mode, sc_model, sc_dist, sc_ref, sc_out;
  score->add_option("--mode", sc_mode, "fr or nr")->required();
  score->add_option("--model", sc_model, "model checkpoint")->required();
  score->add_option("--dist", sc_dist, "distorted video")->required();
  score->add_option("--ref", sc_ref, "reference video (fr mode)");
  score->add_option("--out", sc_out, "also write the score JSON here");
  detail::CommonFlags sc_flags;
  sc_flags.attach(score);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string ev_model, ev_manifest, ev_split = "val", ev_out = "report.json";
  bool ev_logistic = false;
  eval_cmd->add_option("--model", ev_model, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", ev_manifest, "dataset manifest")->required();
  eval_cmd->add_option("--split", ev_split, "split name (train|val)");
  eval_cmd->add_option("--out", ev_out, "report path");
  eval_cmd->add_flag("--logistic", ev_logistic,
                     "fit a 4-parameter logistic remap before PLCC/RMSE");
  detail::CommonFlags ev_flags;
  ev_flags.attach(eval_cmd);

  auto* gen = app.add_subcommand("gen-synthetic",
                                 "generate a synthetic distortion dataset");
  int64_t gs_refs = 5, gs_levels = 4, gs_width = 64, gs_height = 64,
          gs_frames = 24;
  std::string gs_id = "synthetic", gs_out;
  bool gs_nr = false;
  gen->add_option("--refs", gs_refs, "number of reference clips");
  gen->add_option("--levels", gs_levels, "distortion severity levels");
  gen->add_option("--width", gs_width, "clip width");
  gen->add_option("--height", gs_height, "clip height");
  gen->add_option("--frames", gs_frames, "frames per clip");
  gen->add_option("--dataset-id", gs_id, "dataset id in the manifest");
  gen->add_flag("--nr", gs_nr, "emit a no-reference manifest");
  gen->add_option("--out", gs_out, "output directory")->required();
  detail::CommonFlags gs_flags;
  gs_flags.attach(gen, /*with_size=*/false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (preprocess->parsed())
      return detail::cmd_preprocess(pre_input, pre_flags, pre_out);
    if (extract->parsed())
      return detail::cmd_extract(ex_frames, ex_flags, ex_model, ex_csv, ex_out);
    if (train_fr->parsed())
      return detail::cmd_train_fr(tf_pre, tf_fin, tf_flags, tf_out);
    if (train_nr->parsed())
      return detail::cmd_train_nr(tn_datasets, tn_target, tn_flags, tn_out);
    if (score->parsed())
      return detail::cmd_score(sc_mode, sc_model, sc_dist, sc_ref, sc_flags,
                               sc_out);
    if (eval_cmd->parsed())
      return detail::cmd_eval(ev_model, ev_manifest, ev_split, ev_logistic,
                              ev_flags, ev_out);
    if (gen->parsed())
      return detail::cmd_gen_synthetic(gs_flags, gs_refs, gs_levels, gs_width,
                                       gs_height, gs_frames, gs_id, gs_nr,
                                       gs_out);
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace vqa::cli
