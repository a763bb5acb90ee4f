#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqa/backbone.hpp"
#include "vqa/errors.hpp"
#include "vqa/features.hpp"
#include "vqa/parallel.hpp"
#include "vqa/training.hpp"
#include "vqa/version.hpp"

namespace vqa {

// ---------------------------------------------------------------------------
// Config files: a small TOML-style subset — [section] headers; key = value
// with integers, floats, booleans, quoted strings, and integer arrays;
// '#' comments. Unknown keys are rejected when merged, not here.

struct ConfigDoc {
  nlohmann::json sections = nlohmann::json::object();
};

namespace detail {

inline std::string strip(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline nlohmann::json parse_config_value(const std::string& raw, int line_no) {
  const std::string v = strip(raw);
  if (v.empty()) throw ParseError("config line " + std::to_string(line_no) +
                                  ": missing value", 0);
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"')
      throw ParseError("config line " + std::to_string(line_no) +
                       ": unterminated string", 0);
    return v.substr(1, v.size() - 2);
  }
  if (v.front() == '[') {
    if (v.back() != ']')
      throw ParseError("config line " + std::to_string(line_no) +
                       ": unterminated array", 0);
    nlohmann::json arr = nlohmann::json::array();
    std::string inner = v.substr(1, v.size() - 2);
    std::stringstream ss(inner);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = strip(item);
      if (item.empty()) continue;
      try {
        std::size_t used = 0;
        arr.push_back(static_cast<int64_t>(std::stoll(item, &used)));
        if (used != item.size()) throw std::invalid_argument("trailing");
      } catch (const std::logic_error&) {
        throw ParseError("config line " + std::to_string(line_no) +
                         ": array element '" + item + "' is not an integer", 0);
      }
    }
    return arr;
  }
  try {
    std::size_t used = 0;
    if (v.find_first_of(".eE") == std::string::npos) {
      const int64_t i = std::stoll(v, &used);
      if (used == v.size()) return i;
    }
    used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ParseError("config line " + std::to_string(line_no) +
                   ": cannot parse value '" + v + "'", 0);
}

}  // namespace detail

inline ConfigDoc parse_config_text(const std::string& text) {
  ConfigDoc doc;
  std::string section;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::strip(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError("config line " + std::to_string(line_no) +
                         ": malformed section header", 0);
      section = detail::strip(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ParseError("config line " + std::to_string(line_no) +
                         ": empty section name", 0);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(line_no) +
                       ": expected key = value", 0);
    const std::string key = detail::strip(line.substr(0, eq));
    if (key.empty())
      throw ParseError("config line " + std::to_string(line_no) +
                       ": empty key", 0);
    if (section.empty())
      throw ParseError("config line " + std::to_string(line_no) +
                       ": key '" + key + "' outside any [section]", 0);
    doc.sections[section][key] =
        detail::parse_config_value(line.substr(eq + 1), line_no);
  }
  return doc;
}

inline ConfigDoc load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// RunConfig: defaults <- config file <- command-line flags, with per-field
// provenance recorded for the reproducibility record.

struct RunConfig {
  FeatureKind kind = FeatureKind::kFr;
  BackboneConfig backbone;
  SimilarityConfig similarity;
  TrainConfig train;
  int64_t frame_size = 384;
  int64_t jobs = default_jobs();
  uint64_t seed = 1;
  std::map<std::string, std::string> provenance;

  RunConfig() {
    for (const char* key :
         {"run.kind", "run.seed", "run.frame_size", "run.jobs",
          "backbone.stage_count", "backbone.channels_per_stage",
          "backbone.stride_per_stage", "backbone.kernel_size", "similarity.c1",
          "similarity.c2", "train.learning_rate", "train.batch_size",
          "train.epochs", "train.pretrain_epochs", "train.finetune_epochs",
          "train.e_min", "train.loops", "train.imdt_finetune_epochs",
          "train.freeze_shared_in_finetune"})
      provenance[key] = "default";
  }

  void note(const std::string& key, const std::string& source) {
    provenance[key] = source;
  }
};

namespace detail {

template <typename T>
T config_get(const nlohmann::json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("config key '" + key + "' has the wrong type");
  }
}

}  // namespace detail

// Applies one section/key from a config file; unknown keys are an error so
// typos never silently fall back to defaults.
inline void apply_config_entry(RunConfig& rc, const std::string& section,
                               const std::string& key, const nlohmann::json& v,
                               const std::string& source) {
  const std::string path = section + "." + key;
  if (section == "run") {
    if (key == "kind") {
      const std::string s = detail::config_get<std::string>(v, path);
      if (s == "fr") rc.kind = FeatureKind::kFr;
      else if (s == "nr") rc.kind = FeatureKind::kNr;
      else throw DataError("config run.kind must be 'fr' or 'nr'");
    } else if (key == "seed") {
      rc.seed = static_cast<uint64_t>(detail::config_get<int64_t>(v, path));
    } else if (key == "frame_size") {
      rc.frame_size = detail::config_get<int64_t>(v, path);
    } else if (key == "jobs") {
      rc.jobs = detail::config_get<int64_t>(v, path);
    } else {
      throw DataError("unknown config key '" + path + "'");
    }
  } else if (section == "backbone") {
    if (key == "stage_count")
      rc.backbone.stage_count = detail::config_get<int64_t>(v, path);
    else if (key == "channels_per_stage")
      rc.backbone.channels_per_stage =
          detail::config_get<std::vector<int64_t>>(v, path);
    else if (key == "stride_per_stage")
      rc.backbone.stride_per_stage =
          detail::config_get<std::vector<int64_t>>(v, path);
    else if (key == "kernel_size")
      rc.backbone.kernel_size = detail::config_get<int64_t>(v, path);
    else
      throw DataError("unknown config key '" + path + "'");
  } else if (section == "similarity") {
    if (key == "c1") rc.similarity.c1 = detail::config_get<double>(v, path);
    else if (key == "c2") rc.similarity.c2 = detail::config_get<double>(v, path);
    else throw DataError("unknown config key '" + path + "'");
  } else if (section == "train") {
    if (key == "learning_rate")
      rc.train.learning_rate = detail::config_get<double>(v, path);
    else if (key == "batch_size")
      rc.train.batch_size = detail::config_get<int64_t>(v, path);
    else if (key == "epochs")
      rc.train.epochs = detail::config_get<int64_t>(v, path);
    else if (key == "pretrain_epochs")
      rc.train.pretrain_epochs = detail::config_get<int64_t>(v, path);
    else if (key == "finetune_epochs")
      rc.train.finetune_epochs = detail::config_get<int64_t>(v, path);
    else if (key == "e_min")
      rc.train.e_min = detail::config_get<int64_t>(v, path);
    else if (key == "loops")
      rc.train.loops = detail::config_get<int64_t>(v, path);
    else if (key == "imdt_finetune_epochs")
      rc.train.imdt_finetune_epochs = detail::config_get<int64_t>(v, path);
    else if (key == "freeze_shared_in_finetune")
      rc.train.freeze_shared_in_finetune = detail::config_get<bool>(v, path);
    else
      throw DataError("unknown config key '" + path + "'");
  } else {
    throw DataError("unknown config section '" + section + "'");
  }
  rc.note(path, source);
}

inline void apply_config_file(RunConfig& rc, const ConfigDoc& doc) {
  for (const auto& [section, entries] : doc.sections.items())
    for (const auto& [key, value] : entries.items())
      apply_config_entry(rc, section, key, value, "file");
}

inline nlohmann::json run_config_json(const RunConfig& rc) {
  nlohmann::json j;
  j["run"] = {{"kind", rc.kind == FeatureKind::kFr ? "fr" : "nr"},
              {"seed", rc.seed},
              {"frame_size", rc.frame_size},
              {"jobs", rc.jobs}};
  j["backbone"] = rc.backbone.to_json();
  j["similarity"] = rc.similarity.to_json();
  j["train"] = {{"learning_rate", rc.train.learning_rate},
                {"batch_size", rc.train.batch_size},
                {"epochs", rc.train.epochs},
                {"pretrain_epochs", rc.train.pretrain_epochs},
                {"finetune_epochs", rc.train.finetune_epochs},
                {"e_min", rc.train.e_min},
                {"loops", rc.train.loops},
                {"imdt_finetune_epochs", rc.train.imdt_finetune_epochs},
                {"freeze_shared_in_finetune", rc.train.freeze_shared_in_finetune}};
  j["provenance"] = rc.provenance;
  return j;
}

// Reproducibility record written next to every command's outputs. Two runs
// with identical records produce bit-identical outputs.
inline void write_run_record(const std::filesystem::path& dir,
                             const RunConfig& rc, const std::string& command) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["schema"] = "vqa-run-record/1";
  j["version"] = kVersion;
  j["command"] = command;
  j["config"] = run_config_json(rc);
  std::ofstream os(dir / "run_record.json");
  if (!os) throw DataError("cannot write run record in '" + dir.string() + "'");
  os << j.dump(2) << "\n";
}

}  // namespace vqa
