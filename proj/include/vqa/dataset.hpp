#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vqa/errors.hpp"
#include "vqa/rng.hpp"
#include "vqa/videoio.hpp"

namespace vqa {

struct ManifestRecord {
  std::string dataset_id;
  std::string video;
  std::string reference;  // empty -> no-reference record
  double mos = 0.0;
  std::string split;  // "train" | "val"
};

struct DatasetManifest {
  std::string dataset_id;
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;  // directory of the manifest file

  bool is_fr() const {
    return !records.empty() && !records.front().reference.empty();
  }

  std::filesystem::path resolve(const std::string& rel) const {
    std::filesystem::path p(rel);
    return p.is_absolute() ? p : base_dir / p;
  }

  std::vector<const ManifestRecord*> split(const std::string& which) const {
    std::vector<const ManifestRecord*> out;
    for (const ManifestRecord& r : records)
      if (r.split == which) out.push_back(&r);
    return out;
  }

  void validate() const {
    if (records.empty()) throw DataError("manifest has no records");
    std::map<std::string, int> seen;
    bool any_ref = false, any_noref = false;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const ManifestRecord& r = records[i];
      if (r.dataset_id != dataset_id)
        throw DataError("manifest row " + std::to_string(i + 2) +
                        ": dataset_id '" + r.dataset_id +
                        "' differs from '" + dataset_id + "'");
      if (!std::isfinite(r.mos))
        throw DataError("manifest row " + std::to_string(i + 2) +
                        ": mos is not finite");
      if (r.split != "train" && r.split != "val")
        throw DataError("manifest row " + std::to_string(i + 2) +
                        ": unknown split '" + r.split + "'");
      if (++seen[r.video] > 1)
        throw DataError("duplicate video path '" + r.video + "'");
      (r.reference.empty() ? any_noref : any_ref) = true;
    }
    if (any_ref && any_noref)
      throw DataError(
          "manifest mixes reference and no-reference records; a full-reference "
          "manifest must carry a reference on every row");
  }
};

// ---------------------------------------------------------------------------
// CSV I/O. Schema: dataset_id,video,reference,mos,split (no quoting; paths
// must not contain commas).

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

inline const char* kManifestHeader = "dataset_id,video,reference,mos,split";

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line))
    throw DataError("manifest '" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw DataError("manifest header must be '" + std::string(kManifestHeader) +
                    "', got '" + line + "'");

  DatasetManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path()
                                      : std::filesystem::path(".");
  int64_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv_row(line);
    if (fields.size() != 5)
      throw DataError("manifest row " + std::to_string(row) + ": expected 5 "
                      "fields, got " + std::to_string(fields.size()));
    ManifestRecord r;
    r.dataset_id = fields[0];
    r.video = fields[1];
    r.reference = fields[2];
    try {
      std::size_t used = 0;
      r.mos = std::stod(fields[3], &used);
      if (used != fields[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw DataError("manifest row " + std::to_string(row) + ": mos '" +
                      fields[3] + "' is not numeric");
    }
    r.split = fields[4];
    if (m.records.empty()) m.dataset_id = r.dataset_id;
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

inline void save_manifest(const std::filesystem::path& path,
                          const DatasetManifest& m) {
  m.validate();
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << kManifestHeader << "\n";
  char buf[40];
  for (const ManifestRecord& r : m.records) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.mos);
    os << r.dataset_id << "," << r.video << "," << r.reference << "," << buf
       << "," << r.split << "\n";
  }
  if (!os) throw DataError("manifest write failed");
}

// ---------------------------------------------------------------------------
// Reference-based split: partition the distinct reference videos (seeded
// shuffle), so every distorted version of a reference lands in one split.

inline void assign_splits_by_reference(std::vector<ManifestRecord>& records,
                                       double ratio, uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0)
    throw DataError("split ratio must lie in [0, 1]");
  std::vector<std::string> refs;
  for (const ManifestRecord& r : records) {
    if (r.reference.empty())
      throw DataError("reference-based split needs a reference on every record");
    if (std::find(refs.begin(), refs.end(), r.reference) == refs.end())
      refs.push_back(r.reference);
  }
  if (refs.size() < 2)
    throw DataError("reference-based split needs at least 2 distinct references");

  Rng rng = Rng::substream(seed, "split");
  rng.shuffle(refs);
  const std::size_t n_train = std::min(
      refs.size(),
      static_cast<std::size_t>(std::floor(
          ratio * static_cast<double>(refs.size()) + 0.5)));
  std::map<std::string, std::string> assignment;
  for (std::size_t i = 0; i < refs.size(); ++i)
    assignment[refs[i]] = i < n_train ? "train" : "val";
  for (ManifestRecord& r : records) r.split = assignment[r.reference];
}

}  // namespace vqa
