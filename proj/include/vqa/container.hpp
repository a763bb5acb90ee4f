#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vqa/errors.hpp"
#include "vqa/tensor.hpp"

namespace vqa::container {

// Versioned binary tensor container, used for checkpoints, feature pyramids
// and preprocessed frames.
//
//   bytes 0..7   magic "VQAF0001"
//   bytes 8..15  manifest length L, little-endian uint64
//   bytes 16..   manifest, UTF-8 JSON:
//                  {"meta": {...}, "tensors": [{"name","shape","dtype"}...]}
//   then         payloads in manifest order, little-endian IEEE-754 doubles
inline constexpr char kMagic[8] = {'V', 'Q', 'A', 'F', '0', '0', '0', '1'};

struct File {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline void put_u64le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t get_u64le(std::istream& is, std::size_t offset) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw ParseError("container truncated reading length field", offset);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_doubles_le(std::ostream& os, const double* p, int64_t n) {
  static_assert(sizeof(double) == 8);
  for (int64_t i = 0; i < n; ++i) {
    uint64_t bits;
    std::memcpy(&bits, &p[i], 8);
    put_u64le(os, bits);
  }
}

inline void get_doubles_le(std::istream& is, double* p, int64_t n,
                           std::size_t offset, const std::string& name) {
  std::vector<unsigned char> buf(static_cast<std::size_t>(n) * 8);
  if (!is.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size())))
    throw ParseError("container truncated in payload of tensor '" + name + "'",
                     offset + static_cast<std::size_t>(is.gcount()));
  for (int64_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    for (int j = 0; j < 8; ++j)
      bits |= static_cast<uint64_t>(buf[static_cast<std::size_t>(i) * 8 + j])
              << (8 * j);
    std::memcpy(&p[i], &bits, 8);
  }
}

}  // namespace detail

inline void save(std::ostream& os, const File& file) {
  nlohmann::json manifest;
  manifest["meta"] = file.meta;
  auto& list = manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : file.tensors)
    list.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f64"}});
  const std::string m = manifest.dump();
  os.write(kMagic, 8);
  detail::put_u64le(os, m.size());
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& [name, t] : file.tensors)
    detail::put_doubles_le(os, t.data(), t.numel());
  if (!os) throw DataError("container write failed");
}

inline void save(const std::filesystem::path& path, const File& file) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  save(os, file);
}

// `require_finite` rejects any non-finite payload value, reporting the tensor
// and flat index.
inline File load(std::istream& is, bool require_finite = false) {
  char magic[8];
  if (!is.read(magic, 8))
    throw ParseError("container truncated reading magic", 0);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("bad container magic, expected VQAF0001", 0);
  uint64_t mlen = detail::get_u64le(is, 8);
  std::string m(mlen, '\0');
  if (!is.read(m.data(), static_cast<std::streamsize>(mlen)))
    throw ParseError("container truncated in manifest", 16);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("container manifest is not valid JSON: ") +
                         e.what(),
                     16);
  }

  File file;
  if (manifest.contains("meta")) file.meta = manifest["meta"];
  std::size_t offset = 16 + mlen;
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != "f64")
      throw DataError("tensor '" + name + "' has unsupported dtype " + dtype);
    Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape);
    detail::get_doubles_le(is, t.data(), t.numel(), offset, name);
    offset += static_cast<std::size_t>(t.numel()) * 8;
    if (require_finite) {
      int64_t bad = t.first_nonfinite();
      if (bad >= 0)
        throw DataError("tensor '" + name + "' has non-finite value at flat index " +
                        std::to_string(bad));
    }
    file.tensors.emplace_back(name, std::move(t));
  }
  return file;
}

inline File load(const std::filesystem::path& path, bool require_finite = false) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  return load(is, require_finite);
}

}  // namespace vqa::container
