#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "stripnet/autograd.hpp"
#include "stripnet/tensor.hpp"
#include "stripnet/version.hpp"

namespace stripnet {

// Tensor container: magic "STNT", one version byte, four little-endian
// uint64 dims (N,C,H,W), then numel little-endian IEEE-754 doubles.
inline constexpr std::uint8_t kTensorFormatVersion = 1;

namespace detail {
inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

// Write-then-rename so readers never observe a partial file.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  static std::atomic<std::uint64_t> counter{0};
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1)) + "." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for write: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}
}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  std::string bytes;
  bytes.reserve(5 + 32 + static_cast<std::size_t>(t.numel()) * 8);
  bytes += "STNT";
  bytes.push_back(static_cast<char>(kTensorFormatVersion));
  for (int d = 0; d < 4; ++d)
    detail::put_u64_le(bytes, static_cast<std::uint64_t>(t.dims[static_cast<std::size_t>(d)]));
  for (double v : t.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    detail::put_u64_le(bytes, bits);
  }
  return bytes;
}

inline Tensor decode_tensor(const std::string& bytes, const std::string& context = "tensor data") {
  if (bytes.size() < 37 || bytes.compare(0, 4, "STNT") != 0)
    throw std::runtime_error("bad tensor file magic: " + context);
  if (static_cast<std::uint8_t>(bytes[4]) != kTensorFormatVersion)
    throw std::runtime_error("unsupported tensor file version in " + context);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 5;
  std::array<std::int64_t, 4> dims{};
  for (int d = 0; d < 4; ++d)
    dims[static_cast<std::size_t>(d)] = static_cast<std::int64_t>(detail::get_u64_le(p + 8 * d));
  for (std::int64_t d : dims)
    if (d < 1) throw std::runtime_error("non-positive tensor dim in " + context);
  Tensor t(dims[0], dims[1], dims[2], dims[3]);
  const std::size_t need = 37 + static_cast<std::size_t>(t.numel()) * 8;
  if (bytes.size() != need) throw std::runtime_error("tensor file size mismatch: " + context);
  const auto* q = reinterpret_cast<const unsigned char*>(bytes.data()) + 37;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const std::uint64_t bits = detail::get_u64_le(q + 8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    t.data[static_cast<std::size_t>(i)] = v;
  }
  return t;
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  detail::atomic_write_file(path, encode_tensor(t));
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open tensor file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes, path.string());
}

// Checkpoint: directory of tensor files plus a JSON manifest mapping
// parameter names to files and carrying caller metadata.
inline void save_checkpoint(const std::filesystem::path& dir,
                            const std::map<std::string, Tensor>& tensors,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "stripnet-checkpoint";
  manifest["format_version"] = 1;
  manifest["library_version"] = kVersion;
  manifest["layout"] = "NCHW";
  manifest["meta"] = meta;
  nlohmann::json files = nlohmann::json::object();
  int idx = 0;
  for (const auto& [name, t] : tensors) {
    const std::string file = "t" + std::to_string(idx++) + ".stnt";
    save_tensor(dir / file, t);
    files[name] = file;
  }
  manifest["tensors"] = files;
  detail::atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline void save_checkpoint(const std::filesystem::path& dir,
                            const std::vector<ag::NamedParam>& params,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  std::map<std::string, Tensor> tensors;
  for (const auto& p : params) {
    if (!tensors.emplace(p.name, p.var->value).second)
      throw std::invalid_argument("save_checkpoint: duplicate parameter name " + p.name);
  }
  save_checkpoint(dir, tensors, meta);
}

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  nlohmann::json meta;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("cannot open checkpoint manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(f);
  if (manifest.value("format", "") != "stripnet-checkpoint")
    throw std::runtime_error("not a checkpoint manifest: " + dir.string());
  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& [name, file] : manifest.at("tensors").items())
    ck.tensors.emplace(name, load_tensor(dir / file.get<std::string>()));
  return ck;
}

// Strict restore: every parameter must be present with its exact shape.
inline void load_checkpoint_into(const std::filesystem::path& dir,
                                 const std::vector<ag::NamedParam>& params) {
  const Checkpoint ck = load_checkpoint(dir);
  for (const auto& p : params) {
    const auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint " + dir.string() + " is missing tensor " + p.name);
    if (!p.var->value.same_shape(it->second))
      throw std::runtime_error("checkpoint tensor " + p.name + " has mismatched shape");
    p.var->value = it->second;
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  detail::atomic_write_file(path, text);
}

}  // namespace stripnet
