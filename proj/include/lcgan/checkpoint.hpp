#pragma once

// Checkpoint container, format version 1.
//
//   "LCKP" | u32 version | u64 header length | header (JSON, UTF-8) | payload
//
// The header is self-describing: run metadata plus a "tensors" array of
// {name, dtype ("f32" | "f64"), dims, offset, count}; offsets are relative to
// the payload start. Values are stored little-endian in their native width so
// that reloading is bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcgan/error.hpp"

namespace lcgan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

class CheckpointWriter {
 public:
  nlohmann::json& header() { return header_; }

  template <typename T>
  void add(const std::string& name, const std::vector<int>& dims, std::span<const T> values) {
    nlohmann::json e;
    e["name"] = name;
    e["dtype"] = dtype_name<T>();
    e["dims"] = dims;
    e["offset"] = payload_.size();
    e["count"] = values.size();
    header_["tensors"].push_back(e);
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(values.data());
    payload_.insert(payload_.end(), bytes, bytes + values.size_bytes());
  }

  void write(const std::string& path) const {
    nlohmann::json h = header_;
    h["format"] = "lcgan-checkpoint";
    h["format_version"] = kCheckpointVersion;
    const std::string text = h.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write("LCKP", 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(payload_.data()),
              static_cast<std::streamsize>(payload_.size()));
    if (!out) throw IoError("checkpoint write failed for " + path);
  }

 private:
  nlohmann::json header_ = nlohmann::json::object();
  std::vector<std::uint8_t> payload_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, "LCKP", 4) != 0) throw IoError(path + ": not a checkpoint");
    if (version != kCheckpointVersion) {
      throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    payload_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (!in && !in.eof()) throw IoError(path + ": truncated checkpoint");
    try {
      header_ = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ": corrupt checkpoint header: " + e.what());
    }
    for (const auto& e : header_.value("tensors", nlohmann::json::array())) {
      index_[e.at("name").get<std::string>()] = e;
    }
  }

  const nlohmann::json& header() const { return header_; }
  const std::string& path() const { return path_; }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::string dtype(const std::string& name) const { return entry(name).at("dtype"); }

  template <typename T>
  std::vector<T> get(const std::string& name) const {
    const auto& e = entry(name);
    if (e.at("dtype").get<std::string>() != dtype_name<T>()) {
      throw IoError(path_ + ": tensor " + name + " has dtype " + e.at("dtype").get<std::string>());
    }
    const auto offset = e.at("offset").get<std::size_t>();
    const auto count = e.at("count").get<std::size_t>();
    if (offset + count * sizeof(T) > payload_.size()) {
      throw IoError(path_ + ": tensor " + name + " overruns the payload");
    }
    std::vector<T> out(count);
    std::memcpy(out.data(), payload_.data() + offset, count * sizeof(T));
    return out;
  }

 private:
  const nlohmann::json& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError(path_ + ": missing tensor " + name);
    return it->second;
  }

  std::string path_;
  nlohmann::json header_;
  std::map<std::string, nlohmann::json> index_;
  std::vector<std::uint8_t> payload_;
};

}  // namespace lcgan
