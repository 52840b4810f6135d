#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcgan/error.hpp"
#include "lcgan/random.hpp"
#include "lcgan/taxonomy.hpp"
#include "lcgan/tensor.hpp"
#include "lcgan/tile_io.hpp"

namespace lcgan {

inline constexpr int kTileSize = 256;
inline constexpr int kImageChannels = 4;  // Red, Green, Blue, NIR
inline constexpr double kReflectanceScale = 10000.0;

enum class Split { kTrain, kValidation, kTest };

inline constexpr std::array<Split, 3> kAllSplits = {Split::kTrain, Split::kValidation,
                                                    Split::kTest};

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation") return Split::kValidation;
  if (s == "test") return Split::kTest;
  throw ManifestError("invalid split '" + std::string(s) +
                      "' (expected train, validation or test)");
}

/// One paired sample, labels already remapped to target ids.
struct Tile {
  RawImage image;
  LabelMap labels;
  std::string region;
  Split split = Split::kTrain;

  void validate() const {
    if (image.c != kImageChannels || image.h != kTileSize || image.w != kTileSize) {
      throw ShapeError("tile image must be 4x256x256, got " + std::to_string(image.c) + "x" +
                       std::to_string(image.h) + "x" + std::to_string(image.w));
    }
    if (labels.h != kTileSize || labels.w != kTileSize) {
      throw ShapeError("tile labels must be 256x256");
    }
    for (auto v : labels.v) {
      if (v >= kNumClasses) throw ShapeError("tile label outside 0-5");
    }
  }
};

struct ManifestRecord {
  std::string image;
  std::string label;
  std::string region;
  Split split = Split::kTrain;

  bool operator==(const ManifestRecord&) const = default;
};

/// Tile index. Text format, one record per line, tab separated:
///
///   # lcgan manifest v1
///   <image path>\t<label path>\t<region>\t<split>
///
/// Relative paths resolve against the manifest's directory.
class Manifest {
 public:
  Manifest() = default;
  Manifest(std::vector<ManifestRecord> records, std::filesystem::path base_dir = {})
      : records_(std::move(records)), base_dir_(std::move(base_dir)) {
    validate();
  }

  const std::vector<ManifestRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::filesystem::path& base_dir() const { return base_dir_; }

  std::string resolve(const std::string& p) const {
    std::filesystem::path path(p);
    if (path.is_absolute() || base_dir_.empty()) return path.string();
    return (base_dir_ / path).string();
  }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (records_[i].split == s) out.push_back(i);
    }
    return out;
  }

  std::set<std::string> regions(Split s) const {
    std::set<std::string> out;
    for (const auto& r : records_) {
      if (r.split == s) out.insert(r.region);
    }
    return out;
  }

  /// Regions used for fitting (train and validation).
  std::set<std::string> fit_regions() const {
    auto a = regions(Split::kTrain);
    auto b = regions(Split::kValidation);
    a.insert(b.begin(), b.end());
    return a;
  }

  /// Unique paths; no region shared between {train, validation} and test.
  void validate() const {
    std::set<std::string> images;
    std::set<std::string> labels;
    for (const auto& r : records_) {
      if (!images.insert(r.image).second) throw ManifestError("duplicate image path " + r.image);
      if (!labels.insert(r.label).second) throw ManifestError("duplicate label path " + r.label);
      if (r.region.empty()) throw ManifestError("empty region tag for " + r.image);
    }
    const auto fit = fit_regions();
    for (const auto& region : regions(Split::kTest)) {
      if (fit.count(region)) {
        throw ManifestError("region leakage: '" + region +
                            "' appears in both train/validation and test records");
      }
    }
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "# lcgan manifest v1\n";
    for (const auto& r : records_) {
      os << r.image << '\t' << r.label << '\t' << r.region << '\t' << split_name(r.split) << '\n';
    }
    return os.str();
  }

  static Manifest parse(std::string_view text, std::filesystem::path base_dir = {}) {
    std::vector<ManifestRecord> records;
    std::istringstream is{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      std::vector<std::string> fields;
      std::size_t start = 0;
      while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (fields.size() != 4) {
        throw ManifestError("manifest line " + std::to_string(lineno) + ": expected 4 fields, got " +
                            std::to_string(fields.size()));
      }
      records.push_back({fields[0], fields[1], fields[2], parse_split(fields[3])});
    }
    return Manifest(std::move(records), std::move(base_dir));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path);
    out << to_text();
  }

 private:
  std::vector<ManifestRecord> records_;
  std::filesystem::path base_dir_;
};

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return Manifest::parse(ss.str(), std::filesystem::path(path).parent_path());
}

enum class FilterDecision { kKeep, kDrop };

/// Drops a tile when its fraction of excluded-class pixels exceeds `threshold`.
inline FilterDecision filter_tile(const LabelMap& raw_labels, const ClassTaxonomy& taxonomy,
                                  double threshold = 0.0) {
  const auto lut = taxonomy.remap_table();
  std::size_t dropped = 0;
  for (auto code : raw_labels.v) {
    const int t = lut[code];
    if (t < 0) throw LegendError(code);
    if (t == kDropped) ++dropped;
  }
  if (raw_labels.v.empty()) return FilterDecision::kKeep;
  const double frac = static_cast<double>(dropped) / static_cast<double>(raw_labels.v.size());
  return frac > threshold ? FilterDecision::kDrop : FilterDecision::kKeep;
}

/// Maps source codes to target ids. Excluded-class pixels that survive
/// filtering take the tile's most frequent kept class (lowest id on ties).
inline LabelMap remap_labels(const LabelMap& raw_labels, const ClassTaxonomy& taxonomy) {
  const auto lut = taxonomy.remap_table();
  LabelMap out(raw_labels.h, raw_labels.w);
  std::array<std::size_t, kNumClasses> counts{};
  bool any_dropped = false;
  for (std::size_t i = 0; i < raw_labels.v.size(); ++i) {
    const int t = lut[raw_labels.v[i]];
    if (t < 0) throw LegendError(raw_labels.v[i]);
    out.v[i] = static_cast<std::uint8_t>(t);
    if (t == kDropped) {
      any_dropped = true;
    } else {
      ++counts[t];
    }
  }
  if (any_dropped) {
    const auto fill = static_cast<std::uint8_t>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
    if (counts[fill] == 0) throw DegenerateWeightsError("tile has no kept-class pixels");
    for (auto& v : out.v) {
      if (v == kDropped) v = fill;
    }
  }
  return out;
}

/// Nearest-neighbour upsampling by an integer factor (categorical labels).
inline LabelMap upsample_nearest(const LabelMap& m, int factor) {
  if (factor < 1) throw ShapeError("upsampling factor must be >= 1");
  LabelMap out(m.h * factor, m.w * factor);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) out(y, x) = m(y / factor, x / factor);
  }
  return out;
}

/// v -> clamp(v / 10000, 0, 1) * 2 - 1, written planar into `dst`.
template <typename T>
void normalize_into(const RawImage& raw, T* dst) {
  for (std::size_t i = 0; i < raw.v.size(); ++i) {
    const double s = std::clamp(static_cast<double>(raw.v[i]) / kReflectanceScale, 0.0, 1.0);
    dst[i] = static_cast<T>(s * 2.0 - 1.0);
  }
}

template <typename T>
Tensor<T> normalize_image(const RawImage& raw) {
  Tensor<T> out(Shape{1, raw.c, raw.h, raw.w});
  normalize_into(raw, out.data());
  return out;
}

template <typename T>
void one_hot_into(const LabelMap& labels, T* dst) {
  const std::size_t plane = labels.size();
  std::fill_n(dst, plane * kNumClasses, T{0});
  for (std::size_t i = 0; i < plane; ++i) {
    const auto v = labels.v[i];
    if (v >= kNumClasses) throw ShapeError("label value " + std::to_string(v) + " outside 0-5");
    dst[v * plane + i] = T{1};
  }
}

/// 6 x H x W binary mask, channel c set where labels == c.
template <typename T>
Tensor<T> one_hot(const LabelMap& labels) {
  Tensor<T> out(Shape{1, kNumClasses, labels.h, labels.w});
  one_hot_into(labels, out.data());
  return out;
}

struct SplitDistribution {
  std::size_t tiles = 0;
  std::uint64_t pixels = 0;
  std::array<std::uint64_t, kNumClasses> counts{};
  std::array<double, kNumClasses> fractions{};
};

/// Per-split class fractions and tile counts.
struct DistributionReport {
  std::map<Split, SplitDistribution> splits;

  nlohmann::json to_json(const ClassTaxonomy& taxonomy) const {
    nlohmann::json j;
    j["format"] = "lcgan-distribution/1";
    j["classes"] = taxonomy.class_names();
    for (const auto& [s, d] : splits) {
      nlohmann::json e;
      e["tiles"] = d.tiles;
      e["pixels"] = d.pixels;
      e["counts"] = d.counts;
      e["fractions"] = d.fractions;
      j["splits"][std::string(split_name(s))] = e;
    }
    return j;
  }

  std::string to_text(const ClassTaxonomy& taxonomy) const {
    std::ostringstream os;
    os << "split       tiles";
    for (const auto& n : taxonomy.class_names()) os << "  " << n;
    os << '\n';
    for (const auto& [s, d] : splits) {
      os << split_name(s) << std::string(12 - split_name(s).size(), ' ') << d.tiles;
      for (int c = 0; c < kNumClasses; ++c) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "  %.4f", d.fractions[c]);
        os << buf;
      }
      os << '\n';
    }
    return os.str();
  }
};

/// Builds the report from (split, remapped labels) pairs.
inline DistributionReport distribution_from_labels(
    const std::vector<std::pair<Split, const LabelMap*>>& tiles) {
  DistributionReport r;
  for (const auto& [s, m] : tiles) {
    auto& d = r.splits[s];
    ++d.tiles;
    for (auto v : m->v) {
      if (v >= kNumClasses) throw ShapeError("label value outside 0-5");
      ++d.counts[v];
    }
    d.pixels += m->v.size();
  }
  for (auto& [s, d] : r.splits) {
    for (int c = 0; c < kNumClasses; ++c) {
      d.fractions[c] = d.pixels ? static_cast<double>(d.counts[c]) / static_cast<double>(d.pixels)
                                : 0.0;
    }
  }
  return r;
}

inline DistributionReport distribution(const Manifest& manifest) {
  std::vector<LabelMap> maps;
  maps.reserve(manifest.size());
  for (const auto& r : manifest.records()) maps.push_back(tile_io::read_labels(manifest.resolve(r.label)));
  std::vector<std::pair<Split, const LabelMap*>> pairs;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    pairs.emplace_back(manifest.records()[i].split, &maps[i]);
  }
  return distribution_from_labels(pairs);
}

/// Visit order of a split for one epoch; a pure function of (seed, split, epoch).
inline std::vector<std::size_t> epoch_order(std::vector<std::size_t> indices, std::uint64_t seed,
                                            Split split, std::uint64_t epoch) {
  Rng rng(seed, std::string("shuffle/") + std::string(split_name(split)), epoch);
  rng.shuffle(indices.begin(), indices.end());
  return indices;
}

/// Normalized images, one-hot targets and class maps for a set of tiles.
template <typename T>
struct Batch {
  Tensor<T> images;   // N x 4 x 256 x 256
  Tensor<T> targets;  // N x 6 x 256 x 256
  std::vector<LabelMap> labels;
  std::vector<std::size_t> ids;  // manifest record indices
};

/// Loads tiles referenced by a manifest, keeping decoded tiles in memory.
class TileStore {
 public:
  explicit TileStore(const Manifest& manifest, bool cache = true)
      : manifest_(&manifest), cache_(cache) {}

  const Manifest& manifest() const { return *manifest_; }

  Tile load(std::size_t index) {
    if (cache_) {
      auto it = cached_.find(index);
      if (it != cached_.end()) return it->second;
    }
    const auto& rec = manifest_->records().at(index);
    Tile t;
    t.image = tile_io::read_image(manifest_->resolve(rec.image));
    t.labels = tile_io::read_labels(manifest_->resolve(rec.label));
    t.region = rec.region;
    t.split = rec.split;
    t.validate();
    if (cache_) cached_.emplace(index, t);
    return t;
  }

  template <typename T>
  Batch<T> batch(const std::vector<std::size_t>& ids) {
    const int n = static_cast<int>(ids.size());
    Batch<T> b;
    b.images = Tensor<T>(Shape{n, kImageChannels, kTileSize, kTileSize});
    b.targets = Tensor<T>(Shape{n, kNumClasses, kTileSize, kTileSize});
    b.ids = ids;
    for (int i = 0; i < n; ++i) {
      Tile t = load(ids[i]);
      normalize_into(t.image, b.images.sample(i));
      one_hot_into(t.labels, b.targets.sample(i));
      b.labels.push_back(std::move(t.labels));
    }
    return b;
  }

 private:
  const Manifest* manifest_;
  bool cache_;
  std::unordered_map<std::size_t, Tile> cached_;
};

}  // namespace lcgan
