#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcgan/error.hpp"
#include "lcgan/tensor.hpp"

namespace lcgan {

inline constexpr int kNumClasses = 6;

/// Marker for a source class that is excluded from the dataset.
inline constexpr std::uint8_t kDropped = 255;

/// Canonical target classes, in report column order.
enum class LandCover : std::uint8_t {
  kOpenWater = 0,
  kDeveloped = 1,
  kForest = 2,
  kGrass = 3,
  kPasture = 4,
  kCultivated = 5,
};

using Rgb = std::array<std::uint8_t, 3>;

struct SourceClass {
  int code = 0;
  std::string name;
  std::uint8_t target = kDropped;
};

/// Target class -> render color. Must be bijective over the six classes.
class ColorMap {
 public:
  ColorMap() = default;
  explicit ColorMap(std::array<Rgb, kNumClasses> rgb) : rgb_(rgb) {
    std::set<Rgb> seen(rgb_.begin(), rgb_.end());
    if (seen.size() != rgb_.size()) throw ConfigError("colormap is not bijective");
  }

  const Rgb& color(int id) const {
    if (id < 0 || id >= kNumClasses) {
      throw std::out_of_range("class id " + std::to_string(id) + " outside 0-5");
    }
    return rgb_[id];
  }

  /// Class whose color is `c`, or -1.
  int lookup(const Rgb& c) const {
    for (int i = 0; i < kNumClasses; ++i) {
      if (rgb_[i] == c) return i;
    }
    return -1;
  }

  const std::array<Rgb, kNumClasses>& colors() const { return rgb_; }

 private:
  std::array<Rgb, kNumClasses> rgb_{};
};

/// Per-class pixel fractions of the training split.
struct ClassWeights {
  std::array<double, kNumClasses> w{};

  double operator[](int c) const { return w[c]; }

  /// Checks w_c > 0 and sum = 1 within 1e-9.
  void validate() const {
    double sum = 0.0;
    for (double v : w) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw DegenerateWeightsError("class weight must be positive, got " + std::to_string(v));
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw DegenerateWeightsError("class weights sum to " + std::to_string(sum));
    }
  }

  static ClassWeights uniform() {
    ClassWeights cw;
    cw.w.fill(1.0 / kNumClasses);
    return cw;
  }

  bool operator==(const ClassWeights&) const = default;
};

class ClassTaxonomy {
 public:
  ClassTaxonomy(std::array<std::string, kNumClasses> names, std::vector<SourceClass> legend,
                ColorMap colors)
      : names_(std::move(names)), colors_(colors) {
    for (auto& s : legend) {
      if (s.target != kDropped && s.target >= kNumClasses) {
        throw ConfigError("legend code " + std::to_string(s.code) + " maps outside 0-5");
      }
      if (!legend_.emplace(s.code, s).second) {
        throw ConfigError("duplicate legend code " + std::to_string(s.code));
      }
    }
  }

  /// Default: NLCD 2016 legend merged to the six-class schema.
  static ClassTaxonomy nlcd2016() {
    using enum LandCover;
    auto t = [](LandCover c) { return static_cast<std::uint8_t>(c); };
    std::vector<SourceClass> legend = {
        {11, "Open Water", t(kOpenWater)},
        {12, "Perennial Ice/Snow", kDropped},
        {21, "Developed, Open Space", t(kDeveloped)},
        {22, "Developed, Low Intensity", t(kDeveloped)},
        {23, "Developed, Medium Intensity", t(kDeveloped)},
        {24, "Developed, High Intensity", t(kDeveloped)},
        {31, "Barren Land", kDropped},
        {41, "Deciduous Forest", t(kForest)},
        {42, "Evergreen Forest", t(kForest)},
        {43, "Mixed Forest", t(kForest)},
        {52, "Shrub/Scrub", t(kForest)},
        {71, "Grassland/Herbaceous", t(kGrass)},
        {81, "Pasture/Hay", t(kPasture)},
        {82, "Cultivated Crops", t(kCultivated)},
        {90, "Woody Wetlands", kDropped},
        {95, "Emergent Herbaceous Wetlands", kDropped},
    };
    return ClassTaxonomy({"Open Water", "Developed", "Forest", "Grass", "Pasture", "Cultivated"},
                         std::move(legend),
                         ColorMap({Rgb{0, 0, 139}, Rgb{255, 0, 0}, Rgb{0, 100, 0},
                                   Rgb{144, 238, 144}, Rgb{0, 255, 255}, Rgb{139, 69, 19}}));
  }

  /// Target id for a source code, or kDropped. Throws LegendError for codes
  /// outside the legend.
  std::uint8_t remap_label(int code) const {
    auto it = legend_.find(code);
    if (it == legend_.end()) throw LegendError(code);
    return it->second.target;
  }

  bool is_dropped(int code) const { return remap_label(code) == kDropped; }

  std::set<int> dropped_classes() const {
    std::set<int> out;
    for (const auto& [code, s] : legend_) {
      if (s.target == kDropped) out.insert(code);
    }
    return out;
  }

  const Rgb& class_color(int id) const { return colors_.color(id); }
  const ColorMap& colormap() const { return colors_; }
  const std::string& class_name(int id) const { return names_.at(id); }
  const std::array<std::string, kNumClasses>& class_names() const { return names_; }
  const std::map<int, SourceClass>& legend() const { return legend_; }

  /// Lookup table over all u8 codes; entries outside the legend are -1.
  std::array<int, 256> remap_table() const {
    std::array<int, 256> lut;
    lut.fill(-1);
    for (const auto& [code, s] : legend_) {
      if (code >= 0 && code < 256) lut[code] = s.target;
    }
    return lut;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "lcgan-taxonomy/1";
    for (int i = 0; i < kNumClasses; ++i) {
      const Rgb& c = colors_.color(i);
      j["classes"].push_back({{"id", i}, {"name", names_[i]}, {"color", {c[0], c[1], c[2]}}});
    }
    for (const auto& [code, s] : legend_) {
      nlohmann::json e = {{"code", code}, {"name", s.name}};
      e["target"] = s.target == kDropped ? nlohmann::json(nullptr)
                                         : nlohmann::json(names_[s.target]);
      j["legend"].push_back(e);
    }
    return j;
  }

  static ClassTaxonomy from_json(const nlohmann::json& j) {
    try {
      const auto& classes = j.at("classes");
      if (classes.size() != kNumClasses) {
        throw ConfigError("taxonomy must define exactly 6 target classes, got " +
                          std::to_string(classes.size()));
      }
      std::array<std::string, kNumClasses> names;
      std::array<Rgb, kNumClasses> rgb{};
      for (const auto& c : classes) {
        const int id = c.at("id").get<int>();
        if (id < 0 || id >= kNumClasses) throw ConfigError("class id out of range");
        names[id] = c.at("name").get<std::string>();
        const auto col = c.at("color").get<std::vector<int>>();
        if (col.size() != 3) throw ConfigError("color must be an RGB triple");
        for (int k = 0; k < 3; ++k) {
          if (col[k] < 0 || col[k] > 255) throw ConfigError("color component outside 0-255");
          rgb[id][k] = static_cast<std::uint8_t>(col[k]);
        }
      }
      std::vector<SourceClass> legend;
      for (const auto& e : j.at("legend")) {
        SourceClass s;
        s.code = e.at("code").get<int>();
        s.name = e.value("name", std::string{});
        const auto& target = e.at("target");
        if (target.is_null()) {
          s.target = kDropped;
        } else {
          const auto tname = target.get<std::string>();
          auto it = std::find(names.begin(), names.end(), tname);
          if (it == names.end()) throw ConfigError("legend target '" + tname + "' is not a class");
          s.target = static_cast<std::uint8_t>(it - names.begin());
        }
        legend.push_back(std::move(s));
      }
      return ClassTaxonomy(names, std::move(legend), ColorMap(rgb));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed taxonomy: ") + e.what());
    }
  }

  static ClassTaxonomy load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open taxonomy file " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse taxonomy file " + path + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  std::array<std::string, kNumClasses> names_;
  std::map<int, SourceClass> legend_;
  ColorMap colors_;
};

/// Pixel counts per target class over a set of remapped label maps.
inline std::array<std::uint64_t, kNumClasses> class_pixel_counts(
    std::span<const LabelMap> labels) {
  std::array<std::uint64_t, kNumClasses> counts{};
  for (const auto& m : labels) {
    for (std::uint8_t v : m.v) {
      if (v >= kNumClasses) {
        throw ShapeError("label value " + std::to_string(v) + " outside 0-5");
      }
      ++counts[v];
    }
  }
  return counts;
}

inline ClassWeights weights_from_counts(const std::array<std::uint64_t, kNumClasses>& counts) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  ClassWeights cw;
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) {
      throw DegenerateWeightsError("class " + std::to_string(c) +
                                   " has no pixels; its inverse weight is undefined");
    }
    cw.w[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
  }
  return cw;
}

/// w_c = pixels of class c / total pixels.
inline ClassWeights compute_class_weights(std::span<const LabelMap> labels) {
  return weights_from_counts(class_pixel_counts(labels));
}

}  // namespace lcgan
