#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcgan/error.hpp"
#include "lcgan/taxonomy.hpp"
#include "lcgan/tensor.hpp"

namespace lcgan {

/// Entry (i, j): pixels of true class i predicted as class j.
using ConfusionMatrix = std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses>;

/// Per-pixel argmax over channels of sample `n`; ties go to the lowest id.
template <typename T>
LabelMap decode(const Tensor<T>& soft, int n = 0) {
  const Shape s = soft.shape();
  if (s.c > 255) throw ShapeError("too many channels to decode");
  LabelMap out(s.h, s.w);
  const std::size_t plane = s.plane();
  const T* base = soft.sample(n);
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    T bv = base[i];
    for (int c = 1; c < s.c; ++c) {
      if (base[c * plane + i] > bv) {
        bv = base[c * plane + i];
        best = c;
      }
    }
    out.v[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

namespace detail {

inline void check_pairs(std::span<const LabelMap> pred, std::span<const LabelMap> truth) {
  if (pred.empty()) throw Error("empty prediction set");
  if (pred.size() != truth.size()) {
    throw ShapeError("prediction and ground-truth sets differ in size");
  }
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].h != truth[k].h || pred[k].w != truth[k].w) {
      throw ShapeError("prediction " + std::to_string(k) + " does not match its ground-truth shape");
    }
  }
}

inline void check_label(std::uint8_t v) {
  if (v >= kNumClasses) throw ShapeError("class id " + std::to_string(v) + " outside 0-5");
}

}  // namespace detail

inline ConfusionMatrix confusion(std::span<const LabelMap> pred, std::span<const LabelMap> truth) {
  detail::check_pairs(pred, truth);
  ConfusionMatrix m{};
  for (std::size_t k = 0; k < pred.size(); ++k) {
    for (std::size_t i = 0; i < pred[k].v.size(); ++i) {
      detail::check_label(pred[k].v[i]);
      detail::check_label(truth[k].v[i]);
      ++m[truth[k].v[i]][pred[k].v[i]];
    }
  }
  return m;
}

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;  // x100
  bool undefined = false;  // a zero denominator forced F1 = 0
};

inline ClassScore score_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  ClassScore s;
  if (tp + fp == 0 || tp + fn == 0) {
    s.undefined = true;
    if (tp + fp != 0) s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn != 0) s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return s;
  }
  s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (s.precision + s.recall == 0.0) {
    s.undefined = true;
    return s;
  }
  s.f1 = 100.0 * 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

inline std::array<ClassScore, kNumClasses> scores_from_confusion(const ConfusionMatrix& m) {
  std::array<ClassScore, kNumClasses> out;
  for (int c = 0; c < kNumClasses; ++c) {
    std::uint64_t tp = m[c][c];
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    for (int k = 0; k < kNumClasses; ++k) {
      if (k == c) continue;
      fp += m[k][c];
      fn += m[c][k];
    }
    out[c] = score_from_counts(tp, fp, fn);
  }
  return out;
}

/// Pixel-pooled per-class scores for one model on one split.
struct MetricsReport {
  std::string model;
  std::string split;
  std::array<std::string, kNumClasses> class_names{};
  std::array<ClassScore, kNumClasses> scores{};
  ConfusionMatrix confusion{};
  std::array<std::uint64_t, kNumClasses> true_pixels{};
  std::uint64_t total_pixels = 0;
  std::size_t tiles = 0;
  /// Optional: mean over tiles of per-tile F1 (x100); not the headline number.
  std::optional<std::array<double, kNumClasses>> per_tile_mean_f1;

  /// Unweighted mean of per-class F1, as a fraction in [0, 1].
  double macro_f1() const {
    double s = 0.0;
    for (const auto& c : scores) s += c.f1;
    return s / (100.0 * kNumClasses);
  }

  bool operator==(const MetricsReport& o) const {
    if (model != o.model || split != o.split || class_names != o.class_names ||
        confusion != o.confusion || true_pixels != o.true_pixels ||
        total_pixels != o.total_pixels || tiles != o.tiles ||
        per_tile_mean_f1.has_value() != o.per_tile_mean_f1.has_value()) {
      return false;
    }
    for (int c = 0; c < kNumClasses; ++c) {
      const auto& a = scores[c];
      const auto& b = o.scores[c];
      if (a.precision != b.precision || a.recall != b.recall || a.f1 != b.f1 ||
          a.undefined != b.undefined) {
        return false;
      }
    }
    return !per_tile_mean_f1 || *per_tile_mean_f1 == *o.per_tile_mean_f1;
  }
};

/// Per-class F1 from direct TP/FP/FN pixel counts pooled over the split.
inline MetricsReport f1_scores(std::span<const LabelMap> pred, std::span<const LabelMap> truth,
                               bool per_tile = false) {
  detail::check_pairs(pred, truth);
  std::array<std::uint64_t, kNumClasses> tp{}, fp{}, fn{};
  std::array<double, kNumClasses> tile_f1_sum{};
  MetricsReport r;
  r.class_names = ClassTaxonomy::nlcd2016().class_names();
  for (std::size_t k = 0; k < pred.size(); ++k) {
    std::array<std::uint64_t, kNumClasses> ttp{}, tfp{}, tfn{};
    for (std::size_t i = 0; i < pred[k].v.size(); ++i) {
      const auto p = pred[k].v[i];
      const auto t = truth[k].v[i];
      detail::check_label(p);
      detail::check_label(t);
      ++r.true_pixels[t];
      if (p == t) {
        ++ttp[t];
      } else {
        ++tfp[p];
        ++tfn[t];
      }
    }
    for (int c = 0; c < kNumClasses; ++c) {
      tp[c] += ttp[c];
      fp[c] += tfp[c];
      fn[c] += tfn[c];
      if (per_tile) tile_f1_sum[c] += score_from_counts(ttp[c], tfp[c], tfn[c]).f1;
    }
    r.total_pixels += pred[k].v.size();
  }
  for (int c = 0; c < kNumClasses; ++c) r.scores[c] = score_from_counts(tp[c], fp[c], fn[c]);
  r.confusion = confusion(pred, truth);
  r.tiles = pred.size();
  if (per_tile) {
    std::array<double, kNumClasses> mean{};
    for (int c = 0; c < kNumClasses; ++c) mean[c] = tile_f1_sum[c] / static_cast<double>(pred.size());
    r.per_tile_mean_f1 = mean;
  }
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  if (r.tiles == 0 || r.total_pixels == 0) throw Error("empty prediction set");
  nlohmann::json j;
  j["format"] = "lcgan-metrics/1";
  j["model"] = r.model;
  j["split"] = r.split;
  j["classes"] = r.class_names;
  for (const auto& s : r.scores) {
    j["f1"].push_back(s.f1);
    j["precision"].push_back(s.precision);
    j["recall"].push_back(s.recall);
    j["undefined"].push_back(s.undefined);
  }
  j["macro_f1"] = r.macro_f1();
  j["confusion"] = r.confusion;
  j["true_pixels"] = r.true_pixels;
  j["total_pixels"] = r.total_pixels;
  j["tiles"] = r.tiles;
  j["per_tile_mean_f1"] =
      r.per_tile_mean_f1 ? nlohmann::json(*r.per_tile_mean_f1) : nlohmann::json(nullptr);
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "lcgan-metrics/1") {
      throw ConfigError("unsupported metrics format");
    }
    MetricsReport r;
    r.model = j.at("model").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.class_names = j.at("classes").get<std::array<std::string, kNumClasses>>();
    for (int c = 0; c < kNumClasses; ++c) {
      r.scores[c].f1 = j.at("f1").at(c).get<double>();
      r.scores[c].precision = j.at("precision").at(c).get<double>();
      r.scores[c].recall = j.at("recall").at(c).get<double>();
      r.scores[c].undefined = j.at("undefined").at(c).get<bool>();
    }
    r.confusion = j.at("confusion").get<ConfusionMatrix>();
    r.true_pixels = j.at("true_pixels").get<std::array<std::uint64_t, kNumClasses>>();
    r.total_pixels = j.at("total_pixels").get<std::uint64_t>();
    r.tiles = j.at("tiles").get<std::size_t>();
    if (!j.at("per_tile_mean_f1").is_null()) {
      r.per_tile_mean_f1 = j.at("per_tile_mean_f1").get<std::array<double, kNumClasses>>();
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed metrics report: ") + e.what());
  }
}

/// Plain-text comparison table: one row per report, classes in canonical order.
inline std::string comparison_table(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw Error("empty prediction set");
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s%-14s", "Set", "Architecture");
  os << buf;
  for (const auto& n : reports.front().class_names) {
    std::snprintf(buf, sizeof buf, "%12s", n.c_str());
    os << buf;
  }
  os << '\n';
  for (const auto& r : reports) {
    if (r.tiles == 0) throw Error("empty prediction set");
    std::snprintf(buf, sizeof buf, "%-12s%-14s", r.split.c_str(), r.model.c_str());
    os << buf;
    for (const auto& s : r.scores) {
      std::snprintf(buf, sizeof buf, "%11.3f%s", s.f1, s.undefined ? "*" : " ");
      os << buf;
    }
    os << '\n';
  }
  bool flagged = false;
  for (const auto& r : reports) {
    for (const auto& s : r.scores) flagged |= s.undefined;
  }
  if (flagged) os << "* F1 undefined (zero denominator), reported as 0\n";
  return os.str();
}

/// Machine-readable report plus the text table.
inline std::string report_emit(const MetricsReport& r) {
  nlohmann::json j = to_json(r);
  j["table"] = comparison_table(std::span<const MetricsReport>(&r, 1));
  return j.dump(2);
}

inline MetricsReport report_parse(const std::string& text) {
  try {
    return report_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("cannot parse metrics report: ") + e.what());
  }
}

inline RgbImage render(const LabelMap& map, const ColorMap& colors) {
  RgbImage img(map.h, map.w);
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      const int id = map(y, x);
      if (id >= kNumClasses) throw Error("no colormap entry for class " + std::to_string(id));
      img.set(y, x, colors.color(id));
    }
  }
  return img;
}

/// Recovers a class map from a rendered image.
inline LabelMap inverse_render(const RgbImage& img, const ColorMap& colors) {
  LabelMap out(img.h, img.w);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const int id = colors.lookup(img.pixel(y, x));
      if (id < 0) throw Error("pixel color is not in the colormap");
      out(y, x) = static_cast<std::uint8_t>(id);
    }
  }
  return out;
}

/// True-color (bands 0-2) or single-band grey rendering with a linear stretch.
inline RgbImage raw_panel(const RawImage& raw, bool nir, double full_scale = 4000.0) {
  RgbImage img(raw.h, raw.w);
  auto to_byte = [full_scale](std::uint16_t v) {
    return static_cast<std::uint8_t>(std::clamp(v / full_scale * 255.0, 0.0, 255.0));
  };
  for (int y = 0; y < raw.h; ++y) {
    for (int x = 0; x < raw.w; ++x) {
      if (nir) {
        const auto g = to_byte(raw.at(std::min(3, raw.c - 1), y, x));
        img.set(y, x, {g, g, g});
      } else {
        img.set(y, x, {to_byte(raw.at(0, y, x)), to_byte(raw.at(1, y, x)), to_byte(raw.at(2, y, x))});
      }
    }
  }
  return img;
}

/// Panels side by side, separated by a white gutter.
inline RgbImage composite(std::span<const RgbImage> panels, int gutter = 4) {
  if (panels.empty()) throw Error("no panels to compose");
  int h = 0;
  int w = 0;
  for (const auto& p : panels) {
    h = std::max(h, p.h);
    w += p.w;
  }
  w += gutter * static_cast<int>(panels.size() - 1);
  RgbImage out(h, w, 255);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < p.h; ++y) {
      for (int x = 0; x < p.w; ++x) out.set(y, x0 + x, p.pixel(y, x));
    }
    x0 += p.w + gutter;
  }
  return out;
}

}  // namespace lcgan
