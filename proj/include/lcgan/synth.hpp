#pragma once

// Procedural corpora for desk-scale tests: Voronoi partitions whose cells
// carry one class each, with per-class Gaussian radiometric signatures.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lcgan/data.hpp"
#include "lcgan/error.hpp"
#include "lcgan/random.hpp"
#include "lcgan/taxonomy.hpp"
#include "lcgan/tile_io.hpp"

namespace lcgan {

using Signature = std::array<double, kImageChannels>;

struct SynthParams {
  int min_seeds = 3;
  int max_seeds = 8;
  int n_validation = -1;  // -1: n_tiles / 4
  int n_test = -1;        // -1: n_tiles / 4
  std::string fit_region = "synth-fit";
  std::string test_region = "synth-holdout";

  // Per-class mean reflectance counts (R, G, B, NIR) and diagonal std devs.
  std::array<Signature, kNumClasses> means = {{
      {300, 500, 700, 200},       // open water
      {2800, 2700, 2600, 3000},   // developed
      {400, 900, 400, 4200},      // forest
      {1400, 2200, 1100, 2600},   // grass
      {1800, 1400, 2400, 1200},   // pasture
      {3600, 1800, 800, 5400},    // cultivated
  }};
  std::array<Signature, kNumClasses> stddevs = [] {
    std::array<Signature, kNumClasses> s{};
    for (auto& row : s) row.fill(150.0);
    return s;
  }();

  void validate(int tile_pixels) const {
    if (min_seeds < 1 || max_seeds < min_seeds) {
      throw ConfigError("seed count range must satisfy 1 <= min_seeds <= max_seeds");
    }
    if (max_seeds > tile_pixels) throw ConfigError("more Voronoi seeds than pixels");
    for (const auto& row : stddevs) {
      for (double s : row) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("negative or non-finite stddev");
      }
    }
    for (const auto& row : means) {
      for (double m : row) {
        if (!(m >= 0.0) || !std::isfinite(m)) throw ConfigError("negative or non-finite mean");
      }
    }
  }
};

struct SynthCorpus {
  std::vector<Tile> tiles;
  Manifest manifest;  // paths relative to the corpus directory
};

namespace detail {

struct VoronoiSite {
  int y;
  int x;
};

/// Distinct random sites; returns the index of the nearest site per pixel
/// (ties to the lower index).
inline std::vector<int> voronoi_cells(int h, int w, int n_sites, Rng& rng,
                                      std::vector<VoronoiSite>& sites) {
  sites.clear();
  std::vector<bool> taken(static_cast<std::size_t>(h) * w, false);
  while (static_cast<int>(sites.size()) < n_sites) {
    const int y = static_cast<int>(rng.below(h));
    const int x = static_cast<int>(rng.below(w));
    if (taken[static_cast<std::size_t>(y) * w + x]) continue;
    taken[static_cast<std::size_t>(y) * w + x] = true;
    sites.push_back({y, x});
  }
  std::vector<int> cell(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      long best = -1;
      int arg = 0;
      for (int s = 0; s < n_sites; ++s) {
        const long dy = y - sites[s].y;
        const long dx = x - sites[s].x;
        const long d = dy * dy + dx * dx;
        if (best < 0 || d < best) {
          best = d;
          arg = s;
        }
      }
      cell[static_cast<std::size_t>(y) * w + x] = arg;
    }
  }
  return cell;
}

inline std::uint16_t draw_count(Rng& rng, double mean, double sd) {
  const double v = std::round(rng.normal(mean, sd));
  return static_cast<std::uint16_t>(std::clamp(v, 0.0, 65535.0));
}

inline void paint_pixel(RawImage& img, int y, int x, const Signature& mean, const Signature& sd,
                        Rng& rng) {
  for (int c = 0; c < kImageChannels; ++c) img.at(c, y, x) = draw_count(rng, mean[c], sd[c]);
}

inline std::string tile_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

}  // namespace detail

/// Deterministic in `seed`. Tiles [0, n_train) are train, then validation,
/// then test; the test tiles carry a distinct region tag.
inline SynthCorpus synth_corpus(std::uint64_t seed, int n_tiles, const SynthParams& p = {}) {
  if (n_tiles < 1) throw ConfigError("n_tiles must be >= 1");
  p.validate(kTileSize * kTileSize);
  const int n_val = p.n_validation < 0 ? n_tiles / 4 : p.n_validation;
  const int n_test = p.n_test < 0 ? n_tiles / 4 : p.n_test;
  if (n_val + n_test > n_tiles) throw ConfigError("validation + test tiles exceed n_tiles");
  if (p.fit_region == p.test_region) throw ConfigError("test region must differ from fit region");
  const int n_train = n_tiles - n_val - n_test;

  SynthCorpus out;
  std::vector<ManifestRecord> records;
  for (int t = 0; t < n_tiles; ++t) {
    Rng rng(seed, "synth/tile", static_cast<std::uint64_t>(t));
    const int n_sites =
        p.min_seeds + static_cast<int>(rng.below(static_cast<std::uint64_t>(p.max_seeds - p.min_seeds + 1)));
    std::vector<detail::VoronoiSite> sites;
    const auto cell = detail::voronoi_cells(kTileSize, kTileSize, n_sites, rng, sites);

    // Site 0 cycles through the classes so every class occurs in a corpus
    // of >= 6 tiles; site 1 always differs from site 0.
    std::vector<std::uint8_t> site_class(n_sites);
    for (int s = 0; s < n_sites; ++s) {
      if (s == 0) {
        site_class[s] = static_cast<std::uint8_t>(t % kNumClasses);
      } else if (s == 1) {
        site_class[s] = static_cast<std::uint8_t>((site_class[0] + 1 + rng.below(kNumClasses - 1)) %
                                                  kNumClasses);
      } else {
        site_class[s] = static_cast<std::uint8_t>(rng.below(kNumClasses));
      }
    }

    Tile tile;
    tile.labels = LabelMap(kTileSize, kTileSize);
    tile.image = RawImage(kImageChannels, kTileSize, kTileSize);
    for (int y = 0; y < kTileSize; ++y) {
      for (int x = 0; x < kTileSize; ++x) {
        const auto cls = site_class[cell[static_cast<std::size_t>(y) * kTileSize + x]];
        tile.labels(y, x) = cls;
        detail::paint_pixel(tile.image, y, x, p.means[cls], p.stddevs[cls], rng);
      }
    }
    tile.split = t < n_train ? Split::kTrain : (t < n_train + n_val ? Split::kValidation : Split::kTest);
    tile.region = tile.split == Split::kTest ? p.test_region : p.fit_region;

    const std::string stem = "tiles/" + detail::tile_stem(t);
    records.push_back({stem + ".img.lct", stem + ".lbl.lct", tile.region, tile.split});
    out.tiles.push_back(std::move(tile));
  }
  out.manifest = Manifest(std::move(records));
  return out;
}

/// Writes tiles and `manifest.tsv` under `dir`; returns the manifest path.
inline std::string write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "tiles");
  const auto& recs = corpus.manifest.records();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    tile_io::write_image((dir / recs[i].image).string(), corpus.tiles[i].image);
    tile_io::write_labels((dir / recs[i].label).string(), corpus.tiles[i].labels);
  }
  const auto path = (dir / "manifest.tsv").string();
  corpus.manifest.save(path);
  return path;
}

struct SceneSynthParams {
  int label_size = 256;   // label raster side, in label pixels
  int label_factor = 3;   // image pixels per label pixel (30 m labels over 10 m imagery)
  int min_seeds = 24;
  int max_seeds = 48;
  double excluded_cell_probability = 0.15;
  int n_validation = -1;
  int n_test = -1;
  std::string fit_region = "scene-fit";
  std::string test_region = "scene-holdout";
  Signature excluded_mean = {2500, 2300, 2100, 2300};
  SynthParams radiometry;
};

/// Scene rasters over the taxonomy's source legend: labels at 1/label_factor
/// of the image resolution. Writes `scenes.tsv` (manifest format) under `dir`.
inline std::string write_synth_scenes(std::uint64_t seed, int n_scenes,
                                      const ClassTaxonomy& taxonomy,
                                      const std::filesystem::path& dir,
                                      const SceneSynthParams& p = {}) {
  if (n_scenes < 1) throw ConfigError("n_scenes must be >= 1");
  if (p.label_size < 1 || p.label_factor < 1) throw ConfigError("degenerate scene geometry");
  if (p.min_seeds < 1 || p.max_seeds < p.min_seeds ||
      p.max_seeds > p.label_size * p.label_size) {
    throw ConfigError("invalid seed count range");
  }
  const int n_val = p.n_validation < 0 ? n_scenes / 4 : p.n_validation;
  const int n_test = p.n_test < 0 ? n_scenes / 4 : p.n_test;
  if (n_val + n_test > n_scenes) throw ConfigError("validation + test scenes exceed n_scenes");
  const int n_train = n_scenes - n_val - n_test;

  std::array<std::vector<int>, kNumClasses> codes_for;
  std::vector<int> excluded;
  for (const auto& [code, s] : taxonomy.legend()) {
    if (code < 0 || code > 255) continue;
    if (s.target == kDropped) {
      excluded.push_back(code);
    } else {
      codes_for[s.target].push_back(code);
    }
  }
  for (const auto& v : codes_for) {
    if (v.empty()) throw ConfigError("taxonomy has a target class without source codes");
  }

  std::filesystem::create_directories(dir / "scenes");
  std::vector<ManifestRecord> records;
  const int img_size = p.label_size * p.label_factor;
  for (int s = 0; s < n_scenes; ++s) {
    Rng rng(seed, "synth/scene", static_cast<std::uint64_t>(s));
    const int n_sites =
        p.min_seeds + static_cast<int>(rng.below(static_cast<std::uint64_t>(p.max_seeds - p.min_seeds + 1)));
    std::vector<detail::VoronoiSite> sites;
    const auto cell = detail::voronoi_cells(p.label_size, p.label_size, n_sites, rng, sites);
    std::vector<int> site_code(n_sites);
    std::vector<int> site_target(n_sites);
    for (int i = 0; i < n_sites; ++i) {
      const bool exclude = !excluded.empty() && rng.uniform() < p.excluded_cell_probability;
      if (exclude) {
        site_code[i] = excluded[rng.below(excluded.size())];
        site_target[i] = -1;
      } else {
        const int cls = i < kNumClasses ? i : static_cast<int>(rng.below(kNumClasses));
        site_code[i] = codes_for[cls][rng.below(codes_for[cls].size())];
        site_target[i] = cls;
      }
    }
    LabelMap labels(p.label_size, p.label_size);
    for (std::size_t i = 0; i < labels.v.size(); ++i) {
      labels.v[i] = static_cast<std::uint8_t>(site_code[cell[i]]);
    }
    RawImage img(kImageChannels, img_size, img_size);
    for (int y = 0; y < img_size; ++y) {
      for (int x = 0; x < img_size; ++x) {
        const int site = cell[static_cast<std::size_t>(y / p.label_factor) * p.label_size +
                              x / p.label_factor];
        const int cls = site_target[site];
        if (cls < 0) {
          detail::paint_pixel(img, y, x, p.excluded_mean, p.radiometry.stddevs[0], rng);
        } else {
          detail::paint_pixel(img, y, x, p.radiometry.means[cls], p.radiometry.stddevs[cls], rng);
        }
      }
    }
    const Split split =
        s < n_train ? Split::kTrain : (s < n_train + n_val ? Split::kValidation : Split::kTest);
    const std::string stem = "scenes/scene" + detail::tile_stem(s);
    tile_io::write_image((dir / (stem + ".img.lct")).string(), img);
    tile_io::write_labels((dir / (stem + ".lbl.lct")).string(), labels);
    records.push_back({stem + ".img.lct", stem + ".lbl.lct",
                       split == Split::kTest ? p.test_region : p.fit_region, split});
  }
  const auto path = (dir / "scenes.tsv").string();
  Manifest(std::move(records)).save(path);
  return path;
}

}  // namespace lcgan
