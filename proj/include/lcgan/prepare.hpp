#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lcgan/data.hpp"
#include "lcgan/error.hpp"
#include "lcgan/taxonomy.hpp"
#include "lcgan/tile_io.hpp"

namespace lcgan {

struct PrepareOptions {
  int tile = kTileSize;
  int stride = kTileSize;
  double drop_threshold = 0.0;
};

struct PrepareResult {
  Manifest manifest;
  std::string manifest_path;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  DistributionReport distribution;
};

/// Cuts scene rasters into remapped, filtered tiles.
///
/// `scenes` lists (image, label, region, split) per scene in manifest format.
/// Scene labels are over the source legend and may be coarser than the image
/// by an integer factor; they are nearest-neighbour upsampled before cutting.
inline PrepareResult prepare_corpus(const Manifest& scenes, const ClassTaxonomy& taxonomy,
                                    const std::filesystem::path& out_dir,
                                    const PrepareOptions& opt = {}) {
  if (opt.tile < 1 || opt.stride < 1) throw ConfigError("tile and stride must be positive");
  if (!(opt.drop_threshold >= 0.0 && opt.drop_threshold <= 1.0)) {
    throw ConfigError("drop threshold must lie in [0, 1]");
  }
  if (scenes.empty()) throw Error("no tiles produced: scene list is empty");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "tiles", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "tiles").string() + ": " + ec.message());

  PrepareResult result;
  std::vector<ManifestRecord> records;
  std::vector<LabelMap> kept_labels;
  for (const auto& scene : scenes.records()) {
    const RawImage img = tile_io::read_image(scenes.resolve(scene.image));
    LabelMap raw = tile_io::read_labels(scenes.resolve(scene.label));
    if (img.c != kImageChannels) {
      throw ShapeError(scene.image + ": expected 4 bands, got " + std::to_string(img.c));
    }
    if (img.h % raw.h != 0 || img.w % raw.w != 0 || img.h / raw.h != img.w / raw.w) {
      throw ShapeError(scene.label + ": label grid is not an integer subdivision of the image");
    }
    const int factor = img.h / raw.h;
    if (factor > 1) raw = upsample_nearest(raw, factor);

    const std::string stem = std::filesystem::path(scene.image).stem().stem().string();
    for (int y0 = 0; y0 + opt.tile <= img.h; y0 += opt.stride) {
      for (int x0 = 0; x0 + opt.tile <= img.w; x0 += opt.stride) {
        LabelMap raw_tile(opt.tile, opt.tile);
        for (int y = 0; y < opt.tile; ++y) {
          for (int x = 0; x < opt.tile; ++x) raw_tile(y, x) = raw(y0 + y, x0 + x);
        }
        if (filter_tile(raw_tile, taxonomy, opt.drop_threshold) == FilterDecision::kDrop) {
          ++result.dropped;
          continue;
        }
        RawImage tile_img(kImageChannels, opt.tile, opt.tile);
        for (int c = 0; c < kImageChannels; ++c) {
          for (int y = 0; y < opt.tile; ++y) {
            for (int x = 0; x < opt.tile; ++x) tile_img.at(c, y, x) = img.at(c, y0 + y, x0 + x);
          }
        }
        LabelMap labels = remap_labels(raw_tile, taxonomy);
        const std::string name =
            "tiles/" + stem + "_" + std::to_string(y0) + "_" + std::to_string(x0);
        tile_io::write_image((out_dir / (name + ".img.lct")).string(), tile_img);
        tile_io::write_labels((out_dir / (name + ".lbl.lct")).string(), labels);
        records.push_back({name + ".img.lct", name + ".lbl.lct", scene.region, scene.split});
        kept_labels.push_back(std::move(labels));
        ++result.kept;
      }
    }
  }
  if (records.empty()) throw Error("no tiles produced from " + std::to_string(scenes.size()) + " scenes");

  result.manifest = Manifest(std::move(records), out_dir);
  result.manifest_path = (out_dir / "manifest.tsv").string();
  result.manifest.save(result.manifest_path);

  std::vector<std::pair<Split, const LabelMap*>> pairs;
  for (std::size_t i = 0; i < kept_labels.size(); ++i) {
    pairs.emplace_back(result.manifest.records()[i].split, &kept_labels[i]);
  }
  result.distribution = distribution_from_labels(pairs);
  return result;
}

}  // namespace lcgan
