#pragma once

#include <string>

#include <png.h>

#include "lcgan/data.hpp"
#include "lcgan/error.hpp"
#include "lcgan/taxonomy.hpp"
#include "lcgan/tensor.hpp"

namespace lcgan {

inline void write_png(const std::string& path, const RgbImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.w);
  image.height = static_cast<png_uint_32>(img.h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write " + path + ": " + msg);
  }
}

inline RgbImage read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read " + path + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage img(static_cast<int>(image.height), static_cast<int>(image.width));
  if (!png_image_finish_read(&image, nullptr, img.rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode " + path + ": " + msg);
  }
  return img;
}

/// Grouped bar chart of class fractions: one group per class, one bar per
/// split (train, validation, test), bars tinted with the class color.
inline RgbImage distribution_chart(const DistributionReport& report, const ClassTaxonomy& taxonomy,
                                   int height = 240) {
  const int bar = 14;
  const int group_gap = 18;
  const int margin = 10;
  const int groups = kNumClasses;
  const int width = 2 * margin + groups * (3 * bar) + (groups - 1) * group_gap;
  RgbImage img(height, width, 255);
  const int base = height - margin;
  for (int x = margin; x < width - margin; ++x) img.set(base, x, {0, 0, 0});
  for (int c = 0; c < groups; ++c) {
    const Rgb col = taxonomy.class_color(c);
    for (int s = 0; s < 3; ++s) {
      auto it = report.splits.find(kAllSplits[s]);
      if (it == report.splits.end()) continue;
      const double f = it->second.fractions[c];
      const int len = static_cast<int>(f * (height - 2 * margin - 1));
      // Lighter shades for validation and test.
      const double mixin = 0.35 * s;
      const Rgb shade = {static_cast<std::uint8_t>(col[0] + (255 - col[0]) * mixin),
                         static_cast<std::uint8_t>(col[1] + (255 - col[1]) * mixin),
                         static_cast<std::uint8_t>(col[2] + (255 - col[2]) * mixin)};
      const int x0 = margin + c * (3 * bar + group_gap) + s * bar;
      for (int y = base - len; y < base; ++y) {
        for (int x = x0 + 1; x < x0 + bar - 1; ++x) img.set(y, x, shade);
      }
    }
  }
  return img;
}

}  // namespace lcgan
