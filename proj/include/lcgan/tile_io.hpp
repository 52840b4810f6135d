#pragma once

// LCT1 tile container.
//
//   offset  size  field
//   0       4     magic "LCT1"
//   4       2     height   (u16, little-endian)
//   6       2     width    (u16)
//   8       2     channels (u16)
//   10      2     dtype    (u16: 1 = u8, 2 = u16)
//   12      4     reserved, zero
//   16      ...   payload, row-major, channel-interleaved (y, x, c), little-endian

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lcgan/error.hpp"
#include "lcgan/tensor.hpp"

namespace lcgan::tile_io {

inline constexpr char kMagic[4] = {'L', 'C', 'T', '1'};
inline constexpr std::size_t kHeaderSize = 16;

enum class DType : std::uint16_t { kU8 = 1, kU16 = 2 };

struct Header {
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint16_t channels = 0;
  DType dtype = DType::kU8;

  std::size_t payload_bytes() const {
    return static_cast<std::size_t>(height) * width * channels * (dtype == DType::kU16 ? 2 : 1);
  }
};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::size_t at, std::uint16_t v) {
  b[at] = static_cast<std::uint8_t>(v & 0xff);
  b[at + 1] = static_cast<std::uint8_t>(v >> 8);
}

inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint16_t checked_dim(int v, const char* what) {
  if (v <= 0 || v > 0xffff) throw ShapeError(std::string("tile ") + what + " out of range");
  return static_cast<std::uint16_t>(v);
}

inline std::vector<std::uint8_t> header_bytes(const Header& h) {
  std::vector<std::uint8_t> b(kHeaderSize + h.payload_bytes(), 0);
  std::memcpy(b.data(), kMagic, 4);
  put_u16(b, 4, h.height);
  put_u16(b, 6, h.width);
  put_u16(b, 8, h.channels);
  put_u16(b, 10, static_cast<std::uint16_t>(h.dtype));
  return b;
}

}  // namespace detail

inline Header parse_header(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError(origin + ": not an LCT1 tile container");
  }
  Header h;
  h.height = detail::get_u16(bytes.data() + 4);
  h.width = detail::get_u16(bytes.data() + 6);
  h.channels = detail::get_u16(bytes.data() + 8);
  const auto tag = detail::get_u16(bytes.data() + 10);
  if (tag != 1 && tag != 2) throw IoError(origin + ": unknown dtype tag " + std::to_string(tag));
  h.dtype = static_cast<DType>(tag);
  if (bytes.size() != kHeaderSize + h.payload_bytes()) {
    throw IoError(origin + ": payload size does not match header");
  }
  return h;
}

inline std::vector<std::uint8_t> encode(const RawImage& img) {
  Header h{detail::checked_dim(img.h, "height"), detail::checked_dim(img.w, "width"),
           detail::checked_dim(img.c, "channels"), DType::kU16};
  auto b = detail::header_bytes(h);
  std::size_t at = kHeaderSize;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int c = 0; c < img.c; ++c) {
        detail::put_u16(b, at, img.at(c, y, x));
        at += 2;
      }
    }
  }
  return b;
}

inline std::vector<std::uint8_t> encode(const LabelMap& m) {
  Header h{detail::checked_dim(m.h, "height"), detail::checked_dim(m.w, "width"), 1, DType::kU8};
  auto b = detail::header_bytes(h);
  std::memcpy(b.data() + kHeaderSize, m.v.data(), m.v.size());
  return b;
}

inline RawImage decode_image(const std::vector<std::uint8_t>& bytes,
                             const std::string& origin = "<memory>") {
  const Header h = parse_header(bytes, origin);
  if (h.dtype != DType::kU16) throw IoError(origin + ": image tiles must be u16");
  RawImage img(h.channels, h.height, h.width);
  const std::uint8_t* p = bytes.data() + kHeaderSize;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int c = 0; c < img.c; ++c) {
        img.at(c, y, x) = detail::get_u16(p);
        p += 2;
      }
    }
  }
  return img;
}

inline LabelMap decode_labels(const std::vector<std::uint8_t>& bytes,
                              const std::string& origin = "<memory>") {
  const Header h = parse_header(bytes, origin);
  if (h.dtype != DType::kU8 || h.channels != 1) {
    throw IoError(origin + ": label tiles must be single-channel u8");
  }
  LabelMap m(h.height, h.width);
  std::memcpy(m.v.data(), bytes.data() + kHeaderSize, m.v.size());
  return m;
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

inline RawImage read_image(const std::string& path) { return decode_image(read_bytes(path), path); }
inline LabelMap read_labels(const std::string& path) {
  return decode_labels(read_bytes(path), path);
}
inline void write_image(const std::string& path, const RawImage& img) {
  write_bytes(path, encode(img));
}
inline void write_labels(const std::string& path, const LabelMap& m) {
  write_bytes(path, encode(m));
}

}  // namespace lcgan::tile_io
