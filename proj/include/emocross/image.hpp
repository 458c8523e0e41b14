#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "emocross/tensor.hpp"

namespace emocross::data {

// ---------------------------------------------------------------------------
// raw tensor image file (.rtn): 8-byte magic "EMCXRTEN", u32 version=1,
// u32 height, u32 width, u32 channels, then row-major u8 HWC payload.
// ---------------------------------------------------------------------------

inline void write_raw_image(const std::filesystem::path& path, const Tensor& chw) {
  if (chw.ndim() != 3) {
    throw DimensionError("raw image: tensor must be [C,H,W], got " +
                         shape_str(chw.shape()));
  }
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'E', 'M', 'C', 'X', 'R', 'T', 'E', 'N'});
  const auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
  };
  put_u32(1);
  put_u32(static_cast<std::uint32_t>(h));
  put_u32(static_cast<std::uint32_t>(w));
  put_u32(static_cast<std::uint32_t>(c));
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = chw(ch, y, x);
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("raw image: cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(out.data()),
           static_cast<std::streamsize>(out.size()));
}

/// Reads a .rtn file into a [C,H,W] tensor with values in [0,1].
inline Tensor read_raw_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("raw image: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 24 || std::memcmp(bytes.data(), "EMCXRTEN", 8) != 0) {
    throw DataError("raw image: " + path.string() + " has a bad header");
  }
  const auto u32 = [&](std::size_t at) -> std::uint32_t {
    return bytes[at] | (bytes[at + 1] << 8) | (bytes[at + 2] << 16) |
           (static_cast<std::uint32_t>(bytes[at + 3]) << 24);
  };
  if (u32(8) != 1) throw DataError("raw image: unsupported version");
  const std::size_t h = u32(12), w = u32(16), c = u32(20);
  if (h == 0 || w == 0 || c == 0 || bytes.size() != 24 + h * w * c) {
    throw DataError("raw image: " + path.string() + " has an inconsistent size");
  }
  Tensor t(Shape{c, h, w});
  std::size_t at = 24;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        t(ch, y, x) = static_cast<double>(bytes[at++]) / 255.0;
  return t;
}

// ---------------------------------------------------------------------------
// 24-bit uncompressed BMP reader
// ---------------------------------------------------------------------------

inline Tensor read_bmp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("bmp: cannot open " + path.string());
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(is)),
                              std::istreambuf_iterator<char>());
  if (b.size() < 54 || b[0] != 'B' || b[1] != 'M') {
    throw DataError("bmp: " + path.string() + " is not a BMP file");
  }
  const auto u32 = [&](std::size_t at) -> std::uint32_t {
    return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) |
           (static_cast<std::uint32_t>(b[at + 3]) << 24);
  };
  const auto u16 = [&](std::size_t at) -> std::uint32_t {
    return b[at] | (b[at + 1] << 8);
  };
  const std::uint32_t data_at = u32(10);
  const std::int32_t width = static_cast<std::int32_t>(u32(18));
  std::int32_t height = static_cast<std::int32_t>(u32(22));
  const bool top_down = height < 0;
  if (top_down) height = -height;
  if (u16(26) != 1 || u16(28) != 24 || u32(30) != 0) {
    throw DataError("bmp: " + path.string() + " must be 24-bit uncompressed");
  }
  if (width <= 0 || height <= 0) throw DataError("bmp: bad dimensions");
  const std::size_t row_bytes = (static_cast<std::size_t>(width) * 3 + 3) & ~std::size_t{3};
  if (data_at + row_bytes * height > b.size()) {
    throw DataError("bmp: " + path.string() + " is truncated");
  }
  Tensor t(Shape{3, static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
  for (std::int32_t y = 0; y < height; ++y) {
    const std::int32_t src_row = top_down ? y : height - 1 - y;
    const std::uint8_t* row = b.data() + data_at + row_bytes * src_row;
    for (std::int32_t x = 0; x < width; ++x) {
      t(0, y, x) = row[3 * x + 2] / 255.0;  // BGR on disk
      t(1, y, x) = row[3 * x + 1] / 255.0;
      t(2, y, x) = row[3 * x + 0] / 255.0;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// bilinear resize (half-pixel centres), no aspect-ratio preservation
// ---------------------------------------------------------------------------

inline Tensor bilinear_resize(const Tensor& chw, std::size_t out_h, std::size_t out_w) {
  if (chw.ndim() != 3) {
    throw DimensionError("resize: tensor must be [C,H,W], got " +
                         shape_str(chw.shape()));
  }
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h == out_h && w == out_w) return chw;
  Tensor out(Shape{c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    if (fy < 0.0) fy = 0.0;
    if (fy > static_cast<double>(h - 1)) fy = static_cast<double>(h - 1);
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      if (fx < 0.0) fx = 0.0;
      if (fx > static_cast<double>(w - 1)) fx = static_cast<double>(w - 1);
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = (1.0 - wx) * chw(ch, y0, x0) + wx * chw(ch, y0, x1);
        const double bot = (1.0 - wx) * chw(ch, y1, x0) + wx * chw(ch, y1, x1);
        out(ch, y, x) = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

}  // namespace emocross::data
