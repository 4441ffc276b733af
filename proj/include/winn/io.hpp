#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "winn/tensor.hpp"

namespace winn {

static_assert(std::endian::native == std::endian::little, "raw dumps assume a little-endian host");

// ---------------------------------------------------------------------------
// Hashing and whole-file IO

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}
inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Writes via a temporary sibling and renames, so readers never see a half-written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// 8-bit quantization of the [-1,1] data range

inline std::uint8_t quantize(double v) {
  const double b = std::floor((std::clamp(v, -1.0, 1.0) + 1.0) / 2.0 * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}
inline double dequantize(std::uint8_t b) { return static_cast<double>(b) / 255.0 * 2.0 - 1.0; }

/// 8-bit raster, interleaved channels, row-major.
struct Raster {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// [C,H,W] tensor in [-1,1] to an interleaved raster.
inline Raster to_raster(const Tensor& img) {
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
    throw UsageError("image tensors must be [1|3, H, W], got " + to_string(img.shape()));
  Raster r{img.dim(2), img.dim(1), img.dim(0), {}};
  r.pixels.resize(r.width * r.height * r.channels);
  for (std::size_t c = 0; c < r.channels; ++c)
    for (std::size_t i = 0; i < r.width * r.height; ++i)
      r.pixels[i * r.channels + c] = quantize(img[c * r.width * r.height + i]);
  return r;
}

inline Tensor from_raster(const Raster& r) {
  Tensor t({r.channels, r.height, r.width});
  for (std::size_t c = 0; c < r.channels; ++c)
    for (std::size_t i = 0; i < r.width * r.height; ++i)
      t[c * r.width * r.height + i] = dequantize(r.pixels[i * r.channels + c]);
  return t;
}

// ---------------------------------------------------------------------------
// PGM (binary P5 written; P5 and ASCII P2 read; maxval 255)

inline std::string encode_pgm(const Raster& r) {
  if (r.channels != 1) throw UsageError("PGM holds one channel, got " + std::to_string(r.channels));
  std::string out = "P5\n" + std::to_string(r.width) + " " + std::to_string(r.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(r.pixels.data()), r.pixels.size());
  return out;
}

inline Raster decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 24)) throw ParseError(std::string("PGM: ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw ParseError(std::string("PGM: expected ") + what, start);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2'))
    throw ParseError("PGM: missing P5/P2 magic", 0);
  const bool binary = bytes[1] == '5';
  pos = 2;
  Raster r;
  r.channels = 1;
  r.width = number("width");
  r.height = number("height");
  const std::size_t maxval_at = pos;
  if (number("maxval") != 255) throw ParseError("PGM: only maxval 255 is supported", maxval_at);
  if (r.width == 0 || r.height == 0) throw ParseError("PGM: zero image size", maxval_at);
  const std::size_t n = r.width * r.height;
  r.pixels.resize(n);
  if (binary) {
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
      throw ParseError("PGM: expected whitespace before pixel data", pos);
    ++pos;
    if (bytes.size() - pos < n) throw ParseError("PGM: truncated pixel data", bytes.size());
    std::memcpy(r.pixels.data(), bytes.data() + pos, n);
  } else {
    for (auto& p : r.pixels) {
      const std::size_t at = pos;
      const std::size_t v = number("pixel value");
      if (v > 255) throw ParseError("PGM: pixel value above maxval", at);
      p = static_cast<std::uint8_t>(v);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// PNG (8-bit gray or RGB) through libpng

namespace detail {

struct PngReadCursor {
  const std::string* bytes;
  std::size_t pos = 0;
  std::string error;
};

inline void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->bytes->size() - cur->pos < n) {
    cur->error = "PNG: truncated file";
    cur->pos = cur->bytes->size();
    png_longjmp(png, 1);
  }
  std::memcpy(out, cur->bytes->data() + cur->pos, n);
  cur->pos += n;
}

inline void png_error_cb(png_structp png, png_const_charp msg) {
  auto* cur = static_cast<PngReadCursor*>(png_get_error_ptr(png));
  if (cur && cur->error.empty()) cur->error = std::string("PNG: ") + msg;
  png_longjmp(png, 1);
}

inline void png_warning_cb(png_structp, png_const_charp) {}

inline void png_write_cb(png_structp png, png_bytep data, png_size_t n) {
  static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), n);
}

inline void png_flush_cb(png_structp) {}

}  // namespace detail

inline std::string encode_png(const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw UsageError("PNG writer supports 1 or 3 channels");
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("PNG: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  std::vector<png_const_bytep> rows(r.height);
  for (std::size_t y = 0; y < r.height; ++y) rows[y] = r.pixels.data() + y * r.width * r.channels;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG: encoding failed");
  }
  png_set_write_fn(png, &out, detail::png_write_cb, detail::png_flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), 8,
               r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

/// Decodes gray, gray+alpha, RGB, RGBA or palette PNGs to 8-bit gray or RGB (alpha dropped).
inline Raster decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw ParseError("PNG: bad signature", 0);
  detail::PngReadCursor cur{&bytes, 0, {}};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &cur, detail::png_error_cb, detail::png_warning_cb);
  if (!png) throw IoError("PNG: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  Raster r;
  std::vector<png_bytep> rows;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(cur.error.empty() ? "PNG: decoding failed" : cur.error, cur.pos);
  }
  png_set_read_fn(png, &cur, detail::png_read_cb);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  r.width = png_get_image_width(png, info);
  r.height = png_get_image_height(png, info);
  r.channels = png_get_channels(png, info);
  r.pixels.resize(r.width * r.height * r.channels);
  rows.resize(r.height);
  for (std::size_t y = 0; y < r.height; ++y) rows[y] = r.pixels.data() + y * r.width * r.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (r.channels != 1 && r.channels != 3) throw ParseError("PNG: unsupported channel count", 0);
  return r;
}

enum class ImageFormat { Png, Pgm };

inline ImageFormat format_for(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".png") return ImageFormat::Png;
  if (ext == ".pgm") return ImageFormat::Pgm;
  throw UsageError("unknown image extension '" + ext + "' (expected .png or .pgm)");
}

inline void write_image(const Tensor& img, const std::filesystem::path& path) {
  const Raster r = to_raster(img);
  write_file_atomic(path, format_for(path) == ImageFormat::Png ? encode_png(r) : encode_pgm(r));
}

inline Tensor read_image(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return from_raster(format_for(path) == ImageFormat::Png ? decode_png(bytes) : decode_pgm(bytes));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + std::string(e.what()).substr(0, std::string(e.what()).rfind(" (at")),
                     e.offset());
  }
}

/// Tiles a batch [N,C,H,W] into one [C, rows*(H+pad)-pad, cols*(W+pad)-pad] image; padding is -1.
inline Tensor image_grid(const Tensor& batch, std::size_t cols, std::size_t pad = 1) {
  if (batch.rank() != 4 || batch.dim(0) == 0) throw UsageError("image_grid: expected a non-empty [N,C,H,W] batch");
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  cols = std::max<std::size_t>(1, std::min(cols, n));
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t gh = rows * (h + pad) - pad, gw = cols * (w + pad) - pad;
  Tensor g({c, gh, gw}, -1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t oy = (i / cols) * (h + pad), ox = (i % cols) * (w + pad);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          g[(ch * gh + oy + y) * gw + ox + x] = batch[((i * c + ch) * h + y) * w + x];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Raw 64-bit float dump: "F64 <rank> <d0> ... <dn>\n" then little-endian doubles.

inline std::string encode_f64(const Tensor& t) {
  std::string out = "F64 " + std::to_string(t.rank());
  for (auto d : t.shape()) out += " " + std::to_string(d);
  out += "\n";
  out.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(double));
  return out;
}

inline Tensor decode_f64(const std::string& bytes) {
  const std::size_t nl = bytes.find('\n');
  if (bytes.rfind("F64 ", 0) != 0 || nl == std::string::npos) throw ParseError("F64: missing header", 0);
  std::istringstream hs(bytes.substr(4, nl - 4));
  std::size_t rank = 0;
  if (!(hs >> rank) || rank == 0 || rank > 8) throw ParseError("F64: bad rank", 4);
  Shape shape(rank);
  for (auto& d : shape)
    if (!(hs >> d)) throw ParseError("F64: bad dimension list", 4);
  const std::size_t n = numel_of(shape);
  if (bytes.size() - nl - 1 != n * sizeof(double))
    throw ParseError("F64: payload holds " + std::to_string(bytes.size() - nl - 1) + " bytes, shape needs " +
                         std::to_string(n * sizeof(double)),
                     std::min(bytes.size(), nl + 1 + n * sizeof(double)));
  std::vector<double> data(n);
  std::memcpy(data.data(), bytes.data() + nl + 1, n * sizeof(double));
  return Tensor(shape, std::move(data));
}

inline void write_f64(const Tensor& t, const std::filesystem::path& path) { write_file_atomic(path, encode_f64(t)); }
inline Tensor read_f64(const std::filesystem::path& path) { return decode_f64(read_file(path)); }

}  // namespace winn
