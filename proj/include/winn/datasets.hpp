#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "winn/classification.hpp"
#include "winn/io.hpp"

namespace winn {

struct DatasetSpec {
  std::string kind = "toy2d_mixture";  // toy2d_mixture | toy2d_ring | texture | folder | digits
  std::size_t count = 10000;           // toy points
  std::size_t components = 4;          // mixture modes, evenly spaced on a circle
  double radius = 0.7071067811865476;  // mixture circle / ring radius
  double std = 0.03;                   // per-coordinate noise of toy points
  std::string pattern = "weave";       // procedural texture: weave | bricks | cells
  std::string path;                    // texture source image or image folder
  std::size_t texture_size = 256;
  std::size_t crop = 64;
  std::size_t image_size = 64;         // folder images are checked against this
  std::size_t channels = 3;
  std::size_t train = 2000;            // digits
  std::size_t test = 500;
  std::size_t digit_size = 14;

  void validate() const {
    if (kind == "toy2d_mixture" || kind == "toy2d_ring") {
      if (count < 1) throw ConfigError("data.count must be >= 1");
      if (kind == "toy2d_mixture" && components < 1) throw ConfigError("data.components must be >= 1");
      if (!(radius >= 0.0)) throw ConfigError("data.radius must be >= 0");
      if (!(std >= 0.0)) throw ConfigError("data.std must be >= 0");
    } else if (kind == "texture") {
      if (crop < 1 || (path.empty() && texture_size < crop)) throw ConfigError("data.crop must fit inside the texture");
      if (path.empty() && pattern != "weave" && pattern != "bricks" && pattern != "cells")
        throw ConfigError("data.pattern must be weave, bricks or cells, got '" + pattern + "'");
    } else if (kind == "folder") {
      if (path.empty()) throw ConfigError("data.path is required for folder datasets");
      if (channels != 1 && channels != 3) throw ConfigError("data.channels must be 1 or 3");
      if (image_size < 1) throw ConfigError("data.image_size must be >= 1");
    } else if (kind == "digits") {
      if (train < 1 || test < 1) throw ConfigError("data.train and data.test must be >= 1");
      if (digit_size < 8 || digit_size % 2) throw ConfigError("data.digit_size must be even and >= 8");
    } else {
      throw ConfigError("data.kind: unknown dataset kind '" + kind + "'");
    }
  }
};

/// Positive data in [-1,1]. Finite sets are sampled uniformly with replacement; textures are
/// cropped at uniformly random positions.
struct Dataset {
  Shape sample_shape;
  Tensor train;                   // finite sets
  std::vector<int> train_labels;  // digits only
  Tensor test;
  std::vector<int> test_labels;
  Tensor source;                  // texture source image [C,S,S]
  std::size_t crop = 0;
  std::size_t classes = 0;

  bool is_texture() const { return !source.empty(); }
  std::size_t size() const { return is_texture() ? 0 : train.dim(0); }

  Tensor sample(std::size_t n, Rng& rng) const {
    if (is_texture()) return random_crops(n, rng);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = uniform_index(rng, train.dim(0));
    return gather(train, idx);
  }

  BatchSampler sampler() const {
    return [this](std::size_t n, Rng& rng) { return sample(n, rng); };
  }

  static Tensor gather(const Tensor& set, std::span<const std::size_t> idx) {
    Shape s = set.shape();
    s[0] = idx.size();
    Tensor out(s);
    const std::size_t rs = numel_of(Shape(s.begin() + 1, s.end()));
    for (std::size_t k = 0; k < idx.size(); ++k) std::copy_n(set.data() + idx[k] * rs, rs, out.data() + k * rs);
    return out;
  }

 private:
  Tensor random_crops(std::size_t n, Rng& rng) const {
    const std::size_t c = source.dim(0), h = source.dim(1), w = source.dim(2), p = crop;
    Tensor out({n, c, p, p});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y0 = uniform_index(rng, h - p + 1), x0 = uniform_index(rng, w - p + 1);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < p; ++y)
          std::copy_n(source.data() + (ch * h + y0 + y) * w + x0, p, out.data() + ((i * c + ch) * p + y) * p);
    }
    return out;
  }
};

namespace detail {

/// Divides every coordinate by the largest magnitude when it exceeds 1, so the set fits [-1,1]^d.
inline void fit_unit_box(Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  if (m > 1.0)
    for (double& v : t.values()) v /= m;
}

}  // namespace detail

/// Raw toy points (before box fitting); used for training sets and fresh held-out draws.
inline Tensor toy2d_points(const DatasetSpec& d, std::size_t n, Rng& rng) {
  Tensor t({n, 2});
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double angle;
    if (d.kind == "toy2d_mixture") {
      const std::size_t k = uniform_index(rng, d.components);
      angle = std::numbers::pi / 4.0 + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(d.components);
    } else {
      angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    }
    t[2 * i] = d.radius * std::cos(angle) + d.std * g(rng);
    t[2 * i + 1] = d.radius * std::sin(angle) + d.std * g(rng);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Procedural texture

inline Tensor procedural_texture(const std::string& pattern, std::size_t size, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::Data, 1);
  Tensor img({3, size, size});
  const double s = static_cast<double>(size);
  std::array<double, 3> base{uniform(rng, -0.6, 0.2), uniform(rng, -0.6, 0.2), uniform(rng, -0.6, 0.2)};
  std::array<double, 3> ink{uniform(rng, 0.2, 0.9), uniform(rng, 0.2, 0.9), uniform(rng, 0.2, 0.9)};
  std::vector<std::array<double, 3>> cells;
  if (pattern == "cells")
    for (int i = 0; i < 48; ++i) cells.push_back({uniform(rng, 0.0, s), uniform(rng, 0.0, s), uniform(rng, 0.0, 1.0)});
  std::normal_distribution<double> grain(0.0, 0.05);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      double v = 0.0, tint = 0.0;
      if (pattern == "weave") {
        const double u = std::sin(2.0 * std::numbers::pi * fx / 16.0), w = std::sin(2.0 * std::numbers::pi * fy / 16.0);
        const bool over = (static_cast<int>(fx / 16.0) + static_cast<int>(fy / 16.0)) % 2 == 0;
        v = over ? std::abs(u) : std::abs(w);
        tint = over ? 0.0 : 1.0;
      } else if (pattern == "bricks") {
        const int row = static_cast<int>(fy / 12.0);
        const double ox = std::fmod(fx + (row % 2 ? 12.0 : 0.0), 24.0), oy = std::fmod(fy, 12.0);
        v = (ox < 2.0 || oy < 2.0) ? 0.0 : 1.0;
        tint = static_cast<double>((row * 7 + static_cast<int>((fx + (row % 2 ? 12.0 : 0.0)) / 24.0) * 3) % 5) / 4.0;
      } else {
        double d1 = 1e9, d2 = 1e9, t1 = 0.0;
        for (const auto& c : cells) {
          double dx = std::abs(fx - c[0]), dy = std::abs(fy - c[1]);
          dx = std::min(dx, s - dx);
          dy = std::min(dy, s - dy);
          const double d = std::hypot(dx, dy);
          if (d < d1) {
            d2 = d1;
            d1 = d;
            t1 = c[2];
          } else if (d < d2) {
            d2 = d;
          }
        }
        v = std::min(1.0, (d2 - d1) / 4.0);
        tint = t1;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double mixc = base[ch] + v * (ink[ch] - base[ch]) + 0.25 * (tint - 0.5) * (ch == 1 ? -1.0 : 1.0);
        img[(ch * size + y) * size + x] = std::clamp(mixc + grain(rng), -1.0, 1.0);
      }
    }
  return img;
}

// ---------------------------------------------------------------------------
// Procedural digits: stroke glyphs in a unit box, randomly deformed and rasterized with soft edges.

namespace detail {

using Stroke = std::vector<std::array<double, 2>>;

inline std::vector<Stroke> arc(double cx, double cy, double rx, double ry, double a0, double a1, int n = 10) {
  Stroke s;
  for (int i = 0; i <= n; ++i) {
    const double a = a0 + (a1 - a0) * i / n;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return {s};
}

/// Glyph strokes in [0,1]^2, y pointing down.
inline std::vector<Stroke> glyph(int digit) {
  constexpr double pi = std::numbers::pi;
  switch (digit) {
    case 0: return arc(0.5, 0.5, 0.28, 0.4, 0, 2 * pi, 16);
    case 1: return {{{0.35, 0.25}, {0.55, 0.1}, {0.55, 0.9}}, {{0.35, 0.9}, {0.75, 0.9}}};
    case 2: {
      auto s = arc(0.5, 0.32, 0.26, 0.22, pi, 2.25 * pi, 10);
      s[0].push_back({0.22, 0.9});
      s[0].push_back({0.8, 0.9});
      return s;
    }
    case 3: {
      auto a = arc(0.48, 0.3, 0.26, 0.2, -0.9 * pi, 0.5 * pi, 10);
      auto b = arc(0.48, 0.7, 0.28, 0.2, -0.5 * pi, 0.9 * pi, 10);
      a.push_back(b[0]);
      return a;
    }
    case 4: return {{{0.65, 0.9}, {0.65, 0.1}, {0.2, 0.65}, {0.82, 0.65}}};
    case 5: {
      auto s = arc(0.48, 0.64, 0.28, 0.26, -0.6 * pi, 0.85 * pi, 12);
      s[0].insert(s[0].begin(), {{0.78, 0.1}, {0.3, 0.1}, {0.27, 0.45}});
      return s;
    }
    case 6: {
      auto s = arc(0.5, 0.66, 0.26, 0.24, 0, 2 * pi, 14);
      s.push_back({{0.72, 0.12}, {0.45, 0.2}, {0.27, 0.45}, {0.24, 0.66}});
      return s;
    }
    case 7: return {{{0.2, 0.1}, {0.8, 0.1}, {0.42, 0.9}}, {{0.35, 0.5}, {0.68, 0.5}}};
    case 8: {
      auto a = arc(0.5, 0.3, 0.22, 0.19, 0, 2 * pi, 14);
      auto b = arc(0.5, 0.7, 0.27, 0.21, 0, 2 * pi, 14);
      a.push_back(b[0]);
      return a;
    }
    default: {
      auto s = arc(0.5, 0.34, 0.26, 0.24, 0, 2 * pi, 14);
      s.push_back({{0.76, 0.34}, {0.72, 0.62}, {0.5, 0.9}});
      return s;
    }
  }
}

inline double segment_distance(double px, double py, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0.0 ? std::clamp(((px - a[0]) * vx + (py - a[1]) * vy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(px - a[0] - t * vx, py - a[1] - t * vy);
}

}  // namespace detail

/// One [1,S,S] digit image: random rotation, scale, shear, translation and stroke width; background -1.
inline Tensor render_digit(int digit, std::size_t size, Rng& rng) {
  const auto strokes = detail::glyph(digit);
  const double s = static_cast<double>(size);
  const double rot = uniform(rng, -0.25, 0.25), scale = uniform(rng, 0.75, 0.95), shear = uniform(rng, -0.25, 0.25);
  const double tx = uniform(rng, -0.08, 0.08), ty = uniform(rng, -0.08, 0.08);
  const double width = uniform(rng, 0.06, 0.11);
  const double c = std::cos(rot), sn = std::sin(rot);
  // Map glyph space to pixel space.
  std::vector<detail::Stroke> mapped;
  for (const auto& st : strokes) {
    detail::Stroke m;
    for (const auto& p : st) {
      const double gx = p[0] - 0.5 + shear * (p[1] - 0.5), gy = p[1] - 0.5;
      const double rx = c * gx - sn * gy, ry = sn * gx + c * gy;
      m.push_back({(rx * scale + 0.5 + tx) * s, (ry * scale + 0.5 + ty) * s});
    }
    mapped.push_back(std::move(m));
  }
  const double half = width * s;
  std::normal_distribution<double> noise(0.0, 0.05);
  Tensor img({1, size, size});
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double d = 1e9;
      for (const auto& st : mapped)
        for (std::size_t k = 0; k + 1 < st.size(); ++k) d = std::min(d, detail::segment_distance(px, py, st[k], st[k + 1]));
      const double ink = std::clamp(half + 0.5 - d, 0.0, 1.0);  // one-pixel soft edge
      img[y * size + x] = std::clamp(-1.0 + 2.0 * ink + noise(rng), -1.0, 1.0);
    }
  return img;
}

/// Balanced-in-expectation labeled digit set (labels uniform over 0..9).
inline Tensor digit_set(std::size_t n, std::size_t size, Rng& rng, std::vector<int>& labels) {
  Tensor out({n, 1, size, size});
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(uniform_index(rng, 10));
    const Tensor d = render_digit(labels[i], size, rng);
    std::copy_n(d.data(), d.numel(), out.data() + i * d.numel());
  }
  return out;
}

// ---------------------------------------------------------------------------

inline Dataset make_dataset(const DatasetSpec& d, std::uint64_t seed) {
  d.validate();
  Dataset ds;
  if (d.kind == "toy2d_mixture" || d.kind == "toy2d_ring") {
    Rng rng = make_rng(seed, Stream::Data);
    ds.sample_shape = {2};
    ds.train = toy2d_points(d, d.count, rng);
    detail::fit_unit_box(ds.train);
  } else if (d.kind == "texture") {
    ds.source = d.path.empty() ? procedural_texture(d.pattern, d.texture_size, seed) : read_image(d.path);
    if (ds.source.dim(1) < d.crop || ds.source.dim(2) < d.crop)
      throw ConfigError("data.crop " + std::to_string(d.crop) + " exceeds the texture size " + to_string(ds.source.shape()));
    ds.crop = d.crop;
    ds.sample_shape = {ds.source.dim(0), d.crop, d.crop};
  } else if (d.kind == "folder") {
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(d.path)) throw IoError("data.path '" + d.path + "' is not a directory");
    for (const auto& e : std::filesystem::directory_iterator(d.path)) {
      const auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".png" || ext == ".pgm")) files.push_back(e.path());
    }
    if (files.empty()) throw ConfigError("data.path '" + d.path + "' holds no .png or .pgm images");
    std::sort(files.begin(), files.end());
    ds.sample_shape = {d.channels, d.image_size, d.image_size};
    ds.train = Tensor(batch_shape(files.size(), ds.sample_shape));
    for (std::size_t i = 0; i < files.size(); ++i) {
      const Tensor img = read_image(files[i]);
      if (img.shape() != ds.sample_shape)
        throw ConfigError("image '" + files[i].string() + "' has shape " + to_string(img.shape()) + ", expected " +
                          to_string(ds.sample_shape));
      std::copy_n(img.data(), img.numel(), ds.train.data() + i * img.numel());
    }
  } else {
    Rng train_rng = make_rng(seed, Stream::Data, 2), test_rng = make_rng(seed, Stream::Data, 3);
    ds.sample_shape = {1, d.digit_size, d.digit_size};
    ds.train = digit_set(d.train, d.digit_size, train_rng, ds.train_labels);
    ds.test = digit_set(d.test, d.digit_size, test_rng, ds.test_labels);
    ds.classes = 10;
  }
  return ds;
}

}  // namespace winn
