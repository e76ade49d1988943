#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iil/error.hpp"
#include "iil/sampling.hpp"
#include "iil/tensor.hpp"

namespace iil {

/// Images (batch x H x W x 1, values in [0, 1]) with integer class labels.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
};

// ---------------------------------------------------------------------------
// IDX files (big-endian, as distributed with MNIST-family datasets)

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size())
    throw FormatError(path + ": truncated header at byte offset " + std::to_string(offset));
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Reads an IDX image/label pair. Pixels are scaled by 1/255.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_all(images_path);
  const auto lab = detail::read_all(labels_path);
  if (const auto m = detail::read_be32(img, 0, images_path); m != kIdxImageMagic)
    throw FormatError(images_path + ": bad image magic at byte offset 0");
  if (const auto m = detail::read_be32(lab, 0, labels_path); m != kIdxLabelMagic)
    throw FormatError(labels_path + ": bad label magic at byte offset 0");
  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t nl = detail::read_be32(lab, 4, labels_path);
  if (n != nl)
    throw FormatError("image count " + std::to_string(n) + " does not match label count " + std::to_string(nl));
  const std::size_t need = 16 + n * rows * cols;
  if (img.size() < need)
    throw FormatError(images_path + ": truncated pixel data at byte offset " + std::to_string(img.size()));
  if (lab.size() < 8 + n)
    throw FormatError(labels_path + ": truncated label data at byte offset " + std::to_string(lab.size()));
  Dataset ds{Tensor({n, rows, cols, 1}), std::vector<int>(n), 0};
  for (std::size_t i = 0; i < n * rows * cols; ++i) ds.images[i] = img[16 + i] / 255.0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    ds.num_classes = std::max(ds.num_classes, ds.labels[i] + 1);
  }
  return ds;
}

/// Writes images (rounded to bytes) and labels as an IDX pair.
inline void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  if (ds.images.rank() != 4 || ds.images.dim(3) != 1) throw ShapeError("write_idx expects N x H x W x 1 images");
  std::ofstream img(images_path, std::ios::binary), lab(labels_path, std::ios::binary);
  if (!img || !lab) throw FormatError("cannot write IDX files " + images_path + ", " + labels_path);
  detail::write_be32(img, kIdxImageMagic);
  detail::write_be32(img, static_cast<std::uint32_t>(ds.images.dim(0)));
  detail::write_be32(img, static_cast<std::uint32_t>(ds.images.dim(1)));
  detail::write_be32(img, static_cast<std::uint32_t>(ds.images.dim(2)));
  for (double v : ds.images.data()) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    img.put(static_cast<char>(b));
  }
  detail::write_be32(lab, kIdxLabelMagic);
  detail::write_be32(lab, static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) lab.put(static_cast<char>(l));
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticKind {
  Glyphs,   // bar / corner / tee / cross strokes at random orientations
  Planted,  // smooth blocky texture vs. i.i.d. texture, equal marginals
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::Glyphs;
  std::size_t count = 100;
  std::size_t image_size = 15;
  double noise = 0.15;
  std::uint64_t seed = 1;
};

inline constexpr int kGlyphClasses = 4;

namespace detail {

inline double segment_distance(double pr, double pc, double ar, double ac, double br, double bc) {
  const double dr = br - ar, dc = bc - ac;
  const double len2 = dr * dr + dc * dc;
  double t = len2 > 0.0 ? ((pr - ar) * dr + (pc - ac) * dc) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(pr - (ar + t * dr), pc - (ac + t * dc));
}

/// Arm directions (multiples of a quarter turn) per glyph class.
inline std::vector<int> glyph_arms(int cls) {
  switch (cls) {
    case 0: return {0, 2};        // bar
    case 1: return {0, 1};        // corner
    case 2: return {0, 1, 2};     // tee
    default: return {0, 1, 2, 3};  // cross
  }
}

inline void render_glyph(double* px, std::size_t size, int cls, std::mt19937_64& rng, double noise) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double half = 0.5 * static_cast<double>(size - 1);
  const double orient = 2.0 * std::numbers::pi * unit(rng);
  const double cr = half + (unit(rng) - 0.5) * 2.0;
  const double cc = half + (unit(rng) - 0.5) * 2.0;
  struct Seg {
    double ar, ac, br, bc;
  };
  std::vector<Seg> segs;
  for (int arm : glyph_arms(cls)) {
    const double len = (0.28 + 0.12 * unit(rng)) * static_cast<double>(size);
    const double a = orient + arm * std::numbers::pi / 2.0 + 0.15 * gauss(rng);
    segs.push_back({cr, cc, cr + len * std::sin(a), cc + len * std::cos(a)});
  }
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      double d = 1e9;
      for (const auto& s : segs)
        d = std::min(d, segment_distance(static_cast<double>(r), static_cast<double>(c), s.ar, s.ac, s.br, s.bc));
      const double ink = std::clamp(1.5 - d, 0.0, 1.0);
      px[r * size + c] = std::clamp(ink + noise * gauss(rng), 0.0, 1.0);
    }
}

/// Class 1: 3x3 blocks of one random level; class 0: every pixel independent.
inline void render_texture(double* px, std::size_t size, int cls, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (cls == 0) {
    for (std::size_t i = 0; i < size * size; ++i) px[i] = unit(rng);
    return;
  }
  const std::size_t blocks = (size + 2) / 3;
  std::vector<double> level(blocks * blocks);
  for (double& v : level) v = unit(rng);
  const std::size_t off_r = static_cast<std::size_t>(unit(rng) * 3.0), off_c = static_cast<std::size_t>(unit(rng) * 3.0);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c)
      px[r * size + c] = level[std::min((r + off_r) / 3, blocks - 1) * blocks + std::min((c + off_c) / 3, blocks - 1)];
}

}  // namespace detail

/// Deterministic synthetic dataset; labels are assigned round-robin so the
/// classes are balanced within one sample.
inline Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.count < 1 || spec.image_size < 3) throw ShapeError("make_synthetic: count >= 1 and image_size >= 3");
  const int classes = spec.kind == SyntheticKind::Glyphs ? kGlyphClasses : 2;
  const std::size_t s = spec.image_size;
  Dataset ds{Tensor({spec.count, s, s, 1}), std::vector<int>(spec.count), classes};
  std::mt19937_64 rng(spec.seed);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const int cls = static_cast<int>(i % static_cast<std::size_t>(classes));
    ds.labels[i] = cls;
    double* px = ds.images.raw() + i * s * s;
    if (spec.kind == SyntheticKind::Glyphs)
      detail::render_glyph(px, s, cls, rng, spec.noise);
    else
      detail::render_texture(px, s, cls, rng);
  }
  return ds;
}

inline Dataset take(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t per = ds.images.size() / std::max<std::size_t>(ds.size(), 1);
  Shape shape = ds.images.shape();
  shape[0] = indices.size();
  Dataset out{Tensor(shape), {}, ds.num_classes};
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t i = indices[j];
    if (i >= ds.size()) throw ShapeError("take: index out of range");
    std::copy_n(ds.images.raw() + i * per, per, out.images.raw() + j * per);
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

/// Stratified subset of ceil(fraction * S) items; per-class counts differ from
/// the proportional share by at most one. Deterministic under seed.
inline Dataset stratified_subset(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subset_fraction must lie in (0, 1]");
  const std::size_t total = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ds.size()) - 1e-9));
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& v : by_class) std::shuffle(v.begin(), v.end(), rng);
  // Round-robin over classes keeps every class within one of its share.
  std::vector<std::size_t> chosen;
  std::vector<std::size_t> cursor(by_class.size(), 0);
  while (chosen.size() < total) {
    bool progressed = false;
    for (std::size_t c = 0; c < by_class.size() && chosen.size() < total; ++c) {
      if (cursor[c] < by_class[c].size()) {
        chosen.push_back(by_class[c][cursor[c]++]);
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  std::sort(chosen.begin(), chosen.end());
  return take(ds, chosen);
}

/// Rotates each image by its own uniform angle in [0, 2 pi) (bilinear, clamp).
inline Tensor random_rotation(const Tensor& images, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const std::size_t nb = images.dim(0), per = images.size() / std::max<std::size_t>(nb, 1);
  Tensor out(images.shape());
  Shape one = images.shape();
  one[0] = 1;
  for (std::size_t n = 0; n < nb; ++n) {
    Tensor single(one, std::vector<double>(images.raw() + n * per, images.raw() + (n + 1) * per));
    const Tensor rotated = rotate_maps(single, angle(rng));
    std::copy_n(rotated.raw(), per, out.raw() + n * per);
  }
  return out;
}

}  // namespace iil
