#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mycobow/descriptors.hpp"
#include "mycobow/error.hpp"
#include "mycobow/image.hpp"
#include "mycobow/rng.hpp"

namespace mycobow {

struct PatchSpec {
  int patch_size = 512;
  int stride = 512;
  double foreground_threshold = 0.02;  // std-dev of normalized grayscale

  void validate() const {
    if (patch_size < 32) throw usage_error("patch_size must be >= 32");
    if (stride < 1) throw usage_error("stride must be >= 1");
    if (!(foreground_threshold >= 0)) throw usage_error("foreground_threshold must be >= 0");
  }
};

struct PatchPosition {
  int row = 0;
  int col = 0;
};

struct Patch {
  std::string scan_id;
  int row = 0;
  int col = 0;
  int size = 0;
  int channels = 1;
  std::uint16_t max_value = 65535;
  std::vector<float> pixels;  // size*size*channels, interleaved, in [0,1]

  float at(int r, int c, int ch) const {
    return pixels[(static_cast<std::size_t>(r) * size + c) * channels + ch];
  }
  float gray(int r, int c) const {
    double s = 0;
    for (int ch = 0; ch < channels; ++ch) s += at(r, c, ch);
    return static_cast<float>(s / channels);
  }
};

inline std::string patch_id(const std::string& scan_id, int row, int col) {
  return scan_id + "__r" + std::to_string(row) + "__c" + std::to_string(col);
}

inline std::string patch_id(const Patch& p) { return patch_id(p.scan_id, p.row, p.col); }

/// Top-left corners of the patch grid in row-major order.
inline std::vector<PatchPosition> patch_positions(int rows, int cols, const PatchSpec& spec) {
  spec.validate();
  if (rows < spec.patch_size || cols < spec.patch_size) {
    throw data_error("image " + std::to_string(rows) + "x" + std::to_string(cols) + " is smaller than patch size " +
                     std::to_string(spec.patch_size));
  }
  std::vector<PatchPosition> out;
  for (int r = 0; r + spec.patch_size <= rows; r += spec.stride) {
    for (int c = 0; c + spec.patch_size <= cols; c += spec.stride) out.push_back({r, c});
  }
  return out;
}

inline Patch make_patch(const Image& image, const std::string& scan_id, PatchPosition pos, int size) {
  if (pos.row < 0 || pos.col < 0 || pos.row + size > image.rows || pos.col + size > image.cols) {
    throw data_error("patch at (" + std::to_string(pos.row) + "," + std::to_string(pos.col) + ") leaves scan '" +
                     scan_id + "'");
  }
  Patch p;
  p.scan_id = scan_id;
  p.row = pos.row;
  p.col = pos.col;
  p.size = size;
  p.channels = image.channels;
  p.max_value = image.max_value;
  p.pixels.resize(static_cast<std::size_t>(size) * size * image.channels);
  const float scale = 1.0f / static_cast<float>(image.max_value);
  std::size_t k = 0;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      for (int ch = 0; ch < image.channels; ++ch) {
        p.pixels[k++] = static_cast<float>(image.samples[image.index(pos.row + r, pos.col + c, ch)]) * scale;
      }
    }
  }
  return p;
}

inline std::vector<Patch> extract_patch_grid(const Image& image, const PatchSpec& spec, const std::string& scan_id) {
  std::vector<Patch> out;
  for (auto pos : patch_positions(image.rows, image.cols, spec)) {
    out.push_back(make_patch(image, scan_id, pos, spec.patch_size));
  }
  return out;
}

/// Back to raw samples at the source bit depth.
inline Image patch_to_image(const Patch& p) {
  Image img;
  img.rows = p.size;
  img.cols = p.size;
  img.channels = p.channels;
  img.max_value = p.max_value;
  img.samples.resize(p.pixels.size());
  for (std::size_t i = 0; i < p.pixels.size(); ++i) {
    img.samples[i] = static_cast<std::uint16_t>(std::lround(static_cast<double>(p.pixels[i]) * p.max_value));
  }
  return img;
}

/// Population standard deviation of the grayscale (channel-mean) intensities.
inline double grayscale_std(const Patch& patch) {
  const std::size_t n = static_cast<std::size_t>(patch.size) * patch.size;
  double mean = 0;
  for (int r = 0; r < patch.size; ++r)
    for (int c = 0; c < patch.size; ++c) mean += patch.gray(r, c);
  mean /= static_cast<double>(n);
  double var = 0;
  for (int r = 0; r < patch.size; ++r) {
    for (int c = 0; c < patch.size; ++c) {
      const double d = patch.gray(r, c) - mean;
      var += d * d;
    }
  }
  return std::sqrt(var / static_cast<double>(n));
}

inline bool is_foreground(const Patch& patch, double threshold) { return grayscale_std(patch) >= threshold; }

/// Fixed random projection used as a stand-in local descriptor.
///
/// projection(i, j) is the (i * cell^2 + j)-th draw of Rng(seed).normal(),
/// i.e. entries are generated row-major from one splitmix64 stream.
struct FilterBank {
  std::uint64_t seed = 42;
  int cell = 16;
  int dim = 64;
  Matrix projection;  // dim x cell^2
};

inline FilterBank make_filter_bank(std::uint64_t seed, int cell, int dim) {
  if (cell < 1 || dim < 1) throw usage_error("filter bank needs cell >= 1 and dim >= 1");
  FilterBank bank{seed, cell, dim, Matrix(dim, cell * cell)};
  Rng rng(seed);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < cell * cell; ++j) bank.projection(i, j) = rng.normal();
  return bank;
}

/// Tile the grayscale patch into cell x cell blocks (row-major), mean-centre
/// each flattened block, project it and apply max(0, .).
inline DescriptorSet builtin_descriptors(const Patch& patch, const FilterBank& bank) {
  if (bank.cell < 1 || patch.size % bank.cell != 0) {
    throw usage_error("patch size " + std::to_string(patch.size) + " is not divisible by cell " +
                      std::to_string(bank.cell));
  }
  const int tiles = patch.size / bank.cell;
  const int block_len = bank.cell * bank.cell;
  DescriptorSet set;
  set.source_id = patch_id(patch);
  set.grid = Grid{static_cast<std::uint32_t>(tiles), static_cast<std::uint32_t>(tiles)};
  set.descriptors.resize(static_cast<Eigen::Index>(tiles) * tiles, bank.dim);
  Vector block(block_len);
  for (int tr = 0; tr < tiles; ++tr) {
    for (int tc = 0; tc < tiles; ++tc) {
      int k = 0;
      for (int r = 0; r < bank.cell; ++r)
        for (int c = 0; c < bank.cell; ++c) block[k++] = patch.gray(tr * bank.cell + r, tc * bank.cell + c);
      block.array() -= block.mean();
      const Vector projected = (bank.projection * block).cwiseMax(0.0);
      set.descriptors.row(tr * tiles + tc) = projected.transpose().cast<float>();
    }
  }
  return set;
}

}  // namespace mycobow
