#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "mycobow/error.hpp"
#include "mycobow/image.hpp"
#include "mycobow/manifest.hpp"
#include "mycobow/pipeline.hpp"
#include "mycobow/rng.hpp"
#include "mycobow/species.hpp"

namespace mycobow {

struct SyntheticOptions {
  std::size_t classes = 4;
  std::size_t scans_per_class_per_preparation = 5;
  int size = 1024;
  std::uint64_t seed = 0;
  double preparation_offset = 0.1;  // added to the global mean of preparation-2 scans
  double preparation_contrast = 0.9;
};

struct SyntheticScan {
  ScanRecord record;
  double mean_before_shift = 0;
  double mean_after_shift = 0;  // measured on the quantized image
};

struct SyntheticDataset {
  std::vector<SyntheticScan> scans;
  std::filesystem::path manifest_path;

  std::vector<ScanRecord> records() const {
    std::vector<ScanRecord> out;
    for (const auto& s : scans) out.push_back(s.record);
    return out;
  }
};

/// Procedural texture per class: blob count, blob scale, elongation and
/// grouping are spaced far apart.
struct BlobStyle {
  int count;
  double sigma;
  double elongation;  // major / minor axis
  int group_size;     // blobs per cluster; 1 means scattered
  double group_spread;
};

inline const std::vector<BlobStyle>& synthetic_styles() {
  static const std::vector<BlobStyle> styles = {
      {1200, 2.0, 1.0, 1, 0.0},   // many small round blobs
      {110, 8.0, 1.0, 1, 0.0},    // few large round blobs
      {380, 2.5, 4.0, 1, 0.0},    // elongated rods
      {70, 2.2, 1.0, 14, 10.0},   // tight groups of small blobs
      {600, 4.0, 1.0, 1, 0.0},
      {250, 3.0, 2.0, 5, 6.0},
      {900, 1.5, 2.5, 1, 0.0},
      {160, 5.0, 3.0, 1, 0.0},
      {40, 3.0, 1.0, 30, 16.0},
  };
  return styles;
}

namespace detail {

inline void add_blob(std::vector<double>& img, int size, double cy, double cx, double sigma_minor,
                     double elongation, double theta, double amplitude) {
  const double sa = sigma_minor * elongation;
  const double sb = sigma_minor;
  const int radius = static_cast<int>(std::ceil(3.0 * sa));
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const int r0 = std::max(0, static_cast<int>(cy) - radius);
  const int r1 = std::min(size - 1, static_cast<int>(cy) + radius);
  const int c0 = std::max(0, static_cast<int>(cx) - radius);
  const int c1 = std::min(size - 1, static_cast<int>(cx) + radius);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dy = r - cy;
      const double dx = c - cx;
      const double u = dx * ct + dy * st;
      const double v = -dx * st + dy * ct;
      img[static_cast<std::size_t>(r) * size + c] += amplitude * std::exp(-0.5 * (u * u / (sa * sa) + v * v / (sb * sb)));
    }
  }
}

}  // namespace detail

/// Render one scan of the given class in [0,1] (before the preparation shift).
inline std::vector<double> render_synthetic_texture(std::size_t cls, int size, Rng& rng) {
  const auto& style = synthetic_styles().at(cls);
  std::vector<double> img(static_cast<std::size_t>(size) * size, 0.25);
  const int count = static_cast<int>(std::lround(style.count * (0.8 + 0.4 * rng.uniform_open())));
  for (int g = 0; g < count; ++g) {
    const double gy = rng.uniform_open() * size;
    const double gx = rng.uniform_open() * size;
    for (int b = 0; b < style.group_size; ++b) {
      const double cy = gy + style.group_spread * rng.normal();
      const double cx = gx + style.group_spread * rng.normal();
      const double sigma = style.sigma * (0.9 + 0.2 * rng.uniform_open());
      const double theta = rng.uniform_open() * std::numbers::pi;
      const double amp = 0.12 + 0.1 * rng.uniform_open();
      detail::add_blob(img, size, cy, cx, sigma, style.elongation, theta, amp);
    }
  }
  for (auto& v : img) v += 0.01 * rng.normal();
  return img;
}

/// Writes <dir>/<scan_id>.png (16-bit grayscale) for every scan plus
/// <dir>/manifest.jsonl with relative paths. Preparation 2 is remapped to
/// m + contrast (v - m) + offset, m being the scan's own mean.
inline SyntheticDataset generate_synthetic_dataset(const std::filesystem::path& dir, const SyntheticOptions& opt) {
  if (opt.classes < 1 || opt.classes > synthetic_styles().size() || opt.classes > kNumSpecies) {
    throw usage_error("synthetic dataset supports 1 to 9 classes");
  }
  std::filesystem::create_directories(dir);
  SyntheticDataset ds;
  for (std::size_t cls = 0; cls < opt.classes; ++cls) {
    for (int prep = 1; prep <= 2; ++prep) {
      for (std::size_t i = 0; i < opt.scans_per_class_per_preparation; ++i) {
        const Species sp = species_at(cls);
        char name[64];
        std::snprintf(name, sizeof name, "%s_p%d_i%02zu", std::string(code_of(sp)).c_str(), prep, i);
        Rng rng(derive_seed(opt.seed, name));
        std::vector<double> img = render_synthetic_texture(cls, opt.size, rng);
        double mean = 0;
        for (double v : img) mean += v;
        mean /= static_cast<double>(img.size());
        if (prep == 2) {
          for (auto& v : img) v = mean + opt.preparation_contrast * (v - mean) + opt.preparation_offset;
        }
        Image out;
        out.rows = out.cols = opt.size;
        out.channels = 1;
        out.max_value = 65535;
        out.samples.resize(img.size());
        double quantized_mean = 0;
        for (std::size_t p = 0; p < img.size(); ++p) {
          const double v = std::clamp(img[p], 0.0, 1.0);
          out.samples[p] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
          quantized_mean += out.samples[p] / 65535.0;
        }
        quantized_mean /= static_cast<double>(img.size());
        const std::string file = std::string(name) + ".png";
        write_image(out, dir / file);
        SyntheticScan scan;
        scan.record = {name, sp, prep, static_cast<int>(i), file};
        scan.mean_before_shift = mean;
        scan.mean_after_shift = quantized_mean;
        ds.scans.push_back(std::move(scan));
      }
    }
  }
  ds.manifest_path = dir / "manifest.jsonl";
  std::ofstream m(ds.manifest_path, std::ios::binary | std::ios::trunc);
  if (!m) throw data_error("cannot write '" + ds.manifest_path.string() + "'");
  m << format_manifest(ds.records());
  return ds;
}

/// Pipeline settings used for desk-scale runs on the synthetic fixture.
inline PipelineConfig synthetic_pipeline_config() {
  PipelineConfig c;
  c.patch.patch_size = 256;
  c.patch.stride = 256;
  c.bank.cell = 16;
  c.bank.dim = 32;
  c.em.max_iterations = 50;
  c.max_gmm_descriptors = 20000;
  return c;
}

}  // namespace mycobow
