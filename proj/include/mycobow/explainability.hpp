#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mycobow/descriptors.hpp"
#include "mycobow/error.hpp"
#include "mycobow/gmm.hpp"
#include "mycobow/image.hpp"
#include "mycobow/rng.hpp"
#include "mycobow/species.hpp"

namespace mycobow {

/// Mean responsibility of each component over the set's descriptors.
inline Vector cluster_mass(const GmmModel& model, const DescriptorSet& set) {
  if (set.dim() != model.dim()) throw data_error("cluster_mass: dimension mismatch for '" + set.source_id + "'");
  if (set.count() == 0) throw data_error("cluster_mass: empty descriptor set");
  const GmmEvaluator eval(model);
  Vector mass = Vector::Zero(static_cast<Eigen::Index>(model.k()));
  Vector g(mass.size());
  Eigen::RowVectorXd x(set.descriptors.cols());
  for (Eigen::Index i = 0; i < set.descriptors.rows(); ++i) {
    x = set.descriptors.row(i).cast<double>();
    eval.posterior(x, g.data());
    mass += g;
  }
  return mass / static_cast<double>(set.count());
}

struct TopPatches {
  std::vector<std::string> ids;
  bool short_list = false;  // fewer than n candidates were available
};

/// Patches ordered by descending mass on `component`, then by ascending
/// distance from the mean descriptor to the component mean, then by id.
inline TopPatches top_patches(const GmmModel& model, const std::vector<DescriptorSet>& patches,
                              std::size_t component, std::size_t n) {
  if (n < 1) throw usage_error("top_patches: n must be >= 1");
  if (component >= model.k()) throw usage_error("top_patches: component out of range");
  struct Ranked {
    double mass;
    double distance;
    const std::string* id;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(patches.size());
  const auto c = static_cast<Eigen::Index>(component);
  for (const auto& p : patches) {
    const Vector mass = cluster_mass(model, p);
    const Eigen::RowVectorXd mean = p.descriptors.cast<double>().colwise().mean();
    ranked.push_back({mass[c], (mean - model.means.row(c)).norm(), &p.source_id});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.mass != b.mass) return a.mass > b.mass;
    if (a.distance != b.distance) return a.distance < b.distance;
    return *a.id < *b.id;
  });
  TopPatches out;
  out.short_list = ranked.size() < n;
  for (std::size_t i = 0; i < std::min(n, ranked.size()); ++i) out.ids.push_back(*ranked[i].id);
  return out;
}

/// `count` distinct components drawn with a seeded shuffle, in draw order.
inline std::vector<std::size_t> random_clusters(std::size_t k, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> ids(k);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(ids);
  ids.resize(std::min(count, k));
  return ids;
}

struct MontageTile {
  std::filesystem::path image;
  int row = 0;
  int col = 0;
  int size = 0;
};

inline constexpr int kMontageSeparator = 2;

/// Tiles in row-major order on a grid_rows x grid_cols canvas with 2-pixel
/// white separators; cells without a tile stay black. Output depth and channel
/// count are the maximum over the tiles.
inline Image render_montage(const std::vector<MontageTile>& tiles, int grid_rows, int grid_cols) {
  if (grid_rows < 1 || grid_cols < 1) throw usage_error("montage grid must be at least 1x1");
  if (tiles.size() > static_cast<std::size_t>(grid_rows) * grid_cols) throw usage_error("more tiles than grid cells");
  std::map<std::filesystem::path, Image> cache;
  int cell = 1;
  int channels = 1;
  std::uint16_t max_value = 255;
  for (const auto& t : tiles) {
    auto it = cache.find(t.image);
    if (it == cache.end()) it = cache.emplace(t.image, read_image(t.image)).first;
    cell = std::max(cell, t.size);
    channels = std::max(channels, it->second.channels);
    max_value = std::max(max_value, it->second.max_value);
  }
  Image out;
  out.channels = channels;
  out.max_value = max_value;
  out.rows = grid_rows * cell + (grid_rows - 1) * kMontageSeparator;
  out.cols = grid_cols * cell + (grid_cols - 1) * kMontageSeparator;
  out.samples.assign(static_cast<std::size_t>(out.rows) * out.cols * out.channels, max_value);
  for (int gr = 0; gr < grid_rows; ++gr) {
    for (int gc = 0; gc < grid_cols; ++gc) {
      const auto idx = static_cast<std::size_t>(gr * grid_cols + gc);
      const int top = gr * (cell + kMontageSeparator);
      const int left = gc * (cell + kMontageSeparator);
      for (int r = 0; r < cell; ++r)
        for (int c = 0; c < cell; ++c)
          for (int ch = 0; ch < channels; ++ch) out.samples[out.index(top + r, left + c, ch)] = 0;
      if (idx >= tiles.size()) continue;
      const auto& t = tiles[idx];
      const Image& src = cache.at(t.image);
      if (t.row < 0 || t.col < 0 || t.row + t.size > src.rows || t.col + t.size > src.cols) {
        throw data_error("montage tile outside '" + t.image.string() + "'");
      }
      for (int r = 0; r < t.size; ++r) {
        for (int c = 0; c < t.size; ++c) {
          for (int ch = 0; ch < channels; ++ch) {
            const int sch = src.channels == 1 ? 0 : ch;
            const double v = static_cast<double>(src.samples[src.index(t.row + r, t.col + c, sch)]) / src.max_value;
            out.samples[out.index(top + r, left + c, ch)] = static_cast<std::uint16_t>(std::lround(v * max_value));
          }
        }
      }
    }
  }
  return out;
}

inline void export_montage(const std::vector<MontageTile>& tiles, int grid_rows, int grid_cols,
                           const std::filesystem::path& destination) {
  write_image(render_montage(tiles, grid_rows, grid_cols), destination);
}

/// Closed attribute vocabularies for describing a cluster.
struct Attribute {
  std::string_view name;
  std::vector<std::string_view> values;
};

inline const std::vector<Attribute>& attribute_schema() {
  static const std::vector<Attribute> schema = {
      {"brightness", {"dark", "bright"}},
      {"size", {"small", "medium", "large"}},
      {"shape", {"circular", "oval", "longitudinal", "variform"}},
      {"arrangement", {"regular", "irregular"}},
      {"appearance", {"singular", "grouped", "fragmentary"}},
      {"color", {"pink", "purple", "blue", "black"}},
      {"quantity", {"low", "medium", "high"}},
  };
  return schema;
}

/// One empty record per component; values are filled in by hand (null = unset).
inline nlohmann::ordered_json attribute_template(const GmmModel& model) {
  nlohmann::ordered_json vocab;
  for (const auto& a : attribute_schema()) {
    std::vector<std::string> vals(a.values.begin(), a.values.end());
    vocab[std::string(a.name)] = vals;
  }
  nlohmann::ordered_json clusters = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < model.k(); ++k) {
    nlohmann::ordered_json rec;
    rec["component"] = k;
    for (const auto& a : attribute_schema()) rec[std::string(a.name)] = nullptr;
    clusters.push_back(rec);
  }
  nlohmann::ordered_json doc;
  doc["vocabulary"] = vocab;
  doc["clusters"] = clusters;
  return doc;
}

/// Throws on unknown attributes or out-of-vocabulary values; null means unset.
inline void validate_annotations(const nlohmann::json& doc) {
  if (!doc.contains("clusters") || !doc["clusters"].is_array()) throw data_error("annotations: missing 'clusters'");
  std::size_t i = 0;
  for (const auto& rec : doc["clusters"]) {
    const std::string where = "annotations cluster #" + std::to_string(i++);
    if (!rec.is_object()) throw data_error(where + ": not an object");
    for (const auto& [key, value] : rec.items()) {
      if (key == "component" || key == "notes") continue;
      const auto& schema = attribute_schema();
      const auto attr = std::find_if(schema.begin(), schema.end(), [&](const Attribute& a) { return a.name == key; });
      if (attr == schema.end()) throw data_error(where + ": unknown attribute '" + key + "'");
      if (value.is_null()) continue;
      if (!value.is_string()) throw data_error(where + ": '" + key + "' must be a string or null");
      const auto v = value.get<std::string>();
      if (std::find(attr->values.begin(), attr->values.end(), v) == attr->values.end()) {
        throw data_error(where + ": '" + v + "' is not a valid value for '" + key + "'");
      }
    }
  }
}

/// Cosine similarity between per-species mean cluster-mass profiles.
/// Species without patches get a zero row and column.
inline std::array<std::array<double, kNumSpecies>, kNumSpecies> species_similarity(
    const std::vector<Vector>& patch_masses, const std::vector<Species>& species) {
  if (patch_masses.size() != species.size()) throw data_error("species_similarity: length mismatch");
  std::array<Vector, kNumSpecies> profile;
  std::array<std::size_t, kNumSpecies> count{};
  for (std::size_t i = 0; i < patch_masses.size(); ++i) {
    auto& p = profile[index_of(species[i])];
    if (p.size() == 0) p = Vector::Zero(patch_masses[i].size());
    p += patch_masses[i];
    ++count[index_of(species[i])];
  }
  std::array<std::array<double, kNumSpecies>, kNumSpecies> sim{};
  for (std::size_t a = 0; a < kNumSpecies; ++a) {
    for (std::size_t b = 0; b < kNumSpecies; ++b) {
      if (!count[a] || !count[b]) continue;
      const double den = profile[a].norm() * profile[b].norm();
      sim[a][b] = den > 0 ? profile[a].dot(profile[b]) / den : 0.0;
    }
  }
  return sim;
}

inline std::string similarity_csv(const std::array<std::array<double, kNumSpecies>, kNumSpecies>& sim) {
  std::string out = "species";
  for (auto c : kSpeciesCodes) out += "," + std::string(c);
  out += "\n";
  char buf[32];
  for (std::size_t a = 0; a < kNumSpecies; ++a) {
    out += std::string(kSpeciesCodes[a]);
    for (std::size_t b = 0; b < kNumSpecies; ++b) {
      std::snprintf(buf, sizeof buf, ",%.6f", sim[a][b]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace mycobow
