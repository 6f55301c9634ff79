#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mycobow/aggregation.hpp"
#include "mycobow/baseline_head.hpp"
#include "mycobow/descriptors.hpp"
#include "mycobow/error.hpp"
#include "mycobow/fisher.hpp"
#include "mycobow/gmm.hpp"
#include "mycobow/grid_search.hpp"
#include "mycobow/image.hpp"
#include "mycobow/manifest.hpp"
#include "mycobow/parallel.hpp"
#include "mycobow/patching.hpp"
#include "mycobow/rng.hpp"
#include "mycobow/svm.hpp"

namespace mycobow {

enum class DescriptorSourceKind { builtin, dfb };
enum class Method { fv_svm, baseline_head };

inline std::string to_string(DescriptorSourceKind k) { return k == DescriptorSourceKind::builtin ? "builtin" : "dfb"; }
inline std::string to_string(Method m) { return m == Method::fv_svm ? "fv-svm" : "baseline-head"; }

inline Method parse_method(const std::string& s) {
  if (s == "fv-svm") return Method::fv_svm;
  if (s == "baseline-head") return Method::baseline_head;
  throw usage_error("unknown method '" + s + "' (expected fv-svm or baseline-head)");
}

inline DescriptorSourceKind parse_source(const std::string& s) {
  if (s == "builtin") return DescriptorSourceKind::builtin;
  if (s == "dfb" || s == "dfb-directory") return DescriptorSourceKind::dfb;
  throw usage_error("unknown descriptor source '" + s + "' (expected builtin or dfb)");
}

struct FilterBankConfig {
  std::uint64_t seed = 42;
  int cell = 16;
  int dim = 64;
};

struct FisherOptions {
  double alpha = 0.5;
  bool whitening = false;
  std::size_t whitening_dim = 64;
};

/// Everything the stages need besides the manifest and the run seed.
struct PipelineConfig {
  PatchSpec patch;
  DescriptorSourceKind source = DescriptorSourceKind::builtin;
  std::filesystem::path descriptor_dir;
  std::filesystem::path data_root;  // relative manifest paths resolve against this
  FilterBankConfig bank;
  EmConfig em;                      // k and seed are set per fit
  std::size_t max_gmm_descriptors = 50000;
  FisherOptions fisher;
  HyperParams grids;
  std::size_t folds = 5;
  HeadConfig head;
  AggregationMode aggregation = AggregationMode::sum;
  SvmSolverOptions solver;
};

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["patch"] = {{"patch_size", c.patch.patch_size},
                {"stride", c.patch.stride},
                {"foreground_threshold", c.patch.foreground_threshold}};
  j["descriptor_source"] = to_string(c.source);
  j["descriptor_dir"] = c.descriptor_dir.string();
  j["filter_bank"] = {{"seed", c.bank.seed}, {"cell", c.bank.cell}, {"dim", c.bank.dim}};
  j["em"] = {{"max_iterations", c.em.max_iterations},
             {"tolerance", c.em.tolerance},
             {"variance_floor_fraction", c.em.variance_floor_fraction},
             {"max_descriptors", c.max_gmm_descriptors}};
  j["fisher"] = {{"alpha", c.fisher.alpha}, {"whitening", c.fisher.whitening}, {"whitening_dim", c.fisher.whitening_dim}};
  j["classifier"] = {{"c_grid", c.grids.c_grid},
                     {"k_grid", c.grids.k_grid},
                     {"folds", c.folds},
                     {"svm_gap_tolerance", c.solver.gap_tolerance},
                     {"svm_max_epochs", c.solver.max_epochs},
                     {"head",
                      {{"hidden", c.head.hidden},
                       {"learning_rate", c.head.learning_rate},
                       {"epochs", c.head.epochs},
                       {"batch_size", c.head.batch_size},
                       {"holdout_fraction", c.head.holdout_fraction}}}};
  j["aggregation"] = to_string(c.aggregation);
  return j;
}

/// Overlay the keys present in j onto c; absent keys keep their values.
inline void merge_json(PipelineConfig& c, const nlohmann::json& j) {
  auto take = [](const nlohmann::json& obj, const char* key, auto& dst) {
    if (obj.is_object() && obj.contains(key)) dst = obj.at(key).get<std::decay_t<decltype(dst)>>();
  };
  try {
    if (j.contains("patch")) {
      const auto& p = j["patch"];
      take(p, "patch_size", c.patch.patch_size);
      take(p, "stride", c.patch.stride);
      take(p, "foreground_threshold", c.patch.foreground_threshold);
    }
    if (j.contains("descriptor_source")) c.source = parse_source(j["descriptor_source"].get<std::string>());
    if (j.contains("descriptor_dir")) c.descriptor_dir = j["descriptor_dir"].get<std::string>();
    if (j.contains("filter_bank")) {
      const auto& b = j["filter_bank"];
      take(b, "seed", c.bank.seed);
      take(b, "cell", c.bank.cell);
      take(b, "dim", c.bank.dim);
    }
    if (j.contains("em")) {
      const auto& e = j["em"];
      take(e, "max_iterations", c.em.max_iterations);
      take(e, "tolerance", c.em.tolerance);
      take(e, "variance_floor_fraction", c.em.variance_floor_fraction);
      take(e, "max_descriptors", c.max_gmm_descriptors);
    }
    if (j.contains("fisher")) {
      const auto& f = j["fisher"];
      take(f, "alpha", c.fisher.alpha);
      take(f, "whitening", c.fisher.whitening);
      take(f, "whitening_dim", c.fisher.whitening_dim);
    }
    if (j.contains("classifier")) {
      const auto& k = j["classifier"];
      take(k, "c_grid", c.grids.c_grid);
      take(k, "k_grid", c.grids.k_grid);
      take(k, "folds", c.folds);
      take(k, "svm_gap_tolerance", c.solver.gap_tolerance);
      take(k, "svm_max_epochs", c.solver.max_epochs);
      if (k.contains("head")) {
        const auto& h = k["head"];
        take(h, "hidden", c.head.hidden);
        take(h, "learning_rate", c.head.learning_rate);
        take(h, "epochs", c.head.epochs);
        take(h, "batch_size", c.head.batch_size);
        take(h, "holdout_fraction", c.head.holdout_fraction);
      }
    }
    if (j.contains("aggregation")) c.aggregation = parse_aggregation(j["aggregation"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("config: ") + e.what());
  }
}

/// Descriptors of one patch plus the bookkeeping needed downstream.
struct PatchData {
  std::string scan_id;
  Species species = Species::CA;
  PatchPosition position;
  bool foreground = true;
  DescriptorSet descriptors;

  std::string id() const { return patch_id(scan_id, position.row, position.col); }
};

inline std::filesystem::path resolve_scan_path(const ScanRecord& r, const PipelineConfig& c) {
  std::filesystem::path p(r.path);
  if (p.is_relative() && !c.data_root.empty()) p = c.data_root / p;
  return p;
}

/// All patches of one scan in row-major order.
inline std::vector<PatchData> load_scan_patches(const ScanRecord& record, const PipelineConfig& config,
                                                const FilterBank* bank) {
  const Image image = read_image(resolve_scan_path(record, config));
  std::vector<PatchData> out;
  for (const auto pos : patch_positions(image.rows, image.cols, config.patch)) {
    const Patch patch = make_patch(image, record.scan_id, pos, config.patch.patch_size);
    PatchData pd;
    pd.scan_id = record.scan_id;
    pd.species = record.species;
    pd.position = pos;
    pd.foreground = is_foreground(patch, config.patch.foreground_threshold);
    if (config.source == DescriptorSourceKind::builtin) {
      pd.descriptors = builtin_descriptors(patch, *bank);
    } else {
      pd.descriptors = read_descriptors_file(config.descriptor_dir / (patch_id(patch) + ".dfb"));
      validate(pd.descriptors);
    }
    pd.descriptors.source_id = patch_id(patch);
    out.push_back(std::move(pd));
  }
  return out;
}

/// Patches of every record, in manifest order.
inline std::vector<PatchData> load_patches(const std::vector<ScanRecord>& records, const PipelineConfig& config,
                                           std::size_t threads) {
  std::optional<FilterBank> bank;
  if (config.source == DescriptorSourceKind::builtin) {
    bank = make_filter_bank(config.bank.seed, config.bank.cell, config.bank.dim);
  }
  std::vector<std::vector<PatchData>> per_scan(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    try {
      per_scan[i] = load_scan_patches(records[i], config, bank ? &*bank : nullptr);
    } catch (const Error& e) {
      throw Error(e.kind(), "scan '" + records[i].scan_id + "': " + e.what());
    }
  });
  std::vector<PatchData> out;
  std::size_t dim = 0;
  for (auto& scan : per_scan) {
    for (auto& p : scan) {
      if (dim == 0) dim = p.descriptors.dim();
      if (p.descriptors.dim() != dim) throw data_error("descriptor '" + p.id() + "' has inconsistent dimension");
      out.push_back(std::move(p));
    }
  }
  return out;
}

/// GMM dictionary plus the optional whitening applied before it.
struct Codebook {
  std::optional<Whitening> whitening;
  GmmModel gmm;
  FitTrace trace;
};

/// Stack descriptors of the given patches, subsampled (seeded, order kept) to
/// at most max_rows.
inline Matrix gather_descriptors(const std::vector<PatchData>& patches, const std::vector<std::size_t>& rows,
                                 std::size_t max_rows, std::uint64_t seed) {
  std::size_t total = 0;
  for (auto r : rows) total += patches[r].descriptors.count();
  if (total == 0) throw data_error("no training descriptors");
  const std::size_t dim = patches[rows.front()].descriptors.dim();
  std::vector<std::size_t> keep;
  if (max_rows > 0 && total > max_rows) {
    keep.resize(total);
    std::iota(keep.begin(), keep.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(keep);
    keep.resize(max_rows);
    std::sort(keep.begin(), keep.end());
  }
  Matrix x(static_cast<Eigen::Index>(keep.empty() ? total : keep.size()), static_cast<Eigen::Index>(dim));
  std::size_t global = 0;
  std::size_t out = 0;
  std::size_t next_keep = 0;
  for (auto r : rows) {
    const auto& d = patches[r].descriptors.descriptors;
    for (Eigen::Index i = 0; i < d.rows(); ++i, ++global) {
      if (!keep.empty()) {
        if (next_keep >= keep.size() || keep[next_keep] != global) continue;
        ++next_keep;
      }
      x.row(static_cast<Eigen::Index>(out++)) = d.row(i).cast<double>();
    }
  }
  return x;
}

inline Codebook fit_codebook(const std::vector<PatchData>& patches, const std::vector<std::size_t>& rows,
                             std::size_t k, const PipelineConfig& config, std::uint64_t seed) {
  Matrix x = gather_descriptors(patches, rows, config.max_gmm_descriptors, derive_seed(seed, "gmm-sample"));
  Codebook cb;
  if (config.fisher.whitening) {
    cb.whitening = fit_whitening(x, config.fisher.whitening_dim);
    x = (x.rowwise() - cb.whitening->mean) * cb.whitening->transform.transpose();
  }
  EmConfig em = config.em;
  em.k = k;
  em.seed = derive_seed(seed, "gmm-em");
  auto [gmm, trace] = em_fit(x, em);
  cb.gmm = std::move(gmm);
  cb.trace = std::move(trace);
  return cb;
}

inline FisherVector encode_patch(const Codebook& cb, const DescriptorSet& set, double alpha) {
  if (cb.whitening) return normalize(encode(cb.gmm, apply_whitening(*cb.whitening, set)), alpha);
  return normalize(encode(cb.gmm, set), alpha);
}

/// Normalized FVs of the given patches, one per row.
inline Matrix encode_patches(const Codebook& cb, const std::vector<PatchData>& patches,
                             const std::vector<std::size_t>& rows, double alpha, std::size_t threads) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(fv_dimension(cb.gmm)));
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) = encode_patch(cb, patches[rows[i]].descriptors, alpha).values.transpose();
  });
  return out;
}

inline Eigen::RowVectorXd pooled_descriptor(const DescriptorSet& set) {
  return set.descriptors.cast<double>().colwise().mean();
}

inline Matrix pool_patches(const std::vector<PatchData>& patches, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(patches[rows.front()].descriptors.dim()));
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pooled_descriptor(patches[rows[i]].descriptors);
  return out;
}

/// A trained classifier of either method.
struct ModelBundle {
  Method method = Method::fv_svm;
  std::optional<Codebook> codebook;
  std::optional<SvmModel> svm;
  std::optional<BaselineHead> head;
  PipelineConfig config;
  std::uint64_t seed = 0;
  std::size_t selected_k = 0;
  double selected_c = 0;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct TrainOutcome {
  ModelBundle bundle;
  std::optional<GridSearchResult> search;
};

/// Fit a classifier on the given (training) patch rows. For fv-svm this runs
/// the internal grouped grid search first and refits with the winning cell.
inline TrainOutcome train_model(const std::vector<PatchData>& patches, const std::vector<std::size_t>& rows,
                                Method method, const PipelineConfig& config, const TrainOptions& opt) {
  if (rows.empty()) throw data_error("no training patches");
  TrainOutcome out;
  out.bundle.method = method;
  out.bundle.config = config;
  out.bundle.seed = opt.seed;
  std::vector<Species> labels;
  std::vector<std::string> groups;
  for (auto r : rows) {
    labels.push_back(patches[r].species);
    groups.push_back(patches[r].scan_id);
  }
  if (method == Method::baseline_head) {
    HeadConfig hc = config.head;
    hc.seed = derive_seed(opt.seed, "head");
    out.bundle.head = train_baseline_head(pool_patches(patches, rows), labels, hc);
    return out;
  }

  FeatureBuilder build = [&](std::size_t k, const std::vector<std::size_t>& local_train, std::uint64_t seed) {
    std::vector<std::size_t> fit_rows;
    for (auto i : local_train) fit_rows.push_back(rows[i]);
    const Codebook cb = fit_codebook(patches, fit_rows, k, config, seed);
    return encode_patches(cb, patches, rows, config.fisher.alpha, 1);
  };
  GridSearchOptions gs;
  gs.folds = config.folds;
  gs.seed = derive_seed(opt.seed, "grid");
  gs.threads = opt.threads;
  gs.aggregation = config.aggregation;
  gs.solver = config.solver;
  auto search = grid_search(build, labels, groups, config.grids, gs);

  out.bundle.selected_k = search.k;
  out.bundle.selected_c = search.c;
  out.bundle.codebook = fit_codebook(patches, rows, search.k, config, derive_seed(opt.seed, "final-codebook"));
  const Matrix features = encode_patches(*out.bundle.codebook, patches, rows, config.fisher.alpha, opt.threads);
  out.bundle.svm = train_svm_ovr(features, labels, search.c, derive_seed(opt.seed, "final-svm"), config.solver);
  out.search = std::move(search);
  return out;
}

/// Score vectors for the given patch rows.
inline std::vector<ScoreVector> score_patches(const ModelBundle& bundle, const std::vector<PatchData>& patches,
                                              const std::vector<std::size_t>& rows, std::size_t threads) {
  std::vector<ScoreVector> scores(rows.size());
  if (bundle.method == Method::baseline_head) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      scores[i] = head_scores(*bundle.head, pooled_descriptor(patches[rows[i]].descriptors));
    }
    return scores;
  }
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    const auto fv = encode_patch(*bundle.codebook, patches[rows[i]].descriptors, bundle.config.fisher.alpha);
    scores[i] = decision_scores(*bundle.svm, fv.values);
  });
  return scores;
}

namespace detail {

inline void write_json_file(const nlohmann::ordered_json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw data_error(path.string() + ": " + e.what());
  }
}

}  // namespace detail

/// Bundle directory: config.json, plus gmm.json + svm.json (+ whitening.json)
/// or head.json.
inline void save_bundle(const ModelBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json cfg;
  cfg["method"] = to_string(b.method);
  cfg["seed"] = b.seed;
  if (b.method == Method::fv_svm) {
    cfg["selected"] = {{"K", b.selected_k}, {"C", b.selected_c}};
  }
  cfg["pipeline"] = to_json(b.config);
  detail::write_json_file(cfg, dir / "config.json");
  if (b.method == Method::fv_svm) {
    detail::write_json_file(to_json(b.codebook->gmm, &b.codebook->trace), dir / "gmm.json");
    detail::write_json_file(to_json(*b.svm), dir / "svm.json");
    if (b.codebook->whitening) detail::write_json_file(to_json(*b.codebook->whitening), dir / "whitening.json");
  } else {
    detail::write_json_file(to_json(*b.head), dir / "head.json");
  }
}

inline ModelBundle load_bundle(const std::filesystem::path& dir) {
  const auto cfg = detail::read_json_file(dir / "config.json");
  ModelBundle b;
  try {
    b.method = parse_method(cfg.at("method").get<std::string>());
    b.seed = cfg.at("seed").get<std::uint64_t>();
    merge_json(b.config, cfg.at("pipeline"));
    if (b.method == Method::fv_svm) {
      b.selected_k = cfg.at("selected").at("K").get<std::size_t>();
      b.selected_c = cfg.at("selected").at("C").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("bundle config: ") + e.what());
  }
  if (b.method == Method::fv_svm) {
    Codebook cb;
    cb.gmm = gmm_from_json(detail::read_json_file(dir / "gmm.json"));
    if (std::filesystem::exists(dir / "whitening.json")) {
      cb.whitening = whitening_from_json(detail::read_json_file(dir / "whitening.json"));
    }
    b.codebook = std::move(cb);
    b.svm = svm_from_json(detail::read_json_file(dir / "svm.json"));
  } else {
    b.head = head_from_json(detail::read_json_file(dir / "head.json"));
  }
  return b;
}

}  // namespace mycobow
