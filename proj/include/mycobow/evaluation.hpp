#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mycobow/aggregation.hpp"
#include "mycobow/error.hpp"
#include "mycobow/manifest.hpp"
#include "mycobow/pipeline.hpp"
#include "mycobow/species.hpp"

namespace mycobow {

struct FoldPlan {
  int fold = 1;
  int train_preparation = 1;
  int test_preparation = 2;
  std::vector<ScanRecord> train;
  std::vector<ScanRecord> test;
};

/// Fold 1 trains on preparation 1 and tests on preparation 2; fold 2 swaps.
/// Every species present must appear in both preparations.
inline std::pair<FoldPlan, FoldPlan> outer_folds(const std::vector<ScanRecord>& records) {
  std::array<std::array<bool, 2>, kNumSpecies> seen{};
  for (const auto& r : records) seen[index_of(r.species)][static_cast<std::size_t>(r.preparation - 1)] = true;
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    if (seen[s][0] == seen[s][1]) continue;
    const int missing = seen[s][0] ? 2 : 1;
    throw data_error("species " + std::string(kSpeciesCodes[s]) + " is missing from preparation " +
                     std::to_string(missing));
  }
  if (records.empty()) throw data_error("outer_folds: empty manifest");
  FoldPlan a{1, 1, 2, {}, {}};
  FoldPlan b{2, 2, 1, {}, {}};
  for (const auto& r : records) {
    (r.preparation == 1 ? a.train : a.test).push_back(r);
    (r.preparation == 2 ? b.train : b.test).push_back(r);
  }
  return {std::move(a), std::move(b)};
}

using ConfusionMatrix = std::array<std::array<std::size_t, kNumSpecies>, kNumSpecies>;  // [truth][predicted]

struct MeanStd {
  double mean = 0;
  double std = 0;
};

/// Mean and population standard deviation.
inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw data_error("mean_std: empty input");
  double sum = 0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

struct ScanOutcome {
  std::string scan_id;
  Species truth = Species::CA;
  Species predicted = Species::CA;
  std::size_t patches = 0;
};

struct FoldResult {
  int fold = 1;
  int train_preparation = 1;
  int test_preparation = 2;
  std::vector<std::string> train_scans;
  std::vector<std::string> test_scans;
  std::map<std::string, int> internal_fold;  // scan id -> internal fold (fv-svm)
  std::size_t train_patches = 0;
  std::size_t test_patches = 0;
  std::size_t selected_k = 0;
  double selected_c = 0;
  std::vector<GridCell> grid;
  double patch_accuracy = 0;
  double scan_accuracy = 0;
  ConfusionMatrix patch_confusion{};
  ConfusionMatrix scan_confusion{};
  std::vector<ScanOutcome> scans;
  double seconds = 0;
};

struct ExperimentReport {
  Method method = Method::fv_svm;
  std::uint64_t seed = 0;
  PipelineConfig config;
  std::vector<FoldResult> folds;
  MeanStd patch;
  MeanStd scan;
  double seconds = 0;
};

struct ExperimentOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

inline void check_disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b, const char* where) {
  const std::set<std::string> sa(a.begin(), a.end());
  for (const auto& id : b) {
    if (sa.count(id)) throw data_error(std::string("scan '") + id + "' leaks across the " + where + " split");
  }
}

/// Outer preparation split, internal grouped model selection on the training
/// side, refit, and patch/scan evaluation on the held-out preparation.
inline ExperimentReport run_experiment(const std::vector<ScanRecord>& records, const std::vector<PatchData>& patches,
                                       Method method, const PipelineConfig& config, const ExperimentOptions& opt) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const auto [fold1, fold2] = outer_folds(records);

  ExperimentReport report;
  report.method = method;
  report.seed = opt.seed;
  report.config = config;
  for (const FoldPlan* plan : {&fold1, &fold2}) {
    const auto fold_start = clock::now();
    FoldResult fr;
    fr.fold = plan->fold;
    fr.train_preparation = plan->train_preparation;
    fr.test_preparation = plan->test_preparation;
    std::set<std::string> train_ids, test_ids;
    for (const auto& r : plan->train) {
      fr.train_scans.push_back(r.scan_id);
      train_ids.insert(r.scan_id);
    }
    for (const auto& r : plan->test) {
      fr.test_scans.push_back(r.scan_id);
      test_ids.insert(r.scan_id);
    }
    check_disjoint(fr.train_scans, fr.test_scans, "outer");

    // Foreground filtering applies to training patches only.
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      if (train_ids.count(patches[i].scan_id) && patches[i].foreground) train_rows.push_back(i);
      if (test_ids.count(patches[i].scan_id)) test_rows.push_back(i);
    }
    fr.train_patches = train_rows.size();
    fr.test_patches = test_rows.size();

    TrainOptions topt{derive_seed(opt.seed, "outer-fold", static_cast<std::uint64_t>(plan->fold)), opt.threads};
    const TrainOutcome trained = train_model(patches, train_rows, method, config, topt);
    if (trained.search) {
      fr.selected_k = trained.search->k;
      fr.selected_c = trained.search->c;
      fr.grid = trained.search->cells;
      std::map<int, std::vector<std::string>> members;
      for (std::size_t i = 0; i < train_rows.size(); ++i) {
        const auto& sid = patches[train_rows[i]].scan_id;
        const int f = trained.search->fold_of_row[i];
        auto [it, fresh] = fr.internal_fold.emplace(sid, f);
        if (!fresh && it->second != f) throw data_error("scan '" + sid + "' split across internal folds");
        if (!test_ids.empty() && test_ids.count(sid)) throw data_error("scan '" + sid + "' leaks into training");
      }
    }

    const auto scores = score_patches(trained.bundle, patches, test_rows, opt.threads);
    std::vector<Species> patch_pred, patch_truth;
    std::map<std::string, std::vector<ScoreVector>> per_scan;
    for (std::size_t i = 0; i < test_rows.size(); ++i) {
      const auto& p = patches[test_rows[i]];
      const auto pred = species_at(argmax(scores[i]));
      patch_pred.push_back(pred);
      patch_truth.push_back(p.species);
      ++fr.patch_confusion[index_of(p.species)][index_of(pred)];
      per_scan[p.scan_id].push_back(scores[i]);
    }
    fr.patch_accuracy = accuracy(patch_pred, patch_truth);
    std::vector<Species> scan_pred, scan_truth;
    for (const auto& r : plan->test) {
      const auto it = per_scan.find(r.scan_id);
      if (it == per_scan.end()) throw data_error("scan '" + r.scan_id + "' produced no patches");
      const auto agg = aggregate_scan(it->second, config.aggregation);
      fr.scans.push_back({r.scan_id, r.species, agg.predicted, it->second.size()});
      scan_pred.push_back(agg.predicted);
      scan_truth.push_back(r.species);
      ++fr.scan_confusion[index_of(r.species)][index_of(agg.predicted)];
    }
    fr.scan_accuracy = accuracy(scan_pred, scan_truth);
    fr.seconds = std::chrono::duration<double>(clock::now() - fold_start).count();
    report.folds.push_back(std::move(fr));
  }
  report.patch = mean_std({report.folds[0].patch_accuracy, report.folds[1].patch_accuracy});
  report.scan = mean_std({report.folds[0].scan_accuracy, report.folds[1].scan_accuracy});
  report.seconds = std::chrono::duration<double>(clock::now() - start).count();
  return report;
}

inline ExperimentReport run_experiment(const std::vector<ScanRecord>& records, Method method,
                                       const PipelineConfig& config, const ExperimentOptions& opt) {
  outer_folds(records);
  return run_experiment(records, load_patches(records, config, opt.threads), method, config, opt);
}

/// "82.4 ± 0.2": percent with one decimal.
inline std::string format_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f \xC2\xB1 %.1f", 100.0 * m.mean, 100.0 * m.std);
  return buf;
}

inline std::string method_label(Method m) {
  return m == Method::fv_svm ? "bag-of-words (FV + SVM)" : "baseline head";
}

/// Aligned text table, one row per report.
inline std::string format_table(const std::vector<ExperimentReport>& reports) {
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, method_label(r.method).size());
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  std::string out = pad("Method", width) + "  " + "Patch-based" + "  " + "Scan-based\n";
  for (const auto& r : reports) {
    // The ± sign is two bytes but one column wide.
    out += pad(method_label(r.method), width) + "  " + pad(format_mean_std(r.patch), 12) + "  " +
           format_mean_std(r.scan) + "\n";
  }
  return out;
}

inline nlohmann::ordered_json confusion_json(const ConfusionMatrix& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& row : m) j.push_back(std::vector<std::size_t>(row.begin(), row.end()));
  return j;
}

inline std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "truth\\predicted";
  for (auto c : kSpeciesCodes) out += "," + std::string(c);
  out += "\n";
  for (std::size_t t = 0; t < kNumSpecies; ++t) {
    out += std::string(kSpeciesCodes[t]);
    for (auto v : m[t]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

/// All timing values live under the top-level "timing" key.
inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["method"] = to_string(r.method);
  j["seed"] = r.seed;
  j["config"] = to_json(r.config);
  nlohmann::ordered_json folds = nlohmann::ordered_json::array();
  nlohmann::ordered_json fold_seconds = nlohmann::ordered_json::array();
  for (const auto& f : r.folds) {
    nlohmann::ordered_json fj;
    fj["fold"] = f.fold;
    fj["train_preparation"] = f.train_preparation;
    fj["test_preparation"] = f.test_preparation;
    fj["train_scans"] = f.train_scans;
    fj["test_scans"] = f.test_scans;
    fj["train_patches"] = f.train_patches;
    fj["test_patches"] = f.test_patches;
    if (r.method == Method::fv_svm) {
      fj["selected"] = {{"K", f.selected_k}, {"C", f.selected_c}};
      nlohmann::ordered_json grid = nlohmann::ordered_json::array();
      for (const auto& c : f.grid) {
        grid.push_back({{"K", c.k}, {"C", c.c}, {"mean_accuracy", c.mean_accuracy}, {"fold_accuracy", c.fold_accuracy}});
      }
      fj["grid"] = grid;
      nlohmann::ordered_json internal;
      for (const auto& [sid, k] : f.internal_fold) internal[sid] = k;
      fj["internal_folds"] = internal;
    }
    fj["patch_accuracy"] = f.patch_accuracy;
    fj["scan_accuracy"] = f.scan_accuracy;
    fj["patch_confusion"] = confusion_json(f.patch_confusion);
    fj["scan_confusion"] = confusion_json(f.scan_confusion);
    nlohmann::ordered_json scans = nlohmann::ordered_json::array();
    for (const auto& s : f.scans) {
      scans.push_back({{"scan_id", s.scan_id},
                       {"truth", std::string(code_of(s.truth))},
                       {"predicted", std::string(code_of(s.predicted))},
                       {"patches", s.patches}});
    }
    fj["scans"] = scans;
    folds.push_back(fj);
    fold_seconds.push_back(f.seconds);
  }
  j["folds"] = folds;
  j["summary"] = {{"patch_accuracy", {{"mean", r.patch.mean}, {"std", r.patch.std}}},
                  {"scan_accuracy", {{"mean", r.scan.mean}, {"std", r.scan.std}}},
                  {"patch_based", format_mean_std(r.patch)},
                  {"scan_based", format_mean_std(r.scan)}};
  j["timing"] = {{"total_seconds", r.seconds}, {"fold_seconds", fold_seconds}};
  return j;
}

}  // namespace mycobow
