#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mycobow/aggregation.hpp"
#include "mycobow/descriptors.hpp"
#include "mycobow/error.hpp"
#include "mycobow/parallel.hpp"
#include "mycobow/rng.hpp"
#include "mycobow/species.hpp"
#include "mycobow/svm.hpp"

namespace mycobow {

struct HyperParams {
  std::vector<double> c_grid = {0.01, 0.1, 1, 10, 100};
  std::vector<std::size_t> k_grid = {16, 32, 64};

  void validate() const {
    if (c_grid.empty() || k_grid.empty()) throw usage_error("hyperparameter grids must be non-empty");
    for (double c : c_grid)
      if (!(c > 0)) throw usage_error("C grid values must be > 0");
    for (auto k : k_grid)
      if (k < 1) throw usage_error("K grid values must be >= 1");
  }
};

/// Assign each row to one of `folds` folds so that all rows of a group (scan)
/// share a fold. Groups are stratified by label: within each species the
/// distinct group ids (sorted) are shuffled and dealt round-robin.
inline std::vector<int> group_kfold(const std::vector<Species>& labels, const std::vector<std::string>& groups,
                                    std::size_t folds, std::uint64_t seed) {
  if (labels.size() != groups.size()) throw data_error("group_kfold: label/group length mismatch");
  if (folds < 2) throw usage_error("group_kfold: need at least 2 folds");
  std::map<std::string, Species> group_label;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto [it, fresh] = group_label.emplace(groups[i], labels[i]);
    if (!fresh && it->second != labels[i]) throw data_error("group '" + groups[i] + "' has mixed labels");
  }
  std::array<std::vector<std::string>, kNumSpecies> by_class;
  for (const auto& [g, s] : group_label) by_class[index_of(s)].push_back(g);
  std::map<std::string, int> fold_of_group;
  for (std::size_t cls = 0; cls < kNumSpecies; ++cls) {
    auto& ids = by_class[cls];
    if (ids.empty()) continue;
    if (ids.size() < folds) {
      throw data_error("species " + std::string(kSpeciesCodes[cls]) + " has " + std::to_string(ids.size()) +
                       " scans; " + std::to_string(folds) + "-fold grouped search needs at least " +
                       std::to_string(folds));
    }
    Rng rng(derive_seed(seed, "group-kfold", cls));
    rng.shuffle(ids);
    for (std::size_t i = 0; i < ids.size(); ++i) fold_of_group[ids[i]] = static_cast<int>(i % folds);
  }
  std::vector<int> out(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) out[i] = fold_of_group.at(groups[i]);
  return out;
}

/// Scan-level accuracy of patch scores over the given rows.
inline double scan_accuracy(const std::vector<ScoreVector>& scores, const std::vector<std::size_t>& rows,
                            const std::vector<Species>& labels, const std::vector<std::string>& groups,
                            AggregationMode mode) {
  std::map<std::string, std::vector<ScoreVector>> per_scan;
  std::map<std::string, Species> truth;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    per_scan[groups[rows[i]]].push_back(scores[i]);
    truth[groups[rows[i]]] = labels[rows[i]];
  }
  std::vector<Species> pred;
  std::vector<Species> real;
  for (const auto& [g, s] : per_scan) {
    pred.push_back(aggregate_scan(s, mode).predicted);
    real.push_back(truth.at(g));
  }
  return accuracy(pred, real);
}

/// Produces features for every row given a K and the rows the dictionary may
/// be fitted on.
using FeatureBuilder =
    std::function<Matrix(std::size_t k, const std::vector<std::size_t>& train_rows, std::uint64_t seed)>;

struct GridCell {
  std::size_t k = 0;
  double c = 0;
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0;
};

struct GridSearchResult {
  std::size_t k = 0;
  double c = 0;
  std::vector<GridCell> cells;  // K-major, both grids ascending
  std::vector<int> fold_of_row;
};

struct GridSearchOptions {
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  AggregationMode aggregation = AggregationMode::sum;
  SvmSolverOptions solver;
};

/// Internal grouped k-fold search over (K, C). Each cell is scored by mean
/// scan-level validation accuracy; the best mean wins, ties going to the
/// smaller K and then the smaller C.
inline GridSearchResult grid_search(const FeatureBuilder& build, const std::vector<Species>& labels,
                                    const std::vector<std::string>& groups, HyperParams hp,
                                    const GridSearchOptions& opt) {
  hp.validate();
  std::sort(hp.k_grid.begin(), hp.k_grid.end());
  hp.k_grid.erase(std::unique(hp.k_grid.begin(), hp.k_grid.end()), hp.k_grid.end());
  std::sort(hp.c_grid.begin(), hp.c_grid.end());
  hp.c_grid.erase(std::unique(hp.c_grid.begin(), hp.c_grid.end()), hp.c_grid.end());

  GridSearchResult result;
  result.fold_of_row = group_kfold(labels, groups, opt.folds, derive_seed(opt.seed, "folds"));
  const std::size_t nk = hp.k_grid.size();
  const std::size_t nc = hp.c_grid.size();
  std::vector<std::vector<std::size_t>> train_rows(opt.folds), val_rows(opt.folds);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t f = 0; f < opt.folds; ++f) {
      (result.fold_of_row[i] == static_cast<int>(f) ? val_rows[f] : train_rows[f]).push_back(i);
    }
  }

  // One task per (K, fold): build features once, then sweep C.
  std::vector<std::vector<double>> acc(nk * opt.folds, std::vector<double>(nc, 0.0));
  parallel_for(nk * opt.folds, opt.threads, [&](std::size_t task) {
    const std::size_t ki = task / opt.folds;
    const std::size_t f = task % opt.folds;
    const Matrix features = build(hp.k_grid[ki], train_rows[f], derive_seed(opt.seed, "grid-features", task));
    Matrix train_x(static_cast<Eigen::Index>(train_rows[f].size()), features.cols());
    std::vector<Species> train_y;
    for (std::size_t i = 0; i < train_rows[f].size(); ++i) {
      train_x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(train_rows[f][i]));
      train_y.push_back(labels[train_rows[f][i]]);
    }
    for (std::size_t ci = 0; ci < nc; ++ci) {
      const SvmModel svm = train_svm_ovr(train_x, train_y, hp.c_grid[ci], derive_seed(opt.seed, "grid-svm", task),
                                         opt.solver);
      std::vector<ScoreVector> scores;
      scores.reserve(val_rows[f].size());
      for (auto r : val_rows[f]) scores.push_back(decision_scores(svm, features.row(static_cast<Eigen::Index>(r))));
      acc[task][ci] = scan_accuracy(scores, val_rows[f], labels, groups, opt.aggregation);
    }
  });

  double best = -1;
  for (std::size_t ki = 0; ki < nk; ++ki) {
    for (std::size_t ci = 0; ci < nc; ++ci) {
      GridCell cell;
      cell.k = hp.k_grid[ki];
      cell.c = hp.c_grid[ci];
      double sum = 0;
      for (std::size_t f = 0; f < opt.folds; ++f) {
        cell.fold_accuracy.push_back(acc[ki * opt.folds + f][ci]);
        sum += acc[ki * opt.folds + f][ci];
      }
      cell.mean_accuracy = sum / static_cast<double>(opt.folds);
      if (cell.mean_accuracy > best) {
        best = cell.mean_accuracy;
        result.k = cell.k;
        result.c = cell.c;
      }
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

}  // namespace mycobow
