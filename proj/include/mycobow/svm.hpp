#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mycobow/descriptors.hpp"
#include "mycobow/error.hpp"
#include "mycobow/rng.hpp"
#include "mycobow/species.hpp"

namespace mycobow {

using ScoreVector = std::array<double, kNumSpecies>;

struct SvmSolverOptions {
  double gap_tolerance = 1e-6;
  int max_epochs = 10000;
  double bias_feature = 1.0;  // constant appended to every sample; b is its weight
};

struct BinarySvm {
  Vector w;
  double b = 0;
  double duality_gap = std::numeric_limits<double>::infinity();
  int epochs = 0;
  bool converged = false;
  std::vector<double> primal_trace;  // primal objective of the returned iterate after every epoch
  std::vector<double> dual_trace;
};

/// L1-loss linear SVM by dual coordinate descent.
///
/// Solves min 1/2 (|w|^2 + b^2) + C sum_i max(0, 1 - y_i (w.x_i + b)) where
/// the bias is the weight of a constant feature, so the dual is a box
/// 0 <= alpha_i <= C without an equality constraint. Coordinates are visited
/// in a freshly shuffled order each epoch. The iterate with the lowest primal
/// objective so far is kept; the run stops once its gap to the current dual
/// value drops to the tolerance.
inline BinarySvm train_binary_svm(const Matrix& x, const std::vector<int>& y, double c, std::uint64_t seed,
                                  const SvmSolverOptions& opt = {}) {
  const auto m = x.rows();
  const auto f = x.cols();
  if (static_cast<std::size_t>(m) != y.size()) throw data_error("svm: label count mismatch");
  if (!(c > 0)) throw usage_error("svm: C must be > 0");
  const double bias2 = opt.bias_feature * opt.bias_feature;

  Vector alpha = Vector::Zero(m);
  Vector qii(m);
  for (Eigen::Index i = 0; i < m; ++i) qii[i] = x.row(i).squaredNorm() + bias2;

  BinarySvm out;
  Vector w = Vector::Zero(f);
  double b = 0;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(seed);
  double best_primal = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (const Eigen::Index i : order) {
      const double yi = y[static_cast<std::size_t>(i)];
      const double g = yi * (x.row(i).dot(w) + b * opt.bias_feature) - 1.0;
      double pg = g;
      if (alpha[i] <= 0) {
        pg = std::min(g, 0.0);
      } else if (alpha[i] >= c) {
        pg = std::max(g, 0.0);
      }
      if (pg == 0.0) continue;
      const double old = alpha[i];
      alpha[i] = std::clamp(old - g / qii[i], 0.0, c);
      const double delta = (alpha[i] - old) * yi;
      if (delta != 0.0) {
        w.noalias() += delta * x.row(i).transpose();
        b += delta * opt.bias_feature;
      }
    }
    const double reg = w.squaredNorm() + b * b;
    double hinge = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      hinge += std::max(0.0, 1.0 - y[static_cast<std::size_t>(i)] * (x.row(i).dot(w) + b * opt.bias_feature));
    }
    const double primal = 0.5 * reg + c * hinge;
    const double dual = alpha.sum() - 0.5 * reg;
    if (!std::isfinite(primal) || !std::isfinite(dual)) throw numerical_error("svm: non-finite objective");
    if (primal < best_primal) {
      best_primal = primal;
      out.w = w;
      out.b = b;
    }
    out.primal_trace.push_back(best_primal);
    out.dual_trace.push_back(dual);
    out.duality_gap = best_primal - dual;
    out.epochs = epoch;
    if (out.duality_gap <= opt.gap_tolerance) {
      out.converged = true;
      break;
    }
  }
  return out;
}

/// One-vs-rest linear SVMs in the fixed species order.
struct SvmModel {
  std::array<bool, kNumSpecies> trained{};
  Matrix weights;  // kNumSpecies x F; rows of untrained classes are zero
  Vector bias = Vector::Zero(kNumSpecies);
  double c = 1.0;
  std::array<double, kNumSpecies> duality_gap{};
  std::array<int, kNumSpecies> epochs{};

  std::size_t feature_dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::vector<Species> missing_classes() const {
    std::vector<Species> out;
    for (std::size_t i = 0; i < kNumSpecies; ++i)
      if (!trained[i]) out.push_back(species_at(i));
    return out;
  }
};

/// Classes without positive examples are left untrained and score -inf.
inline SvmModel train_svm_ovr(const Matrix& features, const std::vector<Species>& labels, double c,
                              std::uint64_t seed, const SvmSolverOptions& opt = {}) {
  const auto m = static_cast<std::size_t>(features.rows());
  if (labels.size() != m) throw data_error("svm: label count mismatch");
  if (m < 2) throw data_error("svm: need at least 2 training examples");
  std::array<std::size_t, kNumSpecies> positives{};
  for (auto s : labels) ++positives[index_of(s)];
  std::size_t present = 0;
  for (auto p : positives) present += p > 0 ? 1 : 0;
  if (present < 2) throw data_error("svm: need at least 2 classes with examples");

  SvmModel model;
  model.c = c;
  model.weights = Matrix::Zero(kNumSpecies, features.cols());
  std::vector<int> y(m);
  for (std::size_t cls = 0; cls < kNumSpecies; ++cls) {
    if (positives[cls] == 0) continue;
    for (std::size_t i = 0; i < m; ++i) y[i] = index_of(labels[i]) == cls ? 1 : -1;
    const auto fit = train_binary_svm(features, y, c, derive_seed(seed, "svm-class", cls), opt);
    model.trained[cls] = true;
    model.weights.row(static_cast<Eigen::Index>(cls)) = fit.w.transpose();
    model.bias[static_cast<Eigen::Index>(cls)] = fit.b * opt.bias_feature;
    model.duality_gap[cls] = fit.duality_gap;
    model.epochs[cls] = fit.epochs;
  }
  return model;
}

template <typename Row>
ScoreVector decision_scores(const SvmModel& model, const Row& x) {
  if (static_cast<std::size_t>(x.size()) != model.feature_dim()) {
    throw data_error("decision_scores: feature dimension " + std::to_string(x.size()) + " != model dimension " +
                     std::to_string(model.feature_dim()));
  }
  ScoreVector s;
  for (std::size_t cls = 0; cls < kNumSpecies; ++cls) {
    s[cls] = model.trained[cls]
                 ? model.weights.row(static_cast<Eigen::Index>(cls)).dot(x) + model.bias[static_cast<Eigen::Index>(cls)]
                 : -std::numeric_limits<double>::infinity();
  }
  return s;
}

inline nlohmann::ordered_json to_json(const SvmModel& m) {
  nlohmann::ordered_json j;
  j["C"] = m.c;
  j["feature_dim"] = m.feature_dim();
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (std::size_t cls = 0; cls < kNumSpecies; ++cls) {
    nlohmann::ordered_json e;
    e["species"] = std::string(kSpeciesCodes[cls]);
    e["trained"] = m.trained[cls];
    if (m.trained[cls]) {
      const auto row = m.weights.row(static_cast<Eigen::Index>(cls));
      e["bias"] = m.bias[static_cast<Eigen::Index>(cls)];
      e["duality_gap"] = m.duality_gap[cls];
      e["epochs"] = m.epochs[cls];
      e["weights"] = std::vector<double>(row.data(), row.data() + row.size());
    }
    classes.push_back(e);
  }
  j["classes"] = classes;
  return j;
}

inline SvmModel svm_from_json(const nlohmann::json& j) {
  try {
    SvmModel m;
    m.c = j.at("C").get<double>();
    const auto f = j.at("feature_dim").get<std::size_t>();
    m.weights = Matrix::Zero(kNumSpecies, static_cast<Eigen::Index>(f));
    const auto& classes = j.at("classes");
    if (classes.size() != kNumSpecies) throw data_error("svm document: expected 9 classes");
    for (std::size_t cls = 0; cls < kNumSpecies; ++cls) {
      const auto& e = classes[cls];
      if (e.at("species").get<std::string>() != kSpeciesCodes[cls]) throw data_error("svm document: class order");
      m.trained[cls] = e.at("trained").get<bool>();
      if (!m.trained[cls]) continue;
      const auto w = e.at("weights").get<std::vector<double>>();
      if (w.size() != f) throw data_error("svm document: weight length mismatch");
      m.weights.row(static_cast<Eigen::Index>(cls)) = Eigen::Map<const Eigen::RowVectorXd>(w.data(), static_cast<Eigen::Index>(f));
      m.bias[static_cast<Eigen::Index>(cls)] = e.at("bias").get<double>();
      m.duality_gap[cls] = e.value("duality_gap", 0.0);
      m.epochs[cls] = e.value("epochs", 0);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("svm document: ") + e.what());
  }
}

}  // namespace mycobow
