#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mycobow/descriptors.hpp"
#include "mycobow/error.hpp"
#include "mycobow/rng.hpp"

namespace mycobow {

/// K diagonal-covariance Gaussian components.
struct GmmModel {
  Vector weights;     // K, sums to 1
  Matrix means;       // K x D
  Matrix variances;   // K x D
  std::uint64_t seed = 0;

  std::size_t k() const { return static_cast<std::size_t>(means.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(means.cols()); }
};

struct EmConfig {
  std::size_t k = 16;
  int max_iterations = 100;
  double tolerance = 1e-6;  // relative change of the mean log-likelihood
  std::uint64_t seed = 0;
  double variance_floor_fraction = 1e-4;

  void validate() const {
    if (k < 1) throw usage_error("EM needs K >= 1");
    if (!(tolerance > 0)) throw usage_error("EM tolerance must be > 0");
    if (max_iterations < 1) throw usage_error("EM max_iterations must be >= 1");
  }
};

struct ReseedEvent {
  int iteration = 0;
  std::size_t component = 0;
  std::size_t point = 0;
};

struct FitTrace {
  std::vector<double> log_likelihood;  // entry 0 is the initial model
  int iterations = 0;
  bool converged = false;
  std::vector<ReseedEvent> reseeds;
};

inline constexpr double kAbsoluteVarianceFloor = 1e-10;
inline constexpr double kMinComponentWeight = 1e-8;
inline constexpr double kEmptyComponentMass = 1e-10;

/// Per-dimension ML variance of the rows of x.
inline Vector global_variance(const Matrix& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  return (x.rowwise() - mean).array().square().colwise().mean().transpose();
}

inline Vector variance_floor(const Matrix& x, double fraction) {
  return (global_variance(x) * fraction).cwiseMax(kAbsoluteVarianceFloor);
}

/// k-means++ seeding: the first mean is a uniformly drawn point, each further
/// mean is drawn with probability proportional to its squared distance to the
/// nearest chosen mean. Weights are uniform; variances are the (floored)
/// global per-dimension variance.
inline GmmModel kmeanspp_init(const Matrix& x, std::size_t k, std::uint64_t seed,
                              double variance_floor_fraction = 1e-4) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k < 1) throw usage_error("k-means++ needs K >= 1");
  if (n < k) throw data_error("k-means++ needs N >= K (N=" + std::to_string(n) + ", K=" + std::to_string(k) + ")");
  const Vector var = global_variance(x);
  if (k > 1 && var.sum() == 0.0) throw data_error("k-means++: all points are identical, cannot seed K > 1");

  Rng rng(seed);
  std::vector<std::size_t> chosen;
  std::vector<bool> taken(n, false);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (;;) {
    chosen.push_back(pick);
    taken[pick] = true;
    if (chosen.size() == k) break;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) {
        nearest[i] = 0;
        continue;
      }
      nearest[i] = std::min(nearest[i], (x.row(i) - x.row(pick)).squaredNorm());
      total += nearest[i];
    }
    if (total > 0) {
      const double target = rng.uniform_open() * total;
      double acc = 0;
      pick = n;
      std::size_t last_positive = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] <= 0) continue;
        last_positive = i;
        acc += nearest[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
      if (pick == n) pick = last_positive;
    } else {
      // Only duplicates of chosen points remain; take an unused index.
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i]) free.push_back(i);
      pick = free[rng.below(free.size())];
    }
  }

  GmmModel model;
  model.seed = seed;
  model.weights = Vector::Constant(static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
  model.means.resize(static_cast<Eigen::Index>(k), x.cols());
  for (std::size_t j = 0; j < k; ++j) model.means.row(j) = x.row(chosen[j]);
  const Vector floored = var.cwiseMax((var * variance_floor_fraction).cwiseMax(kAbsoluteVarianceFloor));
  model.variances = floored.transpose().replicate(static_cast<Eigen::Index>(k), 1);
  return model;
}

namespace detail {

// log(pi_k) - 1/2 sum_d log(2 pi var_kd), per component.
inline Vector log_normalizers(const GmmModel& m) {
  Vector out(m.means.rows());
  for (Eigen::Index j = 0; j < m.means.rows(); ++j) {
    out[j] = std::log(m.weights[j]) -
             0.5 * (m.variances.row(j).array() * (2.0 * std::numbers::pi)).log().sum();
  }
  return out;
}

template <typename Row>
void weighted_log_densities(const GmmModel& m, const Vector& norm, const Matrix& inv_var, const Row& x,
                            double* out) {
  const auto k = m.means.rows();
  const auto d = m.means.cols();
  for (Eigen::Index j = 0; j < k; ++j) {
    const double* mu = m.means.row(j).data();
    const double* iv = inv_var.row(j).data();
    double s = 0;
    for (Eigen::Index t = 0; t < d; ++t) {
      const double diff = static_cast<double>(x[t]) - mu[t];
      s += diff * diff * iv[t];
    }
    out[j] = norm[j] - 0.5 * s;
  }
}

// Turns log-terms into normalized responsibilities in place; returns log-sum-exp.
inline double normalize_log_terms(double* terms, Eigen::Index k) {
  double top = terms[0];
  for (Eigen::Index j = 1; j < k; ++j) top = std::max(top, terms[j]);
  double sum = 0;
  for (Eigen::Index j = 0; j < k; ++j) {
    terms[j] = std::exp(terms[j] - top);
    sum += terms[j];
  }
  for (Eigen::Index j = 0; j < k; ++j) terms[j] /= sum;
  return top + std::log(sum);
}

}  // namespace detail

/// Precomputed per-model quantities for repeated posterior evaluation.
class GmmEvaluator {
 public:
  explicit GmmEvaluator(const GmmModel& model)
      : model_(model), norm_(detail::log_normalizers(model)), inv_var_(model.variances.cwiseInverse()) {}

  /// Writes K responsibilities to out and returns log p(x).
  template <typename Row>
  double posterior(const Row& x, double* out) const {
    detail::weighted_log_densities(model_, norm_, inv_var_, x, out);
    return detail::normalize_log_terms(out, model_.means.rows());
  }

  const GmmModel& model() const { return model_; }

 private:
  GmmModel model_;
  Vector norm_;
  Matrix inv_var_;
};

inline Vector responsibilities(const GmmModel& model, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != model.dim()) throw data_error("responsibilities: dimension mismatch");
  Vector g(model.means.rows());
  GmmEvaluator(model).posterior(x, g.data());
  return g;
}

/// Mean over rows of log sum_k pi_k N(x; mu_k, diag var_k).
inline double log_likelihood(const GmmModel& model, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != model.dim()) {
    throw data_error("log_likelihood: data dimension " + std::to_string(x.cols()) + " != model dimension " +
                     std::to_string(model.dim()));
  }
  if (x.rows() == 0) throw data_error("log_likelihood: empty data");
  GmmEvaluator eval(model);
  Vector g(model.means.rows());
  double total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) total += eval.posterior(x.row(i), g.data());
  return total / static_cast<double>(x.rows());
}

/// EM for a diagonal GMM, seeded by k-means++.
///
/// The trace holds the mean log-likelihood of the initial model followed by
/// the value after every M-step; the returned model is the one scored last.
/// Variances are floored at max(fraction * global variance, 1e-10) and
/// weights at 1e-8. A component whose total responsibility drops below 1e-10
/// is moved onto the point with the lowest maximum responsibility.
inline std::pair<GmmModel, FitTrace> em_fit(const Matrix& x, const EmConfig& config) {
  config.validate();
  const auto n = x.rows();
  const auto d = x.cols();
  const auto k = static_cast<Eigen::Index>(config.k);
  if (static_cast<std::size_t>(n) < config.k) {
    throw data_error("EM needs N >= K (N=" + std::to_string(n) + ", K=" + std::to_string(config.k) + ")");
  }
  if (!x.allFinite()) throw data_error("EM input contains non-finite values");

  const Vector global_var = global_variance(x);
  const Vector floor = (global_var * config.variance_floor_fraction).cwiseMax(kAbsoluteVarianceFloor);
  GmmModel model = kmeanspp_init(x, config.k, config.seed, config.variance_floor_fraction);

  FitTrace trace;
  Matrix resp(n, k);
  auto e_step = [&](const GmmModel& m) {
    GmmEvaluator eval(m);
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) total += eval.posterior(x.row(i), resp.row(i).data());
    return total / static_cast<double>(n);
  };

  double ll = e_step(model);
  trace.log_likelihood.push_back(ll);
  for (int it = 1; it <= config.max_iterations; ++it) {
    const Vector mass = resp.colwise().sum().transpose();
    GmmModel next = model;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (mass[j] < kEmptyComponentMass) {
        Eigen::Index worst = 0;
        double worst_max = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i) {
          const double mx = resp.row(i).maxCoeff();
          if (mx < worst_max) {
            worst_max = mx;
            worst = i;
          }
        }
        next.means.row(j) = x.row(worst);
        next.variances.row(j) = global_var.cwiseMax(floor).transpose();
        next.weights[j] = 1.0 / static_cast<double>(n);
        trace.reseeds.push_back({it, static_cast<std::size_t>(j), static_cast<std::size_t>(worst)});
        continue;
      }
      Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(d);
      for (Eigen::Index i = 0; i < n; ++i) mu.noalias() += resp(i, j) * x.row(i);
      mu /= mass[j];
      Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(d);
      for (Eigen::Index i = 0; i < n; ++i) var.array() += resp(i, j) * (x.row(i) - mu).array().square();
      var /= mass[j];
      next.means.row(j) = mu;
      next.variances.row(j) = var.cwiseMax(floor.transpose());
      next.weights[j] = mass[j] / static_cast<double>(n);
    }
    next.weights = next.weights.cwiseMax(kMinComponentWeight);
    next.weights /= next.weights.sum();
    model = std::move(next);

    const double next_ll = e_step(model);
    trace.log_likelihood.push_back(next_ll);
    trace.iterations = it;
    if (!std::isfinite(next_ll)) throw numerical_error("EM produced a non-finite log-likelihood");
    const double change = std::abs(next_ll - ll) / std::max(std::abs(ll), std::numeric_limits<double>::min());
    ll = next_ll;
    if (change < config.tolerance) {
      trace.converged = true;
      break;
    }
  }
  return {std::move(model), std::move(trace)};
}

inline nlohmann::ordered_json to_json(const GmmModel& m, const FitTrace* trace = nullptr) {
  nlohmann::ordered_json j;
  j["K"] = m.k();
  j["D"] = m.dim();
  j["seed"] = m.seed;
  j["weights"] = std::vector<double>(m.weights.data(), m.weights.data() + m.weights.size());
  auto rows = [](const Matrix& a) {
    std::vector<std::vector<double>> out;
    for (Eigen::Index i = 0; i < a.rows(); ++i) out.emplace_back(a.row(i).data(), a.row(i).data() + a.cols());
    return out;
  };
  j["means"] = rows(m.means);
  j["variances"] = rows(m.variances);
  if (trace && !trace->log_likelihood.empty()) {
    j["trace"] = {{"iterations", trace->iterations},
                  {"converged", trace->converged},
                  {"initial_log_likelihood", trace->log_likelihood.front()},
                  {"final_log_likelihood", trace->log_likelihood.back()},
                  {"reseeds", trace->reseeds.size()}};
  }
  return j;
}

inline Matrix matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols, const char* what) {
  if (!j.is_array() || j.size() != rows) throw data_error(std::string("'") + what + "' has wrong row count");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw data_error(std::string("'") + what + "' has wrong column count");
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
  }
  return m;
}

inline GmmModel gmm_from_json(const nlohmann::json& j) {
  try {
    const auto k = j.at("K").get<std::size_t>();
    const auto d = j.at("D").get<std::size_t>();
    GmmModel m;
    m.seed = j.value("seed", std::uint64_t{0});
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != k) throw data_error("gmm: weights length != K");
    m.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(k));
    m.means = matrix_from_json(j.at("means"), k, d, "means");
    m.variances = matrix_from_json(j.at("variances"), k, d, "variances");
    if (std::abs(m.weights.sum() - 1.0) > 1e-9 || (m.variances.array() <= 0).any()) {
      throw data_error("gmm: invalid weights or variances");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("gmm document: ") + e.what());
  }
}

}  // namespace mycobow
