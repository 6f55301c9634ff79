#pragma once

// Naive reference implementations for tiny instances. Nothing here may call
// into the optimized library paths; only plain types are shared.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct Gmm {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> variances;
};

inline constexpr std::size_t kMaxK = 8;
inline constexpr std::size_t kMaxD = 8;
inline constexpr std::size_t kMaxN = 64;

inline void check_caps(std::size_t k, std::size_t d, std::size_t n) {
  if (k > kMaxK || d > kMaxD || n > kMaxN) throw std::invalid_argument("oracle cap exceeded");
}

// Direct product of 1-D Gaussian densities, no log domain.
inline double density(const Gmm& g, std::size_t k, const std::vector<double>& x) {
  double p = g.weights[k];
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = x[d] - g.means[k][d];
    p *= std::exp(-diff * diff / (2.0 * g.variances[k][d])) / std::sqrt(2.0 * std::numbers::pi * g.variances[k][d]);
  }
  return p;
}

inline std::vector<double> gmm_responsibilities(const Gmm& g, const std::vector<double>& x) {
  check_caps(g.weights.size(), x.size(), 1);
  std::vector<double> p(g.weights.size());
  double total = 0;
  for (std::size_t k = 0; k < p.size(); ++k) total += (p[k] = density(g, k, x));
  for (auto& v : p) v /= total;
  return p;
}

/// Term-by-term Fisher Vector: mean block then variance block.
inline std::vector<double> fv(const Gmm& g, const std::vector<std::vector<double>>& xs) {
  const std::size_t k = g.weights.size();
  const std::size_t dim = g.means[0].size();
  const std::size_t n = xs.size();
  check_caps(k, dim, n);
  std::vector<double> out(2 * k * dim, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < dim; ++d) {
      double mean_sum = 0;
      double var_sum = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double gamma = gmm_responsibilities(g, xs[i])[c];
        const double sd = std::sqrt(g.variances[c][d]);
        const double z = (xs[i][d] - g.means[c][d]) / sd;
        mean_sum += gamma * z;
        var_sum += gamma * (z * z - 1.0);
      }
      out[c * dim + d] = mean_sum / (static_cast<double>(n) * std::sqrt(g.weights[c]));
      out[k * dim + c * dim + d] = var_sum / (static_cast<double>(n) * std::sqrt(2.0 * g.weights[c]));
    }
  }
  return out;
}

struct SvmSolution {
  std::vector<double> w;
  double b = 0;
  double dual = -std::numeric_limits<double>::infinity();
};

/// Exhaustive solver for the bias-augmented L1-loss SVM dual
///   max sum(a) - 1/2 a^T Q a,  0 <= a_i <= C,  Q_ij = y_i y_j (x_i.x_j + B^2).
/// Every assignment of each a_i to {0, free, C} is tried; the free block is
/// solved from its stationarity equations and kept if it satisfies the box
/// and KKT conditions. The best dual value wins.
inline SvmSolution svm_small(const std::vector<std::vector<double>>& x, const std::vector<int>& y, double c,
                             double bias_feature = 1.0) {
  const std::size_t m = x.size();
  if (m > 8) throw std::invalid_argument("oracle cap exceeded");
  const std::size_t dim = x[0].size();
  Eigen::MatrixXd q(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double dot = bias_feature * bias_feature;
      for (std::size_t d = 0; d < dim; ++d) dot += x[i][d] * x[j][d];
      q(i, j) = y[i] * y[j] * dot;
    }
  }
  std::size_t combos = 1;
  for (std::size_t i = 0; i < m; ++i) combos *= 3;
  SvmSolution best;
  for (std::size_t code = 0; code < combos; ++code) {
    std::vector<int> state(m);  // 0 lower, 1 free, 2 upper
    std::size_t t = code;
    for (std::size_t i = 0; i < m; ++i, t /= 3) state[i] = static_cast<int>(t % 3);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(m);
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < m; ++i) {
      if (state[i] == 2) a[i] = c;
      if (state[i] == 1) free.push_back(i);
    }
    if (!free.empty()) {
      Eigen::MatrixXd qf(free.size(), free.size());
      Eigen::VectorXd rhs(free.size());
      for (std::size_t r = 0; r < free.size(); ++r) {
        rhs[r] = 1.0;
        for (std::size_t j = 0; j < m; ++j)
          if (state[j] == 2) rhs[r] -= q(free[r], j) * c;
        for (std::size_t s = 0; s < free.size(); ++s) qf(r, s) = q(free[r], free[s]);
      }
      const Eigen::VectorXd af = qf.completeOrthogonalDecomposition().solve(rhs);
      if ((qf * af - rhs).norm() > 1e-9) continue;
      for (std::size_t r = 0; r < free.size(); ++r) a[free[r]] = af[r];
    }
    bool ok = true;
    const Eigen::VectorXd grad = Eigen::VectorXd::Ones(m) - q * a;
    for (std::size_t i = 0; i < m && ok; ++i) {
      if (a[i] < -1e-12 || a[i] > c + 1e-12) ok = false;
      if (state[i] == 0 && grad[i] > 1e-9) ok = false;
      if (state[i] == 2 && grad[i] < -1e-9) ok = false;
    }
    if (!ok) continue;
    const double dual = a.sum() - 0.5 * a.dot(q * a);
    if (dual > best.dual) {
      best.dual = dual;
      best.w.assign(dim, 0.0);
      best.b = 0;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t d = 0; d < dim; ++d) best.w[d] += a[i] * y[i] * x[i][d];
        best.b += a[i] * y[i] * bias_feature;
      }
    }
  }
  if (best.w.empty()) throw std::runtime_error("svm oracle found no KKT point");
  return best;
}

}  // namespace oracle
