#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "mycobow/descriptors.hpp"
#include "mycobow/error.hpp"
#include "mycobow/gmm.hpp"

namespace mycobow {

/// 2*K*D encoding: the mean-gradient block followed by the variance-gradient
/// block, each component-major (index k*D + d).
struct FisherVector {
  Vector values;
  bool normalized = false;
};

inline std::size_t fv_dimension(const GmmModel& model) { return 2 * model.k() * model.dim(); }

/// Raw Fisher Vector of a descriptor set (mean and variance gradients, no
/// weight gradients):
///   mean[k,d] = 1/(N sqrt(pi_k))   sum_n g_nk (x_nd - mu_kd) / s_kd
///   var[k,d]  = 1/(N sqrt(2 pi_k)) sum_n g_nk (((x_nd - mu_kd) / s_kd)^2 - 1)
/// Descriptors are accumulated in order, so the result is reproducible.
inline FisherVector encode(const GmmModel& model, const DescriptorSet& set) {
  const auto k = static_cast<Eigen::Index>(model.k());
  const auto d = static_cast<Eigen::Index>(model.dim());
  if (set.descriptors.cols() != d) {
    throw data_error("encode: descriptor dimension " + std::to_string(set.descriptors.cols()) +
                     " != model dimension " + std::to_string(d));
  }
  const auto n = set.descriptors.rows();
  if (n < 1) throw data_error("encode: empty descriptor set '" + set.source_id + "'");

  const GmmEvaluator eval(model);
  const Matrix inv_sd = model.variances.cwiseSqrt().cwiseInverse();
  Matrix mean_acc = Matrix::Zero(k, d);
  Matrix var_acc = Matrix::Zero(k, d);
  Vector gamma(k);
  Eigen::RowVectorXd x(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    x = set.descriptors.row(i).cast<double>();
    eval.posterior(x, gamma.data());
    for (Eigen::Index j = 0; j < k; ++j) {
      const double g = gamma[j];
      if (g == 0.0) continue;
      const double* mu = model.means.row(j).data();
      const double* is = inv_sd.row(j).data();
      double* ma = mean_acc.row(j).data();
      double* va = var_acc.row(j).data();
      for (Eigen::Index t = 0; t < d; ++t) {
        const double z = (x[t] - mu[t]) * is[t];
        ma[t] += g * z;
        va[t] += g * (z * z - 1.0);
      }
    }
  }
  FisherVector fv;
  fv.values.resize(2 * k * d);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double mean_scale = inv_n / std::sqrt(model.weights[j]);
    const double var_scale = inv_n / std::sqrt(2.0 * model.weights[j]);
    for (Eigen::Index t = 0; t < d; ++t) {
      fv.values[j * d + t] = mean_scale * mean_acc(j, t);
      fv.values[k * d + j * d + t] = var_scale * var_acc(j, t);
    }
  }
  return fv;
}

/// Signed power z -> sign(z)|z|^alpha followed by L2 normalization.
/// The zero vector maps to itself.
inline FisherVector normalize(const FisherVector& fv, double alpha = 0.5) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw usage_error("normalize: alpha must be in (0, 1]");
  FisherVector out;
  out.values = fv.values.unaryExpr([alpha](double z) {
    const double p = std::pow(std::abs(z), alpha);
    return z < 0 ? -p : p;
  });
  const double norm = out.values.norm();
  if (norm > 0) out.values /= norm;
  out.normalized = true;
  return out;
}

/// PCA whitening fitted on training descriptors: x -> diag(1/sqrt(l + eps)) V^T (x - mean).
struct Whitening {
  Eigen::RowVectorXd mean;
  Matrix transform;  // D' x D

  std::size_t input_dim() const { return static_cast<std::size_t>(transform.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(transform.rows()); }
};

inline Whitening fit_whitening(const Matrix& x, std::size_t out_dim, double epsilon = 1e-8) {
  const auto d = static_cast<std::size_t>(x.cols());
  if (out_dim < 1 || out_dim > d) {
    throw usage_error("whitening dimension " + std::to_string(out_dim) + " must be in [1, " + std::to_string(d) + "]");
  }
  if (x.rows() < 2) throw data_error("whitening needs at least two descriptors");
  Whitening w;
  w.mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - w.mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw numerical_error("whitening: eigendecomposition failed");
  // Eigenvalues come out ascending; take the largest out_dim.
  w.transform.resize(static_cast<Eigen::Index>(out_dim), x.cols());
  for (std::size_t r = 0; r < out_dim; ++r) {
    const Eigen::Index src = static_cast<Eigen::Index>(d - 1 - r);
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;  // fix the sign so the transform is reproducible
    const double lambda = std::max(solver.eigenvalues()[src], 0.0);
    w.transform.row(static_cast<Eigen::Index>(r)) = v.transpose() / std::sqrt(lambda + epsilon);
  }
  return w;
}

inline DescriptorSet apply_whitening(const Whitening& w, const DescriptorSet& set) {
  if (set.dim() != w.input_dim()) throw data_error("whitening: descriptor dimension mismatch");
  DescriptorSet out;
  out.source_id = set.source_id;
  out.grid = set.grid;
  const Matrix x = set.descriptors.cast<double>();
  out.descriptors = ((x.rowwise() - w.mean) * w.transform.transpose()).cast<float>();
  return out;
}

inline nlohmann::ordered_json to_json(const Whitening& w) {
  nlohmann::ordered_json j;
  j["input_dim"] = w.input_dim();
  j["output_dim"] = w.output_dim();
  j["mean"] = std::vector<double>(w.mean.data(), w.mean.data() + w.mean.size());
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < w.transform.rows(); ++i)
    rows.emplace_back(w.transform.row(i).data(), w.transform.row(i).data() + w.transform.cols());
  j["transform"] = rows;
  return j;
}

inline Whitening whitening_from_json(const nlohmann::json& j) {
  try {
    Whitening w;
    const auto in = j.at("input_dim").get<std::size_t>();
    const auto out = j.at("output_dim").get<std::size_t>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    if (mean.size() != in) throw data_error("whitening: mean length mismatch");
    w.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(in));
    w.transform = matrix_from_json(j.at("transform"), out, in, "transform");
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("whitening document: ") + e.what());
  }
}

}  // namespace mycobow
