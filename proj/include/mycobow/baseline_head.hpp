#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mycobow/descriptors.hpp"
#include "mycobow/error.hpp"
#include "mycobow/gmm.hpp"
#include "mycobow/rng.hpp"
#include "mycobow/species.hpp"
#include "mycobow/svm.hpp"

namespace mycobow {

struct HeadConfig {
  std::size_t hidden = 512;
  double learning_rate = 0.05;
  int epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.1;
};

/// affine -> relu -> affine -> softmax over the nine species, on standardized
/// mean-pooled descriptors.
struct BaselineHead {
  Eigen::RowVectorXd input_mean;
  Eigen::RowVectorXd input_scale;  // 1 / std
  Matrix w1;                       // H x D
  Vector b1;
  Matrix w2;                       // 9 x H
  Vector b2;
  HeadConfig config;
  int best_epoch = 0;
  double best_validation_accuracy = 0;

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
};

struct HeadGradient {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

namespace detail {

inline Vector softmax(const Vector& logits) {
  const double top = logits.maxCoeff();
  Vector e = (logits.array() - top).exp();
  return e / e.sum();
}

}  // namespace detail

template <typename Row>
Vector head_logits(const BaselineHead& head, const Row& pooled) {
  const Vector z = ((pooled - head.input_mean).cwiseProduct(head.input_scale)).transpose();
  const Vector h = (head.w1 * z + head.b1).cwiseMax(0.0);
  return head.w2 * h + head.b2;
}

template <typename Row>
Vector head_probabilities(const BaselineHead& head, const Row& pooled) {
  return detail::softmax(head_logits(head, pooled));
}

/// Per-patch scores for aggregation: log-softmax of the logits.
template <typename Row>
ScoreVector head_scores(const BaselineHead& head, const Row& pooled) {
  const Vector logits = head_logits(head, pooled);
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  ScoreVector s;
  for (std::size_t c = 0; c < kNumSpecies; ++c) s[c] = logits[static_cast<Eigen::Index>(c)] - lse;
  return s;
}

/// Mean cross-entropy over the given rows and its gradient.
inline std::pair<double, HeadGradient> head_loss_and_gradient(const BaselineHead& head, const Matrix& pooled,
                                                              const std::vector<Species>& labels,
                                                              const std::vector<std::size_t>& rows) {
  HeadGradient g{Matrix::Zero(head.w1.rows(), head.w1.cols()), Vector::Zero(head.b1.size()),
                 Matrix::Zero(head.w2.rows(), head.w2.cols()), Vector::Zero(head.b2.size())};
  double loss = 0;
  for (const auto r : rows) {
    const auto ri = static_cast<Eigen::Index>(r);
    const Vector z = ((pooled.row(ri) - head.input_mean).cwiseProduct(head.input_scale)).transpose();
    const Vector pre = head.w1 * z + head.b1;
    const Vector h = pre.cwiseMax(0.0);
    const Vector logits = head.w2 * h + head.b2;
    Vector p = detail::softmax(logits);
    const auto y = static_cast<Eigen::Index>(index_of(labels[r]));
    loss -= std::log(std::max(p[y], std::numeric_limits<double>::min()));
    p[y] -= 1.0;  // d loss / d logits
    g.w2.noalias() += p * h.transpose();
    g.b2 += p;
    Vector dh = head.w2.transpose() * p;
    for (Eigen::Index i = 0; i < dh.size(); ++i)
      if (pre[i] <= 0) dh[i] = 0;
    g.w1.noalias() += dh * z.transpose();
    g.b1 += dh;
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  g.w1 *= inv;
  g.b1 *= inv;
  g.w2 *= inv;
  g.b2 *= inv;
  return {loss * inv, std::move(g)};
}

inline BaselineHead init_baseline_head(std::size_t input_dim, const HeadConfig& config) {
  BaselineHead head;
  head.config = config;
  const auto d = static_cast<Eigen::Index>(input_dim);
  const auto h = static_cast<Eigen::Index>(config.hidden);
  head.input_mean = Eigen::RowVectorXd::Zero(d);
  head.input_scale = Eigen::RowVectorXd::Ones(d);
  Rng rng(derive_seed(config.seed, "head-init"));
  head.w1.resize(h, d);
  const double s1 = std::sqrt(2.0 / static_cast<double>(input_dim));
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < d; ++j) head.w1(i, j) = s1 * rng.normal();
  head.b1 = Vector::Zero(h);
  head.w2.resize(kNumSpecies, h);
  const double s2 = std::sqrt(1.0 / static_cast<double>(config.hidden));
  for (Eigen::Index i = 0; i < head.w2.rows(); ++i)
    for (Eigen::Index j = 0; j < h; ++j) head.w2(i, j) = s2 * rng.normal();
  head.b2 = Vector::Zero(kNumSpecies);
  return head;
}

inline std::size_t head_predict(const BaselineHead& head, const Eigen::RowVectorXd& pooled) {
  Eigen::Index arg;
  head_logits(head, pooled).maxCoeff(&arg);
  return static_cast<std::size_t>(arg);
}

/// Mini-batch gradient descent on cross-entropy. A seeded holdout of
/// holdout_fraction of the rows picks the epoch whose parameters are returned
/// (best accuracy, then lowest loss).
inline BaselineHead train_baseline_head(const Matrix& pooled, const std::vector<Species>& labels,
                                        const HeadConfig& config) {
  const auto m = static_cast<std::size_t>(pooled.rows());
  if (labels.size() != m) throw data_error("baseline head: label count mismatch");
  std::array<std::size_t, kNumSpecies> counts{};
  for (auto s : labels) ++counts[index_of(s)];
  if (std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) < 2) {
    throw data_error("baseline head: need at least 2 classes");
  }
  if (config.hidden < 1 || config.batch_size < 1 || config.epochs < 1) {
    throw usage_error("baseline head: hidden, batch_size and epochs must be >= 1");
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(config.seed, "head-holdout"));
  split_rng.shuffle(order);
  auto holdout = static_cast<std::size_t>(std::ceil(config.holdout_fraction * static_cast<double>(m)));
  if (holdout >= m) holdout = 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(holdout), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  const auto& selection_rows = val.empty() ? train : val;

  BaselineHead head = init_baseline_head(static_cast<std::size_t>(pooled.cols()), config);
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(pooled.cols());
  for (auto r : train) mean += pooled.row(static_cast<Eigen::Index>(r));
  mean /= static_cast<double>(train.size());
  Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(pooled.cols());
  for (auto r : train) var.array() += (pooled.row(static_cast<Eigen::Index>(r)) - mean).array().square();
  var /= static_cast<double>(train.size());
  head.input_mean = mean;
  head.input_scale = var.cwiseSqrt().cwiseMax(1e-8).cwiseInverse();

  auto accuracy_on = [&](const BaselineHead& h, const std::vector<std::size_t>& rows) {
    std::size_t ok = 0;
    for (auto r : rows) ok += head_predict(h, pooled.row(static_cast<Eigen::Index>(r))) == index_of(labels[r]) ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(rows.size());
  };

  BaselineHead best = head;
  best.best_validation_accuracy = -1;
  double best_loss = std::numeric_limits<double>::infinity();
  Rng batch_rng(derive_seed(config.seed, "head-batches"));
  std::vector<std::size_t> epoch_order = train;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    batch_rng.shuffle(epoch_order);
    for (std::size_t start = 0; start < epoch_order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(epoch_order.size(), start + config.batch_size);
      std::vector<std::size_t> batch(epoch_order.begin() + static_cast<std::ptrdiff_t>(start),
                                     epoch_order.begin() + static_cast<std::ptrdiff_t>(stop));
      auto [loss, grad] = head_loss_and_gradient(head, pooled, labels, batch);
      if (!std::isfinite(loss)) throw numerical_error("baseline head: non-finite loss");
      head.w1 -= config.learning_rate * grad.w1;
      head.b1 -= config.learning_rate * grad.b1;
      head.w2 -= config.learning_rate * grad.w2;
      head.b2 -= config.learning_rate * grad.b2;
    }
    const double acc = accuracy_on(head, selection_rows);
    const double val_loss = head_loss_and_gradient(head, pooled, labels, selection_rows).first;
    if (acc > best.best_validation_accuracy || (acc == best.best_validation_accuracy && val_loss < best_loss)) {
      best = head;
      best.best_epoch = epoch;
      best.best_validation_accuracy = acc;
      best_loss = val_loss;
    }
  }
  return best;
}

inline nlohmann::ordered_json to_json(const BaselineHead& h) {
  auto vec = [](const auto& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto rows = [](const Matrix& a) {
    std::vector<std::vector<double>> out;
    for (Eigen::Index i = 0; i < a.rows(); ++i) out.emplace_back(a.row(i).data(), a.row(i).data() + a.cols());
    return out;
  };
  nlohmann::ordered_json j;
  j["input_dim"] = h.input_dim();
  j["hidden"] = h.config.hidden;
  j["outputs"] = kNumSpecies;
  j["training"] = {{"learning_rate", h.config.learning_rate}, {"epochs", h.config.epochs},
                   {"batch_size", h.config.batch_size},       {"seed", h.config.seed},
                   {"holdout_fraction", h.config.holdout_fraction}};
  j["best_epoch"] = h.best_epoch;
  j["best_validation_accuracy"] = h.best_validation_accuracy;
  j["input_mean"] = vec(h.input_mean);
  j["input_scale"] = vec(h.input_scale);
  j["w1"] = rows(h.w1);
  j["b1"] = vec(h.b1);
  j["w2"] = rows(h.w2);
  j["b2"] = vec(h.b2);
  return j;
}

inline BaselineHead head_from_json(const nlohmann::json& j) {
  try {
    BaselineHead h;
    const auto d = j.at("input_dim").get<std::size_t>();
    h.config.hidden = j.at("hidden").get<std::size_t>();
    const auto& t = j.at("training");
    h.config.learning_rate = t.at("learning_rate").get<double>();
    h.config.epochs = t.at("epochs").get<int>();
    h.config.batch_size = t.at("batch_size").get<std::size_t>();
    h.config.seed = t.at("seed").get<std::uint64_t>();
    h.config.holdout_fraction = t.at("holdout_fraction").get<double>();
    h.best_epoch = j.value("best_epoch", 0);
    h.best_validation_accuracy = j.value("best_validation_accuracy", 0.0);
    auto vec = [](const nlohmann::json& a, std::size_t n, const char* what) {
      const auto v = a.get<std::vector<double>>();
      if (v.size() != n) throw data_error(std::string("head document: bad length for ") + what);
      return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(n)));
    };
    h.input_mean = vec(j.at("input_mean"), d, "input_mean").transpose();
    h.input_scale = vec(j.at("input_scale"), d, "input_scale").transpose();
    h.w1 = matrix_from_json(j.at("w1"), h.config.hidden, d, "w1");
    h.b1 = vec(j.at("b1"), h.config.hidden, "b1");
    h.w2 = matrix_from_json(j.at("w2"), kNumSpecies, h.config.hidden, "w2");
    h.b2 = vec(j.at("b2"), kNumSpecies, "b2");
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("head document: ") + e.what());
  }
}

}  // namespace mycobow
