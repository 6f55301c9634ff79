#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mycobow/fisher.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace mycobow;

namespace {

DescriptorSet make_set(const Matrix& x) {
  DescriptorSet s;
  s.descriptors = x.cast<float>();
  return s;
}

GmmModel random_model(Rng& rng, Eigen::Index k, Eigen::Index d) {
  GmmModel m;
  m.weights = Vector(k);
  for (Eigen::Index j = 0; j < k; ++j) m.weights[j] = 0.2 + rng.uniform();
  m.weights /= m.weights.sum();
  m.means = testing_helpers::random_matrix(rng, k, d);
  m.variances = Matrix(k, d);
  for (Eigen::Index j = 0; j < k; ++j)
    for (Eigen::Index t = 0; t < d; ++t) m.variances(j, t) = 0.3 + 2.0 * rng.uniform();
  return m;
}

oracle::Gmm to_oracle(const GmmModel& m) {
  oracle::Gmm g;
  for (Eigen::Index k = 0; k < m.means.rows(); ++k) {
    g.weights.push_back(m.weights[k]);
    g.means.emplace_back(m.means.row(k).data(), m.means.row(k).data() + m.means.cols());
    g.variances.emplace_back(m.variances.row(k).data(), m.variances.row(k).data() + m.variances.cols());
  }
  return g;
}

std::vector<std::vector<double>> rows_of(const DescriptorSet& s) {
  std::vector<std::vector<double>> out;
  for (Eigen::Index i = 0; i < s.descriptors.rows(); ++i) {
    std::vector<double> r;
    for (Eigen::Index t = 0; t < s.descriptors.cols(); ++t) r.push_back(s.descriptors(i, t));
    out.push_back(r);
  }
  return out;
}

GmmModel ml_fit_single(const DescriptorSet& s) {
  const Matrix x = s.descriptors.cast<double>();
  GmmModel m;
  m.weights = Vector::Ones(1);
  m.means = x.colwise().mean();
  m.variances = ((x.rowwise() - m.means.row(0)).array().square().colwise().sum() / static_cast<double>(x.rows()))
                    .matrix();
  return m;
}

}  // namespace

TEST(FisherEncode, StationarityAtOwnFit) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(200));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto set = make_set(testing_helpers::random_matrix(rng, n, d, 1.0 + 5.0 * rng.uniform()));
    const auto fv = encode(ml_fit_single(set), set);
    EXPECT_LT(fv.values.cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_FALSE(fv.normalized);
  }
}

TEST(FisherEncode, FrozenTwoComponentInstance) {
  GmmModel m;
  m.weights = Vector::Constant(2, 0.5);
  m.means = Matrix(2, 1);
  m.means << -1, 1;
  m.variances = Matrix::Ones(2, 1);
  Matrix x(2, 1);
  x << -1, 1;
  const auto fv = encode(m, make_set(x));
  const double expected[] = {0.16857838899818112, -0.16857838899818112, -0.26159415595576485, -0.26159415595576485};
  ASSERT_EQ(fv.values.size(), 4);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(fv.values[i], expected[i], 1e-15);
  const auto o = oracle::fv(to_oracle(m), {{-1.0}, {1.0}});
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(o[static_cast<std::size_t>(i)], expected[i], 1e-15);
}

TEST(FisherEncode, MatchesOracleOnSmallInstances) {
  Rng rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    const auto k = static_cast<Eigen::Index>(1 + rng.below(3));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto m = random_model(rng, k, d);
    const auto set = make_set(testing_helpers::random_matrix(rng, n, d, 2.0));
    const auto fv = encode(m, set);
    const auto o = oracle::fv(to_oracle(m), rows_of(set));
    double scale = 0;
    double err = 0;
    for (std::size_t i = 0; i < o.size(); ++i) {
      scale = std::max(scale, std::abs(o[i]));
      err = std::max(err, std::abs(fv.values[static_cast<Eigen::Index>(i)] - o[i]));
    }
    EXPECT_LE(err, 1e-10 * scale);
  }
}

TEST(FisherEncode, Dimensions) {
  Rng rng(33);
  EXPECT_EQ(fv_dimension(random_model(rng, 1, 1)), 2u);
  EXPECT_EQ(fv_dimension(random_model(rng, 16, 64)), 2048u);
  const auto big = random_model(rng, 64, 64);
  EXPECT_EQ(fv_dimension(big), 8192u);
  EXPECT_EQ(encode(big, make_set(testing_helpers::random_matrix(rng, 5, 64))).values.size(), 8192);
  EXPECT_THROW(encode(big, make_set(testing_helpers::random_matrix(rng, 5, 63))), Error);
  EXPECT_THROW(encode(big, make_set(Matrix(0, 64))), Error);
}

TEST(FisherEncode, PermutationAndDuplicationInvariance) {
  Rng rng(34);
  const auto m = random_model(rng, 3, 4);
  const Matrix x = testing_helpers::random_matrix(rng, 40, 4);
  const auto base = encode(m, make_set(x));
  Matrix reversed = x.colwise().reverse();
  const auto perm = encode(m, make_set(reversed));
  EXPECT_LT((perm.values - base.values).cwiseAbs().maxCoeff(), 1e-12);
  Matrix twice(80, 4);
  twice << x, x;
  const auto dup = encode(m, make_set(twice));
  EXPECT_LT((dup.values - base.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FisherNormalize, Examples) {
  FisherVector zero{Vector::Zero(6), false};
  const auto z = normalize(zero);
  EXPECT_TRUE(z.normalized);
  EXPECT_EQ(z.values, Vector::Zero(6));

  FisherVector v{Vector(2), false};
  v.values << 4, -4;
  const auto n = normalize(v);
  EXPECT_NEAR(n.values[0], 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(n.values[1], -1 / std::sqrt(2.0), 1e-15);

  FisherVector unit{Vector(3), false};
  unit.values << 0.6, 0.0, -0.8;
  const auto same = normalize(unit, 1.0);
  EXPECT_LT((same.values - unit.values).cwiseAbs().maxCoeff(), 1e-15);

  EXPECT_THROW(normalize(v, 0.0), Error);
  EXPECT_THROW(normalize(v, 1.5), Error);
}

TEST(FisherNormalize, UnitNorm) {
  Rng rng(35);
  for (int trial = 0; trial < 100; ++trial) {
    FisherVector fv{Vector(50), false};
    for (Eigen::Index i = 0; i < 50; ++i) fv.values[i] = rng.normal() * std::pow(10.0, rng.uniform() * 6 - 3);
    EXPECT_NEAR(normalize(fv, 0.1 + 0.9 * rng.uniform()).values.norm(), 1.0, 1e-10);
  }
}

TEST(Whitening, DecorrelatesTrainingDescriptors) {
  Rng rng(36);
  Matrix x = testing_helpers::random_matrix(rng, 500, 5);
  x.col(1) += 2.0 * x.col(0);
  x.col(3) *= 7.0;
  const auto w = fit_whitening(x, 3);
  EXPECT_EQ(w.input_dim(), 5u);
  EXPECT_EQ(w.output_dim(), 3u);
  const Matrix y = apply_whitening(w, make_set(x)).descriptors.cast<double>();
  EXPECT_EQ(y.cols(), 3);
  const Matrix centered = y.rowwise() - y.colwise().mean();
  const Matrix cov = centered.transpose() * centered / 500.0;
  EXPECT_LT((cov - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-5);

  const auto back = whitening_from_json(nlohmann::json::parse(to_json(w).dump()));
  EXPECT_EQ(back.mean, w.mean);
  EXPECT_EQ(back.transform, w.transform);
  EXPECT_THROW(fit_whitening(x, 6), Error);
  EXPECT_THROW(apply_whitening(w, make_set(Matrix::Zero(3, 4))), Error);
}
