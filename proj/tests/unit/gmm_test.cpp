#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "demoplan/gmm.hpp"
#include "oracles.hpp"

using namespace demoplan;
using namespace demoplan::gmm;

namespace {

Matrix random_spd(int d, Rng& gen, double min_eig = 0.2) {
  std::normal_distribution<double> n01;
  Matrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n01(gen);
  return a * a.transpose() / d + min_eig * Matrix::Identity(d, d);
}

GmmModel random_model(int d, int k, Rng& gen) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> uw(0.2, 1.0);
  std::vector<double> w;
  std::vector<Gaussian> comps;
  for (int c = 0; c < k; ++c) {
    Vector mu(d);
    for (int i = 0; i < d; ++i) mu[i] = 2.0 * n01(gen);
    comps.emplace_back(mu, random_spd(d, gen));
    w.push_back(uw(gen));
  }
  return GmmModel(w, comps);
}

std::vector<Vector> gaussian_blob(int n, const Vector& mu, double sd, Rng& gen) {
  std::normal_distribution<double> n01;
  std::vector<Vector> out;
  for (int j = 0; j < n; ++j) {
    Vector x = mu;
    for (int i = 0; i < mu.size(); ++i) x[i] += sd * n01(gen);
    out.push_back(x);
  }
  return out;
}

}  // namespace

TEST(GmmLogPdf, StandardNormalAtMode) {
  GmmModel m(Gaussian(Vector::Zero(1), Matrix::Identity(1, 1)));
  EXPECT_NEAR(m.log_pdf(Vector::Zero(1)), -0.5 * std::log(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(m.log_pdf(Vector::Zero(1)), -0.9189, 1e-4);
}

TEST(GmmLogPdf, IdenticalComponentsCollapse) {
  Rng gen(3);
  Gaussian g(Vector::Constant(2, 0.5), random_spd(2, gen));
  GmmModel one(g);
  GmmModel two({0.5, 0.5}, {g, g});
  std::normal_distribution<double> n01;
  for (int t = 0; t < 50; ++t) {
    Vector x(2);
    x << 3 * n01(gen), 3 * n01(gen);
    EXPECT_NEAR(one.log_pdf(x), two.log_pdf(x), 1e-12);
  }
}

TEST(GmmLogPdf, MatchesDirectSummation) {
  Rng gen(11);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 100; ++t) {
    GmmModel m = random_model(2, 3, gen);
    Vector x(2);
    x << 2 * n01(gen), 2 * n01(gen);
    EXPECT_NEAR(m.log_pdf(x), std::log(oracle::mixture_density(m, x)), 1e-9);
  }
}

TEST(GmmLogPdf, DimensionMismatchThrows) {
  GmmModel m(Gaussian(Vector::Zero(2), Matrix::Identity(2, 2)));
  EXPECT_THROW(m.log_pdf(Vector::Zero(3)), InvalidArgument);
}

TEST(GmmLogPdf, StableFarInTail) {
  GmmModel m(Gaussian(Vector::Zero(1), Matrix::Identity(1, 1) * 1e-4));
  Vector x = Vector::Constant(1, 50.0);
  double lp = m.log_pdf(x);
  EXPECT_TRUE(std::isfinite(lp));
  EXPECT_NEAR(lp, -0.5 * (2500.0 / 1e-4 + std::log(1e-4) + kLog2Pi), 1e-3);
}

TEST(GmmLogPdf, MixtureIntegratesToOne) {
  Rng gen(5);
  GmmModel m = random_model(2, 3, gen);
  EXPECT_NEAR(oracle::stratified_mass(m, 1000, 17), 1.0, 0.02);
}

TEST(FitWeightedGaussian, SymmetricPair) {
  std::vector<Vector> s{Vector::Constant(1, 0.0), Vector::Constant(1, 2.0)};
  std::vector<double> w{1.0, 1.0};
  Gaussian g = fit_weighted_gaussian(s, w);
  EXPECT_DOUBLE_EQ(g.mean()[0], 1.0);
  EXPECT_DOUBLE_EQ(g.cov()(0, 0), 1.0);
}

TEST(FitWeightedGaussian, PointMass) {
  Rng gen(1);
  auto s = gaussian_blob(10, Vector::Zero(3), 1.0, gen);
  std::vector<double> w(10, 0.0);
  w[4] = 0.3;
  Gaussian g = fit_weighted_gaussian(s, w);
  EXPECT_EQ(g.mean(), s[4]);
  EXPECT_EQ(g.cov(), Matrix::Zero(3, 3));
  EXPECT_FALSE(g.positive_definite());
  Gaussian floored = fit_weighted_gaussian(s, w, 1e-6);
  EXPECT_TRUE(floored.positive_definite());
  EXPECT_TRUE(floored.cov().isApprox(1e-6 * Matrix::Identity(3, 3)));
}

TEST(FitWeightedGaussian, MatchesDirectSums) {
  Rng gen(21);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto s = gaussian_blob(50, Vector::Constant(3, 1.0), 2.0, gen);
  std::vector<double> w(50);
  for (auto& x : w) x = u01(gen);
  Gaussian g = fit_weighted_gaussian(s, w);
  auto [mu, cov] = oracle::weighted_moments(s, w);
  EXPECT_LE((g.mean() - mu).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((g.cov() - cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitWeightedGaussian, InvariantToWeightScale) {
  Rng gen(8);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    auto s = gaussian_blob(30, Vector::Zero(4), 1.5, gen);
    std::vector<double> w(30), w2(30);
    double scale = std::pow(10.0, 12.0 * u01(gen) - 6.0);
    for (int j = 0; j < 30; ++j) w[j] = u01(gen), w2[j] = w[j] * scale;
    Gaussian a = fit_weighted_gaussian(s, w), b = fit_weighted_gaussian(s, w2);
    EXPECT_LE((a.mean() - b.mean()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a.cov() - b.cov()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(FitWeightedGaussian, AllZeroWeightsRejected) {
  std::vector<Vector> s{Vector::Zero(2), Vector::Ones(2)};
  std::vector<double> w{0.0, 0.0};
  EXPECT_THROW(fit_weighted_gaussian(s, w), DegenerateWeights);
}

TEST(FitEm, IdenticalSamples) {
  std::vector<Vector> s(20, Vector::Constant(3, 4.25));
  FitConfig cfg;
  cfg.k = 1;
  cfg.cov_floor = 1e-6;
  GmmModel m = fit_em(s, cfg);
  EXPECT_LE((m.component(0).mean() - s[0]).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((m.component(0).cov() - 1e-6 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FitEm, IdenticalSamplesManyComponentsDoesNotCrash) {
  std::vector<Vector> s(40, Vector::Constant(2, -1.0));
  FitConfig cfg;
  cfg.k = 3;
  GmmModel m = fit_em(s, cfg);
  EXPECT_TRUE(std::isfinite(m.log_pdf(s[0])));
}

TEST(FitEm, SeparatedClusters) {
  Rng gen(4);
  auto left = gaussian_blob(300, Vector::Constant(1, -10.0), 1.0, gen);
  auto right = gaussian_blob(300, Vector::Constant(1, 10.0), 1.0, gen);
  std::vector<Vector> all = left;
  all.insert(all.end(), right.begin(), right.end());
  auto ones = std::vector<double>(300, 1.0);
  double ml = oracle::weighted_moments(left, ones).first[0];
  double mr = oracle::weighted_moments(right, ones).first[0];
  FitConfig cfg;
  cfg.k = 2;
  cfg.seed = 9;
  GmmModel m = fit_em(all, cfg);
  int lo = m.component(0).mean()[0] < m.component(1).mean()[0] ? 0 : 1;
  EXPECT_NEAR(m.component(lo).mean()[0], ml, 0.1);
  EXPECT_NEAR(m.component(1 - lo).mean()[0], mr, 0.1);
  EXPECT_NEAR(m.weights()[0], 0.5, 0.05);
  EXPECT_NEAR(m.weights()[1], 0.5, 0.05);
}

TEST(FitEm, LogLikelihoodNonDecreasing) {
  Rng gen(77);
  std::uniform_int_distribution<int> dd(1, 4), kk(1, 4);
  for (int t = 0; t < 30; ++t) {
    int d = dd(gen), k = kk(gen);
    std::vector<Vector> s;
    for (int c = 0; c < k + 1; ++c) {
      Vector mu = Vector::Random(d) * 5.0;
      auto b = gaussian_blob(40, mu, 0.5 + c, gen);
      s.insert(s.end(), b.begin(), b.end());
    }
    FitConfig cfg;
    cfg.k = k;
    cfg.seed = static_cast<std::uint64_t>(t);
    FitTrace trace;
    GmmModel m = fit_em(s, cfg, &trace);
    ASSERT_GE(trace.loglik.size(), 1u);
    for (std::size_t i = 1; i < trace.loglik.size(); ++i)
      EXPECT_GE(trace.loglik[i], trace.loglik[i - 1] - 1e-9) << "dataset " << t << " iteration " << i;
    for (const auto& x : s) EXPECT_TRUE(std::isfinite(m.log_pdf(x)));
  }
}

TEST(FitEm, DeterministicGivenSeed) {
  Rng gen(6);
  auto s = gaussian_blob(100, Vector::Zero(2), 3.0, gen);
  FitConfig cfg;
  cfg.seed = 42;
  GmmModel a = fit_em(s, cfg), b = fit_em(s, cfg);
  for (int c = 0; c < a.k(); ++c) {
    EXPECT_EQ(a.component(c).mean(), b.component(c).mean());
    EXPECT_EQ(a.component(c).cov(), b.component(c).cov());
    EXPECT_EQ(a.weights()[c], b.weights()[c]);
  }
}

TEST(FitEm, TooFewSamples) {
  std::vector<Vector> s(5, Vector::Zero(3));
  FitConfig cfg;
  cfg.k = 2;
  EXPECT_THROW(fit_em(s, cfg), InsufficientData);
}

TEST(FitWeightedGmm, SingleComponentEqualsClosedForm) {
  Rng gen(12);
  std::uniform_real_distribution<double> u01(0.0, 2.0);
  auto s = gaussian_blob(60, Vector::Constant(3, 2.0), 1.0, gen);
  std::vector<double> w(60);
  for (auto& x : w) x = u01(gen);
  FitConfig cfg;
  cfg.k = 1;
  GmmModel m = fit_weighted_gmm(s, w, cfg);
  Gaussian g = fit_weighted_gaussian(s, w, cfg.cov_floor);
  EXPECT_LE((m.component(0).mean() - g.mean()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((m.component(0).cov() - g.cov()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FitWeightedGmm, UniformWeightsEqualPlainEm) {
  Rng gen(13);
  auto s = gaussian_blob(80, Vector::Zero(2), 1.0, gen);
  auto t = gaussian_blob(80, Vector::Constant(2, 6.0), 1.0, gen);
  s.insert(s.end(), t.begin(), t.end());
  FitConfig cfg;
  cfg.k = 2;
  cfg.seed = 3;
  GmmModel plain = fit_em(s, cfg);
  GmmModel weighted = fit_weighted_gmm(s, std::vector<double>(s.size(), 0.37), cfg);
  for (int c = 0; c < 2; ++c) {
    EXPECT_LE((plain.component(c).mean() - weighted.component(c).mean()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((plain.component(c).cov() - weighted.component(c).cov()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(plain.weights()[c], weighted.weights()[c], 1e-10);
  }
}

TEST(FitWeightedGmm, BimodalBeatsSingleComponent) {
  Rng gen(14);
  std::uniform_real_distribution<double> u01(0.1, 1.0);
  auto s = gaussian_blob(100, Vector::Constant(2, -4.0), 1.0, gen);
  auto t = gaussian_blob(100, Vector::Constant(2, 4.0), 1.0, gen);
  s.insert(s.end(), t.begin(), t.end());
  std::vector<double> w(s.size());
  for (auto& x : w) x = u01(gen);
  FitConfig one, two;
  one.k = 1;
  two.k = 2;
  FitTrace t1, t2;
  fit_weighted_gmm(s, w, one, &t1);
  fit_weighted_gmm(s, w, two, &t2);
  EXPECT_GE(t2.loglik.back(), t1.loglik.back());
  for (std::size_t i = 1; i < t2.loglik.size(); ++i) EXPECT_GE(t2.loglik[i], t2.loglik[i - 1] - 1e-9);
}

TEST(Regularize, ZeroIsIdentity) {
  Rng gen(2);
  GmmModel m = random_model(3, 2, gen);
  GmmModel r = regularize(m, 0.0);
  for (int c = 0; c < m.k(); ++c) EXPECT_EQ(m.component(c).cov(), r.component(c).cov());
}

TEST(Regularize, FloorDominatesTinyVariance) {
  GmmModel m(Gaussian(Vector::Zero(1), Matrix::Constant(1, 1, 1e-12)));
  GmmModel r = regularize(m, 1e-3);
  EXPECT_NEAR(r.component(0).cov()(0, 0), 1e-3, 1e-11);
}

TEST(Regularize, EigenvaluesShiftUp) {
  Rng gen(15);
  for (int t = 0; t < 20; ++t) {
    GmmModel m = random_model(4, 3, gen);
    double term = 0.05 * (t + 1);
    GmmModel r = regularize(m, term);
    for (int c = 0; c < m.k(); ++c) {
      Eigen::SelfAdjointEigenSolver<Matrix> before(m.component(c).cov()), after(r.component(c).cov());
      for (int i = 0; i < 4; ++i) EXPECT_GE(after.eigenvalues()[i], before.eigenvalues()[i]);
      EXPECT_GE(after.eigenvalues().minCoeff(), term);
      EXPECT_EQ(m.component(c).mean(), r.component(c).mean());
      EXPECT_EQ(m.weights()[c], r.weights()[c]);
    }
  }
}
