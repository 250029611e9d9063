#pragma once

// Multivariate Gaussian and Gaussian-mixture densities: evaluation, sampling,
// (weighted) EM fitting and diagonal regularization. Everything is computed in
// log space; models are immutable once constructed.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "demoplan/errors.hpp"
#include "demoplan/random.hpp"

namespace demoplan::gmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// log(sum(exp(v))) with the max shifted out. Returns -inf for an empty or
/// all -inf input.
inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

class Gaussian {
 public:
  Gaussian() = default;

  Gaussian(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size())
      throw InvalidArgument("gaussian: covariance shape does not match mean dimension");
    if (mean_.size() == 0) throw InvalidArgument("gaussian: zero dimension");
    cov_ = (0.5 * (cov_ + cov_.transpose())).eval();
    factorize();
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }

  /// False when the covariance is not numerically positive definite (e.g. a
  /// point mass from a single-sample fit). Such a Gaussian cannot be evaluated.
  bool positive_definite() const { return pd_; }

  double log_pdf(const Vector& x) const {
    if (x.size() != mean_.size())
      throw InvalidArgument("log_pdf: expected dimension " + std::to_string(mean_.size()) +
                            ", got " + std::to_string(x.size()));
    if (!pd_) throw DegenerateWeights("log_pdf: covariance is not positive definite");
    Vector z = chol_.matrixL().solve(x - mean_);
    return -0.5 * (z.squaredNorm() + log_det_ + static_cast<double>(dim()) * kLog2Pi);
  }

  /// mean + L z with L the Cholesky factor. Point masses sample their mean.
  template <class Gen>
  Vector sample(Gen& gen) const {
    std::normal_distribution<double> n01(0.0, 1.0);
    Vector z(dim());
    for (int i = 0; i < dim(); ++i) z[i] = n01(gen);
    if (pd_) return mean_ + chol_.matrixL() * z;
    return mean_;
  }

  double log_det() const { return log_det_; }

  double inverse_trace() const {
    if (!pd_) return std::numeric_limits<double>::infinity();
    return chol_.solve(Matrix::Identity(dim(), dim())).trace();
  }

 private:
  void factorize() {
    chol_.compute(cov_);
    pd_ = chol_.info() == Eigen::Success;
    if (pd_) {
      const Matrix& l = chol_.matrixLLT();
      log_det_ = 0.0;
      for (int i = 0; i < dim(); ++i) {
        double d = l(i, i);
        if (!(d > 0.0) || !std::isfinite(d)) {
          pd_ = false;
          break;
        }
        log_det_ += 2.0 * std::log(d);
      }
    }
  }

  Vector mean_;
  Matrix cov_;
  Eigen::LLT<Matrix> chol_;
  bool pd_ = false;
  double log_det_ = 0.0;
};

class GmmModel {
 public:
  GmmModel() = default;

  GmmModel(std::vector<double> weights, std::vector<Gaussian> components)
      : weights_(std::move(weights)), components_(std::move(components)) {
    if (components_.empty()) throw InvalidArgument("gmm: no components");
    if (weights_.size() != components_.size())
      throw InvalidArgument("gmm: weight count does not match component count");
    dim_ = components_.front().dim();
    double sum = 0.0;
    for (std::size_t c = 0; c < components_.size(); ++c) {
      if (components_[c].dim() != dim_) throw InvalidArgument("gmm: components differ in dimension");
      if (!(weights_[c] >= 0.0) || !std::isfinite(weights_[c]))
        throw InvalidArgument("gmm: weights must be finite and nonnegative");
      sum += weights_[c];
    }
    if (!(sum > 0.0)) throw InvalidArgument("gmm: weights sum to zero");
    if (std::abs(sum - 1.0) > 1e-12)
      for (double& w : weights_) w /= sum;
    log_weights_.resize(weights_.size());
    for (std::size_t c = 0; c < weights_.size(); ++c) log_weights_[c] = std::log(weights_[c]);
  }

  explicit GmmModel(Gaussian g) : GmmModel({1.0}, {std::move(g)}) {}

  int dim() const { return dim_; }
  int k() const { return static_cast<int>(components_.size()); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Gaussian>& components() const { return components_; }
  const Gaussian& component(int c) const { return components_.at(c); }

  double log_pdf(const Vector& x) const {
    if (x.size() != dim_)
      throw InvalidArgument("log_pdf: expected dimension " + std::to_string(dim_) + ", got " +
                            std::to_string(x.size()));
    std::vector<double> terms(components_.size());
    for (std::size_t c = 0; c < components_.size(); ++c)
      terms[c] = weights_[c] > 0.0 ? log_weights_[c] + components_[c].log_pdf(x)
                                   : -std::numeric_limits<double>::infinity();
    return log_sum_exp(terms);
  }

  template <class Gen>
  Vector sample(Gen& gen) const {
    std::discrete_distribution<int> pick(weights_.begin(), weights_.end());
    return components_[pick(gen)].sample(gen);
  }

 private:
  std::vector<double> weights_;
  std::vector<double> log_weights_;
  std::vector<Gaussian> components_;
  int dim_ = 0;
};

struct FitConfig {
  int k = 3;
  int max_iters = 200;
  /// Relative log-likelihood improvement below which EM stops.
  double loglik_tol = 1e-8;
  /// Diagonal floor applied in each M-step: cov_floor / (component mass), so
  /// exactly cov_floor for a single component.
  double cov_floor = 1e-6;
  std::uint64_t seed = 0;
};

/// Log-likelihood after initialization and after every M-step, minus the
/// floor penalty cov_floor/2 * sum_c tr(inv(cov_c)) scaled by the total weight.
struct FitTrace {
  std::vector<double> loglik;
};

namespace detail {

inline int check_samples(std::span<const Vector> samples) {
  if (samples.empty()) throw InsufficientData("fit: no samples");
  const auto d = samples.front().size();
  if (d == 0) throw InvalidArgument("fit: zero-dimensional samples");
  for (const auto& s : samples)
    if (s.size() != d) throw InvalidArgument("fit: samples differ in dimension");
  return static_cast<int>(d);
}

inline double check_weights(std::span<const Vector> samples, std::span<const double> weights) {
  if (weights.size() != samples.size())
    throw InvalidArgument("fit: weight count does not match sample count");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("fit: weights must be finite and nonnegative");
    sum += w;
  }
  if (!(sum > 0.0)) throw DegenerateWeights("fit: all weights are zero");
  return sum;
}

/// Adds the smallest jitter of the form floor * 10^j that makes `cov` factorize.
inline Gaussian make_component(Vector mean, Matrix cov) {
  Gaussian g(mean, cov);
  if (g.positive_definite()) return g;
  double scale = std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
  for (double eps = 1e-12 * scale; eps < 1e12 * scale; eps *= 10.0) {
    Gaussian h(mean, cov + eps * Matrix::Identity(cov.rows(), cov.cols()));
    if (h.positive_definite()) return h;
  }
  throw DegenerateWeights("fit: covariance could not be regularized");
}

// Weighted k-means++ seeding: the first center is drawn proportional to the
// sample weight, subsequent ones proportional to weight * squared distance.
inline std::vector<int> seed_centers(std::span<const Vector> samples, std::span<const double> w,
                                     int k, std::uint64_t seed) {
  Rng gen = derive_rng(seed, {0x6b6d});
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t n = samples.size();
  auto draw = [&](const std::vector<double>& mass) {
    double total = 0.0;
    for (double m : mass) total += m;
    double r = u01(gen) * total;
    for (std::size_t j = 0; j < n; ++j) {
      r -= mass[j];
      if (r < 0.0 && mass[j] > 0.0) return static_cast<int>(j);
    }
    for (std::size_t j = n; j-- > 0;)
      if (mass[j] > 0.0) return static_cast<int>(j);
    return 0;
  };
  std::vector<int> centers;
  std::vector<double> mass(w.begin(), w.end());
  centers.push_back(draw(mass));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    const Vector& last = samples[centers.back()];
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      d2[j] = std::min(d2[j], (samples[j] - last).squaredNorm());
      mass[j] = w[j] * d2[j];
      any = any || mass[j] > 0.0;
    }
    // Every remaining sample coincides with a center: fall back to weights.
    if (!any) mass.assign(w.begin(), w.end());
    centers.push_back(draw(mass));
  }
  return centers;
}

}  // namespace detail

/// Closed-form weighted maximum-likelihood Gaussian. The covariance is the
/// weighted scatter about the weighted mean; it may be singular (a point mass
/// for a single positive weight), callers regularize.
inline Gaussian fit_weighted_gaussian(std::span<const Vector> samples, std::span<const double> weights) {
  const int d = detail::check_samples(samples);
  const double sum = detail::check_weights(samples, weights);
  Vector mean = Vector::Zero(d);
  for (std::size_t j = 0; j < samples.size(); ++j)
    if (weights[j] > 0.0) mean += (weights[j] / sum) * samples[j];
  Matrix cov = Matrix::Zero(d, d);
  for (std::size_t j = 0; j < samples.size(); ++j) {
    if (weights[j] == 0.0) continue;
    Vector diff = mean - samples[j];
    cov.noalias() += (weights[j] / sum) * diff * diff.transpose();
  }
  return Gaussian(std::move(mean), std::move(cov));
}

inline Gaussian fit_weighted_gaussian(std::span<const Vector> samples, std::span<const double> weights,
                                      double cov_floor) {
  Gaussian g = fit_weighted_gaussian(samples, weights);
  return detail::make_component(g.mean(),
                                g.cov() + cov_floor * Matrix::Identity(g.dim(), g.dim()));
}

/// Weighted EM: each sample's responsibilities are scaled by its weight. The
/// reported log-likelihood is sum_j w_j log p(x_j) with the weights as given.
/// With `init` the first responsibilities come from that model instead of
/// k-means++ seeding.
inline GmmModel fit_weighted_gmm(std::span<const Vector> samples, std::span<const double> weights,
                                 const FitConfig& cfg, FitTrace* trace = nullptr, const GmmModel* init = nullptr) {
  if (cfg.k < 1) throw InvalidArgument("fit: k must be at least 1");
  if (!(cfg.cov_floor >= 0.0)) throw InvalidArgument("fit: cov_floor must be nonnegative");
  const int d = detail::check_samples(samples);
  const double wsum = detail::check_weights(samples, weights);
  const std::size_t n = samples.size();
  const int k = cfg.k;
  if (n < static_cast<std::size_t>(k) * static_cast<std::size_t>(d + 1))
    throw InsufficientData("fit: need at least " + std::to_string(k * (d + 1)) + " samples for k=" +
                           std::to_string(k) + " in dimension " + std::to_string(d) + ", got " +
                           std::to_string(n));

  std::vector<double> wbar(n);
  for (std::size_t j = 0; j < n; ++j) wbar[j] = weights[j] / wsum;

  // resp(j, c): responsibility of component c for sample j.
  Matrix resp = Matrix::Zero(static_cast<Eigen::Index>(n), k);
  std::vector<Gaussian> comps(k);
  std::vector<double> mix(k, 1.0 / k);
  if (init && (init->k() != k || init->dim() != d)) throw InvalidArgument("fit: init model does not match k or dimension");
  if (!init) {
    auto centers = detail::seed_centers(samples, wbar, k, cfg.seed);
    for (std::size_t j = 0; j < n; ++j) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double dd = (samples[j] - samples[centers[c]]).squaredNorm();
        if (dd < bd) bd = dd, best = c;
      }
      resp(static_cast<Eigen::Index>(j), best) = 1.0;
    }
    // Hard assignment can leave a duplicated center empty; give it its seed.
    for (int c = 0; c < k; ++c)
      if (resp.col(c).sum() == 0.0) resp.row(centers[c]).setZero(), resp(centers[c], c) = 1.0;
  }

  auto m_step = [&] {
    for (int c = 0; c < k; ++c) {
      double nc = 0.0;
      for (std::size_t j = 0; j < n; ++j) nc += wbar[j] * resp(static_cast<Eigen::Index>(j), c);
      if (!(nc > 0.0)) {
        // Empty component: keep its parameters, drop its mass.
        mix[c] = 0.0;
        if (comps[c].dim() == 0)
          comps[c] = detail::make_component(samples[0], cfg.cov_floor * Matrix::Identity(d, d));
        continue;
      }
      Vector mu = Vector::Zero(d);
      for (std::size_t j = 0; j < n; ++j) {
        double r = wbar[j] * resp(static_cast<Eigen::Index>(j), c);
        if (r > 0.0) mu += (r / nc) * samples[j];
      }
      Matrix cov = Matrix::Zero(d, d);
      for (std::size_t j = 0; j < n; ++j) {
        double r = wbar[j] * resp(static_cast<Eigen::Index>(j), c);
        if (r == 0.0) continue;
        Vector diff = mu - samples[j];
        cov.noalias() += (r / nc) * diff * diff.transpose();
      }
      // Maximizer of the floor-penalized objective below; reduces to +cov_floor when k = 1.
      cov.diagonal().array() += cfg.cov_floor / nc;
      comps[c] = detail::make_component(std::move(mu), std::move(cov));
      mix[c] = nc;
    }
  };

  std::vector<double> terms(k);
  auto e_step = [&] {
    double ll = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      for (int c = 0; c < k; ++c)
        terms[c] = mix[c] > 0.0 ? std::log(mix[c]) + comps[c].log_pdf(samples[j])
                                : -std::numeric_limits<double>::infinity();
      double lse = log_sum_exp(terms);
      for (int c = 0; c < k; ++c) resp(static_cast<Eigen::Index>(j), c) = std::exp(terms[c] - lse);
      if (weights[j] > 0.0) ll += weights[j] * lse;
    }
    // -cov_floor/2 * tr(inverse covariance) per live component, so that EM ascends it exactly.
    if (cfg.cov_floor > 0.0)
      for (int c = 0; c < k; ++c)
        if (mix[c] > 0.0) ll -= 0.5 * cfg.cov_floor * wsum * comps[c].inverse_trace();
    return ll;
  };

  if (init) {
    comps = init->components();
    mix = init->weights();
    e_step();
  }
  m_step();
  double prev = e_step();
  if (trace) trace->loglik.assign(1, prev);
  for (int it = 0; it < cfg.max_iters; ++it) {
    m_step();
    double ll = e_step();
    if (trace) trace->loglik.push_back(ll);
    if (std::abs(ll - prev) <= cfg.loglik_tol * std::max(1.0, std::abs(prev))) break;
    prev = ll;
  }
  return GmmModel(mix, comps);
}

inline GmmModel fit_em(std::span<const Vector> samples, const FitConfig& cfg, FitTrace* trace = nullptr) {
  std::vector<double> ones(samples.size(), 1.0);
  return fit_weighted_gmm(samples, ones, cfg, trace);
}

/// Sum of log-densities of the samples under the model.
inline double total_log_likelihood(const GmmModel& model, std::span<const Vector> samples) {
  double s = 0.0;
  for (const auto& x : samples) s += model.log_pdf(x);
  return s;
}

inline Gaussian regularize(const Gaussian& g, double diag_term) {
  if (!(diag_term >= 0.0)) throw InvalidArgument("regularize: diag_term must be nonnegative");
  if (diag_term == 0.0) return g;
  return Gaussian(g.mean(), g.cov() + diag_term * Matrix::Identity(g.dim(), g.dim()));
}

inline GmmModel regularize(const GmmModel& model, double diag_term) {
  if (!(diag_term >= 0.0)) throw InvalidArgument("regularize: diag_term must be nonnegative");
  if (diag_term == 0.0) return model;
  std::vector<Gaussian> comps;
  comps.reserve(model.components().size());
  for (const auto& g : model.components()) comps.push_back(regularize(g, diag_term));
  return GmmModel(model.weights(), std::move(comps));
}

}  // namespace demoplan::gmm
