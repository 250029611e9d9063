#pragma once

// Stochastic trajectory optimization against expert feature densities.
//
// Each iteration draws M valid trajectory parameters from a surrogate density,
// rolls them out, scores every step's features under the active skill (and the
// final state's features under the successor skill), refits the surrogate by
// weighted maximum likelihood, blends it with the previous one using the step
// size alpha, and adds a decaying term to the covariance diagonal.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "demoplan/errors.hpp"
#include "demoplan/features.hpp"
#include "demoplan/gmm.hpp"
#include "demoplan/needle.hpp"
#include "demoplan/random.hpp"
#include "demoplan/skills.hpp"

namespace demoplan::opt {

using gmm::Matrix;
using gmm::Vector;
using needle::Level;
using needle::NeedleState;
using needle::Trace;
using needle::TrajectoryParam;

struct OptimizerConfig {
  /// Samples per iteration (M).
  int samples = 100;
  int iters = 30;
  /// Step size in (0, 1).
  double alpha = 0.75;
  /// Initial diagonal noise, in units of each parameter's squared scale
  /// (u_max^2 for rotations, v_max^2 for speeds, nominal duration^2 for
  /// durations).
  double noise0 = 0.05;
  /// Multiplicative decay of the diagonal noise per iteration.
  double noise_decay = 0.85;
  /// Number of piecewise-constant segments (K).
  int segments = 3;
  /// Rejected draws allowed per iteration before giving up.
  int max_rejections = 20000;
  std::uint64_t seed = 0;
  /// Stop once the cost changes by less than 1e-4 (relative) for 3 iterations.
  bool early_stop = true;
  /// Surrogate components; 1 is a single Gaussian, more uses weighted EM.
  int surrogate_k = 1;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("optimizer: alpha must lie in (0, 1)");
    if (samples < 2) throw ConfigError("optimizer: need at least 2 samples per iteration");
    if (iters < 1) throw ConfigError("optimizer: need at least 1 iteration");
    if (segments < 1) throw ConfigError("optimizer: need at least 1 segment");
    if (!(noise0 >= 0.0)) throw ConfigError("optimizer: noise0 must be nonnegative");
    if (!(noise_decay > 0.0 && noise_decay <= 1.0)) throw ConfigError("optimizer: noise_decay must lie in (0, 1]");
    if (surrogate_k < 1) throw ConfigError("optimizer: surrogate_k must be at least 1");
    if (max_rejections < 0) throw ConfigError("optimizer: max_rejections must be nonnegative");
  }
};

// ---------------------------------------------------------------------------
// Surrogate density over flattened trajectory parameters

class Surrogate {
 public:
  Surrogate() = default;
  explicit Surrogate(gmm::Gaussian g) : density_(std::move(g)) {}
  explicit Surrogate(gmm::GmmModel m) : density_(std::move(m)) {}

  bool is_mixture() const { return std::holds_alternative<gmm::GmmModel>(density_); }
  const gmm::Gaussian& gaussian() const { return std::get<gmm::Gaussian>(density_); }
  const gmm::GmmModel& mixture() const { return std::get<gmm::GmmModel>(density_); }

  int dim() const {
    return is_mixture() ? mixture().dim() : gaussian().dim();
  }

  template <class Gen>
  Vector sample(Gen& gen) const {
    return is_mixture() ? mixture().sample(gen) : gaussian().sample(gen);
  }

  /// Mixture-weighted mean.
  Vector mean() const {
    if (!is_mixture()) return gaussian().mean();
    Vector m = Vector::Zero(dim());
    for (int c = 0; c < mixture().k(); ++c) m += mixture().weights()[c] * mixture().component(c).mean();
    return m;
  }

 private:
  std::variant<gmm::Gaussian, gmm::GmmModel> density_;
};

/// The feasible parameter box. Samples are projected into it: rotations and
/// speeds are clamped to the level limits, durations to [0, t_max].
struct ParamDomain {
  int segments = 3;
  double u_max = 0.2;
  double v_max = 2.0;
  double t_max = 100.0;

  Vector project(Vector p) const {
    for (int k = 0; k < segments; ++k) {
      p[3 * k] = std::clamp(p[3 * k], -u_max, u_max);
      p[3 * k + 1] = std::clamp(p[3 * k + 1], 0.0, v_max);
      p[3 * k + 2] = std::clamp(p[3 * k + 2], 0.0, t_max);
    }
    return p;
  }
};

inline TrajectoryParam to_param(const Vector& v) {
  return TrajectoryParam::unflatten(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector to_vector(const TrajectoryParam& p) {
  auto f = p.flatten();
  return Eigen::Map<Vector>(f.data(), static_cast<Eigen::Index>(f.size()));
}

// ---------------------------------------------------------------------------
// One action's optimization problem

struct ActionProblem {
  const Level* level = nullptr;
  NeedleState start;
  int t0 = 0;
  /// Tissue damage already accrued before this action.
  double initial_damage = 0.0;
  ActionLabel label;
  const skills::SkillModel* skill = nullptr;
  /// Successor action and its skill; both unset for the last motion or the
  /// goal-free variant.
  std::optional<ActionLabel> next_label;
  const skills::SkillModel* next_skill = nullptr;
  /// Gate history before the start state; unset means a fresh level.
  std::optional<needle::GateHistory> history;
};

/// Ends a rollout where the action completes: at the first state whose
/// predicate label differs from the action's after the action has been
/// active, as segmentation would split it. That state is kept; it is where
/// the successor begins. Rollouts that never complete are returned whole.
inline Trace truncate_at_completion(Trace trace, const ActionProblem& p) {
  needle::GateHistory h = p.history ? *p.history : needle::GateHistory(*p.level);
  bool active = false;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const bool same = skills::label_for(needle::eval_predicates(trace[i].state, *p.level, h)) == p.label;
    if (same) {
      active = true;
    } else if (active) {
      trace.resize(i + 1);
      trace.back().control = trace[i - 1].control;
      break;
    }
  }
  return trace;
}

/// Nominal number of steps for an action at half the maximum speed.
inline double action_horizon(const ActionProblem& p) {
  const Level& l = *p.level;
  const double v = 0.5 * l.v_max;
  auto to_gate = [&](int g) {
    const auto& gate = l.gates.at(static_cast<std::size_t>(g));
    return std::hypot(gate.x - p.start.x, gate.y - p.start.y) / v + 3.0;
  };
  switch (p.label.kind) {
    case ActionKind::ApproachGate: return to_gate(p.label.gate);
    case ActionKind::ConnectGates: return to_gate(p.label.next_gate);
    case ActionKind::PassThroughGate: return (l.gates.at(static_cast<std::size_t>(p.label.gate)).width + 6.0) / v;
    case ActionKind::MoveToExit: return std::max(l.width - p.start.x, 0.0) / v + 5.0;
    case ActionKind::Done: break;
  }
  throw InvalidArgument("optimize: DONE is not a motion");
}

inline ParamDomain make_domain(const ActionProblem& p, const OptimizerConfig& cfg) {
  return {cfg.segments, p.level->u_max, p.level->v_max, 2.0 * action_horizon(p)};
}

/// Per-dimension scale used for the initial covariance and the diagonal noise.
inline Vector param_scale(const ActionProblem& p, const OptimizerConfig& cfg) {
  const double t_nom = action_horizon(p) / cfg.segments;
  Vector s(3 * cfg.segments);
  for (int k = 0; k < cfg.segments; ++k) {
    s[3 * k] = p.level->u_max;
    s[3 * k + 1] = p.level->v_max;
    s[3 * k + 2] = t_nom;
  }
  return s;
}

/// Zero rotation, half the maximum speed, equal durations summing to the
/// action horizon; standard deviations of half the rotation limit, a quarter
/// of the speed limit and half the nominal duration.
inline Surrogate initial_surrogate(const ActionProblem& p, const OptimizerConfig& cfg) {
  const int d = 3 * cfg.segments;
  const double t_nom = action_horizon(p) / cfg.segments;
  Vector mean(d), sd(d);
  for (int k = 0; k < cfg.segments; ++k) {
    mean[3 * k] = 0.0;
    mean[3 * k + 1] = 0.5 * p.level->v_max;
    mean[3 * k + 2] = t_nom;
    sd[3 * k] = 0.5 * p.level->u_max;
    sd[3 * k + 1] = 0.25 * p.level->v_max;
    sd[3 * k + 2] = 0.5 * t_nom;
  }
  Matrix cov = sd.cwiseAbs2().asDiagonal();
  if (cfg.surrogate_k == 1) return Surrogate(gmm::Gaussian(mean, cov));
  // Mixture: identical broad components with slightly spread rotations.
  std::vector<gmm::Gaussian> comps;
  for (int c = 0; c < cfg.surrogate_k; ++c) {
    Vector m = mean;
    const double off = cfg.surrogate_k == 1 ? 0.0 : (2.0 * c / (cfg.surrogate_k - 1) - 1.0) * 0.25 * p.level->u_max;
    for (int k = 0; k < cfg.segments; ++k) m[3 * k] = off;
    comps.emplace_back(m, cov);
  }
  return Surrogate(gmm::GmmModel(std::vector<double>(static_cast<std::size_t>(cfg.surrogate_k), 1.0), comps));
}

// ---------------------------------------------------------------------------
// Sampling

struct Sample {
  Vector param;
  Trace trace;
};

struct SampleStats {
  int draws = 0;
  int rejections = 0;

  double acceptance_rate() const { return draws > 0 ? static_cast<double>(draws - rejections) / draws : 0.0; }
};

/// Draws until `count` projected samples roll out to valid traces. Draw j of
/// iteration i uses the random stream (seed, i, j).
inline std::vector<Sample> sample_valid(const Surrogate& surrogate, const ActionProblem& p, const ParamDomain& domain,
                                        int count, int max_rejections, std::uint64_t seed, int iteration,
                                        SampleStats* stats = nullptr) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  SampleStats local;
  for (std::uint64_t j = 0; static_cast<int>(out.size()) < count; ++j) {
    Rng gen = derive_rng(seed, {static_cast<std::uint64_t>(iteration), j});
    Vector param = domain.project(surrogate.sample(gen));
    Trace trace = truncate_at_completion(needle::rollout_primitives(p.start, to_param(param), p.t0), p);
    ++local.draws;
    if (needle::check_valid(trace, *p.level, p.initial_damage)) {
      out.push_back({std::move(param), std::move(trace)});
    } else if (++local.rejections > max_rejections) {
      if (stats) *stats = local;
      throw Infeasible("sample_valid: " + std::to_string(local.rejections) + " of " + std::to_string(local.draws) +
                       " draws rejected (acceptance rate " + std::to_string(local.acceptance_rate()) +
                       ") before collecting " + std::to_string(count) + " valid samples");
    }
  }
  if (stats) *stats = local;
  return out;
}

// ---------------------------------------------------------------------------
// Weights

/// Features of one rolled-out sample: a row per step under the active action,
/// and the final state's features under the successor action.
struct SampleFeatures {
  std::vector<Vector> rows;
  std::optional<Vector> final_next;
};

inline SampleFeatures extract_features(const Trace& trace, const ActionProblem& p) {
  SampleFeatures f;
  f.rows = features::clip_features(trace, *p.level, p.label);
  if (p.next_label && p.next_skill)
    f.final_next = features::action_features(trace.back().state, trace.back().control, *p.level, *p.next_label, nullptr);
  return f;
}

struct Weights {
  /// log w_j = log sum_i p_D(x_ij | A_k) + log p_D(x_Nj | A_k+1).
  std::vector<double> log_w;
  /// exp(log_w - max log_w).
  std::vector<double> w;
  /// Per-sample mean over steps of -log p_D(x_ij | A_k) p_D(x_Nj | A_k+1),
  /// i.e. the step average plus the goal term when there is a successor.
  std::vector<double> mean_nll;
  /// The goal term -log p_D(x_Nj | A_k+1) alone; zero without a successor.
  std::vector<double> goal_nll;
};

/// w_ij = p_D(x_ij|A_k) p_D(x_Nj|A_k+1) and w_j = sum_i w_ij, all in log space.
/// Without a successor skill the goal factor is 1.
inline Weights compute_weights(std::span<const SampleFeatures> samples, const skills::SkillModel& skill,
                               const skills::SkillModel* next_skill) {
  Weights out;
  const std::size_t m = samples.size();
  out.log_w.resize(m);
  out.w.resize(m);
  out.mean_nll.resize(m);
  out.goal_nll.assign(m, 0.0);
  std::vector<double> terms;
  for (std::size_t j = 0; j < m; ++j) {
    const auto& s = samples[j];
    if (s.rows.empty()) throw InvalidArgument("compute_weights: sample without feature rows");
    terms.resize(s.rows.size());
    double nll = 0.0;
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
      terms[i] = skill.log_likelihood(s.rows[i]);
      nll -= terms[i];
    }
    double lw = gmm::log_sum_exp(terms);
    if (next_skill) {
      if (!s.final_next) throw InvalidArgument("compute_weights: successor skill given without final features");
      const double goal = next_skill->log_likelihood(*s.final_next);
      lw += goal;
      out.goal_nll[j] = -goal;
    }
    out.mean_nll[j] = nll / static_cast<double>(s.rows.size()) + out.goal_nll[j];
    out.log_w[j] = lw;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double lw : out.log_w) mx = std::max(mx, lw);
  if (!std::isfinite(mx)) throw DegenerateWeights("compute_weights: every sample has zero weight");
  for (std::size_t j = 0; j < m; ++j) out.w[j] = std::exp(out.log_w[j] - mx);
  return out;
}

// ---------------------------------------------------------------------------
// Surrogate update

/// Closed-form (or weighted-EM) refit, convex blend with the previous
/// surrogate, then `noise_diag` added to every covariance diagonal.
inline Surrogate update_surrogate(std::span<const Vector> params, std::span<const double> weights, const Surrogate& prev,
                                  double alpha, const Vector& noise_diag) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("update_surrogate: alpha must lie in [0, 1]");
  if (noise_diag.size() != prev.dim()) throw InvalidArgument("update_surrogate: noise has the wrong dimension");
  auto blend = [&](const gmm::Gaussian& old, const Vector& mu, const Matrix& cov) {
    Vector m = (1.0 - alpha) * old.mean() + alpha * mu;
    Matrix s = (1.0 - alpha) * old.cov() + alpha * cov;
    s.diagonal() += noise_diag;
    return gmm::Gaussian(std::move(m), std::move(s));
  };
  if (!prev.is_mixture()) {
    gmm::Gaussian fit = gmm::fit_weighted_gaussian(params, weights);
    return Surrogate(blend(prev.gaussian(), fit.mean(), fit.cov()));
  }
  const gmm::GmmModel& old = prev.mixture();
  gmm::FitConfig fc;
  fc.k = old.k();
  fc.max_iters = 20;
  fc.cov_floor = 0.0;
  gmm::GmmModel fit = gmm::fit_weighted_gmm(params, weights, fc, nullptr, &old);
  std::vector<gmm::Gaussian> comps;
  std::vector<double> w;
  for (int c = 0; c < old.k(); ++c) {
    comps.push_back(blend(old.component(c), fit.component(c).mean(), fit.component(c).cov()));
    w.push_back((1.0 - alpha) * old.weights()[c] + alpha * fit.weights()[c]);
  }
  return Surrogate(gmm::GmmModel(w, comps));
}

inline Surrogate update_surrogate(std::span<const Vector> params, std::span<const double> weights, const Surrogate& prev,
                                  double alpha, double noise) {
  return update_surrogate(params, weights, prev, alpha, Vector::Constant(prev.dim(), noise));
}

// ---------------------------------------------------------------------------
// Optimization loop

struct IterationLog {
  int iteration = 0;
  double cost = 0.0;
  double acceptance_rate = 0.0;
  int draws = 0;
  double best_log_weight = 0.0;
  double noise = 0.0;
  std::vector<double> surrogate_mean;
  std::vector<double> surrogate_sd;
};

struct OptResult {
  TrajectoryParam best_param;
  Trace best_trace;
  double best_log_weight = -std::numeric_limits<double>::infinity();
  /// Mean negative expert log-likelihood of the samples drawn at each iteration.
  std::vector<double> cost_trace;
  std::vector<IterationLog> log;
  Surrogate final_surrogate;
};

struct OptimizeOptions {
  /// Called for every sample the loop consumes, before weighting.
  std::function<void(const ActionProblem&, const Trace&)> on_sample;
};

inline bool cost_converged(const std::vector<double>& c) {
  if (c.size() < 4) return false;
  for (std::size_t i = c.size() - 3; i < c.size(); ++i) {
    const double denom = std::max(std::abs(c[i - 1]), 1e-12);
    if (std::abs(c[i] - c[i - 1]) / denom >= 1e-4) return false;
  }
  return true;
}

inline OptResult optimize(const ActionProblem& p, const OptimizerConfig& cfg, const OptimizeOptions& opts = {}) {
  cfg.validate();
  if (!p.level || !p.skill) throw InvalidArgument("optimize: level and skill are required");
  if (p.skill->kind != p.label.kind)
    throw InvalidArgument("optimize: skill " + std::string(to_string(p.skill->kind)) + " does not match action " +
                          p.label.str());
  if (p.next_skill && (!p.next_label || p.next_skill->kind != p.next_label->kind))
    throw InvalidArgument("optimize: successor skill does not match successor action");

  const ParamDomain domain = make_domain(p, cfg);
  const Vector scale2 = param_scale(p, cfg).cwiseAbs2();
  Surrogate surrogate = initial_surrogate(p, cfg);
  OptResult result;
  double noise = cfg.noise0;
  for (int it = 0; it < cfg.iters; ++it) {
    try {
      SampleStats stats;
      std::vector<Sample> samples =
          sample_valid(surrogate, p, domain, cfg.samples, cfg.max_rejections, cfg.seed, it, &stats);
      std::vector<SampleFeatures> feats;
      feats.reserve(samples.size());
      for (const auto& s : samples) feats.push_back(extract_features(s.trace, p));
      Weights w = compute_weights(feats, *p.skill, p.next_skill);

      double cost = 0.0;
      for (double c : w.mean_nll) cost += c;
      cost /= static_cast<double>(samples.size());
      result.cost_trace.push_back(cost);
      for (std::size_t j = 0; j < samples.size(); ++j)
        if (w.log_w[j] > result.best_log_weight) {
          result.best_log_weight = w.log_w[j];
          result.best_param = to_param(samples[j].param);
          result.best_trace = samples[j].trace;
        }
      if (opts.on_sample)
        for (const auto& s : samples) opts.on_sample(p, s.trace);

      std::vector<Vector> params;
      params.reserve(samples.size());
      for (auto& s : samples) params.push_back(std::move(s.param));
      surrogate = update_surrogate(params, w.w, surrogate, cfg.alpha, Vector(noise * scale2));

      IterationLog entry;
      entry.iteration = it;
      entry.cost = cost;
      entry.acceptance_rate = stats.acceptance_rate();
      entry.draws = stats.draws;
      entry.best_log_weight = result.best_log_weight;
      entry.noise = noise;
      Vector mean = surrogate.mean();
      entry.surrogate_mean.assign(mean.data(), mean.data() + mean.size());
      if (!surrogate.is_mixture()) {
        Vector sd = surrogate.gaussian().cov().diagonal().cwiseSqrt();
        entry.surrogate_sd.assign(sd.data(), sd.data() + sd.size());
      }
      result.log.push_back(std::move(entry));
    } catch (const Error& e) {
      std::string msg = "iteration " + std::to_string(it) + ": " + e.what();
      if (e.kind() == "infeasible") throw Infeasible(msg);
      if (e.kind() == "degenerate-weights") throw DegenerateWeights(msg);
      throw;
    }
    noise *= cfg.noise_decay;
    if (cfg.early_stop && cost_converged(result.cost_trace)) break;
  }
  result.final_surrogate = std::move(surrogate);
  return result;
}

// ---------------------------------------------------------------------------
// Task execution

struct ActionSpan {
  ActionLabel label;
  /// First and last index of the action inside the concatenated trace.
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct PlanResult {
  Trace trace;
  std::vector<ActionSpan> actions;
  std::vector<OptResult> results;
  bool complete = false;
  /// Set when an action failed; the trace holds everything planned before it.
  std::string error;
  int failed_action = -1;
};

/// Optimizes every motion in the chain in order, each starting where the
/// previous one ended. With `use_goal` the successor skill's density at the
/// final state enters the weights; otherwise every action is optimized alone.
inline PlanResult plan_task(const skills::SkillChain& chain, const skills::SkillLibrary& library, const Level& level,
                            const NeedleState& s0, const OptimizerConfig& cfg, bool use_goal = true,
                            const OptimizeOptions& opts = {}) {
  cfg.validate();
  PlanResult plan;
  plan.trace.push_back({0, s0, {}});
  for (std::size_t a = 0; a < chain.elements.size(); ++a) {
    const auto& el = chain.elements[a];
    if (el.label.kind == ActionKind::Done) break;
    ActionProblem p;
    p.level = &level;
    p.start = plan.trace.back().state;
    p.t0 = plan.trace.back().t;
    p.initial_damage = needle::trace_damage(plan.trace, level);
    p.label = el.label;
    needle::GateHistory h(level);
    for (std::size_t i = 0; i + 1 < plan.trace.size(); ++i) needle::eval_predicates(plan.trace[i].state, level, h);
    p.history = std::move(h);
    try {
      p.skill = &library.at(el.label.kind);
      if (use_goal && el.successor) {
        const ActionLabel& next = chain.elements.at(*el.successor).label;
        if (next.kind != ActionKind::Done) {
          p.next_label = next;
          p.next_skill = &library.at(next.kind);
        }
      }
      OptimizerConfig acfg = cfg;
      acfg.seed = splitmix64(cfg.seed ^ splitmix64(a + 1));
      OptResult r = optimize(p, acfg, opts);
      const std::size_t begin = plan.trace.size() - 1;
      plan.trace.pop_back();
      plan.trace.insert(plan.trace.end(), r.best_trace.begin(), r.best_trace.end());
      plan.actions.push_back({el.label, begin, plan.trace.size() - 1});
      plan.results.push_back(std::move(r));
      if (level.at_exit(plan.trace.back().state)) break;
    } catch (const Error& e) {
      plan.error = "action " + std::to_string(a) + " " + el.label.str() + ": " + e.what();
      plan.failed_action = static_cast<int>(a);
      return plan;
    }
  }
  plan.complete = true;
  return plan;
}

}  // namespace demoplan::opt
