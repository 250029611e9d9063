#pragma once

// Comparison methods: a greedy one-step controller (Naive) and the optimizer
// without the successor-skill factor (No-Goal).

#include <cmath>
#include <cstdlib>
#include <limits>
#include <vector>

#include "demoplan/errors.hpp"
#include "demoplan/features.hpp"
#include "demoplan/needle.hpp"
#include "demoplan/optimizer.hpp"
#include "demoplan/skills.hpp"

namespace demoplan::baselines {

using gmm::Vector;
using needle::Control;
using needle::Level;
using needle::NeedleState;
using needle::Trace;

struct ControlGrid {
  std::vector<double> u;
  std::vector<double> v;

  /// `nu` rotations over [-u_max, u_max] and `nv` speeds over [0, v_max],
  /// endpoints included. An odd `nu` puts 0 on the grid.
  static ControlGrid uniform(const Level& level, int nu = 21, int nv = 11) {
    if (nu < 1 || nv < 1) throw InvalidArgument("control grid: need at least one candidate per axis");
    ControlGrid g;
    for (int i = 0; i < nu; ++i)
      g.u.push_back(nu == 1 ? 0.0 : -level.u_max + 2.0 * level.u_max * i / (nu - 1));
    if (nu % 2 == 1) g.u[static_cast<std::size_t>(nu / 2)] = 0.0;
    for (int i = 0; i < nv; ++i) g.v.push_back(nv == 1 ? level.v_max : level.v_max * i / (nv - 1));
    return g;
  }
};

/// True if candidate a beats b on a tie: smaller |u|, then larger v.
inline bool tie_prefers(const Control& a, const Control& b) {
  if (std::abs(a.u) != std::abs(b.u)) return std::abs(a.u) < std::abs(b.u);
  return a.v > b.v;
}

/// Greedy control: simulate each grid candidate for one step and keep the one
/// whose post-step features are most likely under the active skill. As in a
/// recorded trace, the candidate is the control at s and is held at s'.
inline Control naive_step(const skills::SkillLibrary& lib, const NeedleState& s, const Level& level,
                          needle::GateHistory& history, const ControlGrid& grid) {
  const ActionLabel label = skills::label_for(needle::eval_predicates(s, level, history));
  if (label.kind == ActionKind::Done) return {0.0, 0.0};
  const skills::SkillModel& skill = lib.at(label.kind);
  Control best{};
  double best_ll = -std::numeric_limits<double>::infinity();
  bool have = false;
  for (double u : grid.u)
    for (double v : grid.v) {
      const Control c{u, v};
      const Vector before = features::base_features(s, c, level, label);
      const NeedleState next = needle::step(s, c);
      const double ll = skill.log_likelihood(features::action_features(next, c, level, label, &before));
      if (!have || ll > best_ll || (ll == best_ll && tie_prefers(c, best))) {
        best = c;
        best_ll = ll;
        have = true;
      }
    }
  if (!have) throw InvalidArgument("naive_step: empty control grid");
  return best;
}

/// Steps needed to cross the level in a straight line at full speed.
inline int crossing_steps(const Level& level) {
  return static_cast<int>(std::ceil(std::max(level.width - level.start.x, 1.0) / level.v_max));
}

/// Applies naive_step until the needle exits or `max_steps` is reached
/// (default four straight-line crossings).
inline Trace run_naive(const skills::SkillLibrary& lib, const Level& level, const NeedleState& s0, int max_steps = -1,
                       const ControlGrid* grid = nullptr) {
  if (max_steps < 0) max_steps = 4 * crossing_steps(level);
  const ControlGrid g = grid ? *grid : ControlGrid::uniform(level);
  needle::GateHistory history(level);
  Trace trace{{0, s0, {}}};
  for (int t = 0; t < max_steps && !level.at_exit(trace.back().state); ++t) {
    const Control c = naive_step(lib, trace.back().state, level, history, g);
    trace.back().control = c;
    trace.push_back({t + 1, needle::step(trace.back().state, c), c});
  }
  return trace;
}

/// plan_task with every successor dropped.
inline opt::PlanResult plan_no_goal(const skills::SkillChain& chain, const skills::SkillLibrary& lib, const Level& level,
                                    const NeedleState& s0, const opt::OptimizerConfig& cfg,
                                    const opt::OptimizeOptions& opts = {}) {
  return opt::plan_task(chain, lib, level, s0, cfg, false, opts);
}

}  // namespace demoplan::baselines
