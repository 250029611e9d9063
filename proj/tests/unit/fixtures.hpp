#pragma once

// Hand-built levels, trace helpers and reference implementations of the
// domain rules used as oracles.

#include <cmath>
#include <vector>

#include "demoplan/demonstrator.hpp"
#include "demoplan/level_gen.hpp"
#include "demoplan/needle.hpp"
#include "demoplan/skills.hpp"

namespace fx {

using namespace demoplan;
using namespace demoplan::needle;

/// Empty 100x60 level, start at mid-height facing +x.
inline Level empty_level(std::string id = "empty") {
  Level l;
  l.id = std::move(id);
  l.start = {2.0, 30.0, 0.0};
  return l;
}

inline Level one_gate_level() {
  Level l = empty_level("one-gate");
  l.gates.push_back({50.0, 30.0, 0.0, 4.0, 14.0});
  return l;
}

inline Level two_gate_level() {
  Level l = empty_level("two-gate");
  l.gates.push_back({35.0, 30.0, 0.0, 4.0, 14.0});
  l.gates.push_back({70.0, 30.0, 0.0, 4.0, 14.0});
  return l;
}

inline Polygon rect(double x0, double y0, double x1, double y1) {
  return {{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}};
}

/// Trace from applying `controls` in order.
inline Trace drive(const NeedleState& s0, const std::vector<Control>& controls, int t0 = 0) {
  Trace t{{t0, s0, {}}};
  for (const auto& c : controls) {
    t.back().control = c;
    t.push_back({t.back().t + 1, step(t.back().state, c), c});
  }
  return t;
}

inline Trace straight(const NeedleState& s0, double v, int n) {
  return drive(s0, std::vector<Control>(static_cast<std::size_t>(n), Control{0.0, v}));
}

/// Trace with arbitrary states, controls left at zero.
inline Trace poses(const std::vector<NeedleState>& states) {
  Trace t;
  for (std::size_t i = 0; i < states.size(); ++i) t.push_back({static_cast<int>(i), states[i], {}});
  return t;
}

// ---------------------------------------------------------------------------
// Reference scorer: scans each gate's in-gate runs directly.

inline Metrics reference_score(const Trace& trace, const Level& level) {
  Metrics m;
  const std::size_t n = level.gates.size();
  std::vector<long> first(n, -1);
  std::vector<bool> broken(n, false), traversed(n, false);
  for (std::size_t g = 0; g < n; ++g) {
    const Gate& gate = level.gates[g];
    auto local = [&](const NeedleState& s) {
      const double dx = s.x - gate.x, dy = s.y - gate.y;
      return std::pair{dx * std::cos(gate.theta) + dy * std::sin(gate.theta),
                       -dx * std::sin(gate.theta) + dy * std::cos(gate.theta)};
    };
    auto inside = [&](const NeedleState& s) {
      auto [a, c] = local(s);
      return std::abs(a) <= gate.width / 2 && std::abs(c) <= gate.height / 2;
    };
    for (std::size_t i = 0; i < trace.size(); ++i) {
      if (!inside(trace[i].state)) continue;
      if (first[g] < 0) first[g] = static_cast<long>(i);
      if (std::abs(local(trace[i].state).second) > (0.5 - level.bar_fraction) * gate.height) broken[g] = true;
      // Start of a run: check it comes from behind and leaves through the front.
      if (i > 0 && !inside(trace[i - 1].state) && local(trace[i - 1].state).first < 0) {
        std::size_t j = i;
        while (j < trace.size() && inside(trace[j].state)) ++j;
        if (j < trace.size() && local(trace[j].state).first > 0) traversed[g] = true;
      }
    }
  }
  for (std::size_t g = 0; g < n; ++g) {
    if (first[g] < 0) continue;
    ++m.gates_entered;
    if (broken[g]) ++m.gates_broken;
    bool ordered = true;
    for (std::size_t h = 0; h < g; ++h) ordered = ordered && first[h] >= 0 && first[h] <= first[g];
    for (std::size_t h = g + 1; h < n; ++h) ordered = ordered && (first[h] < 0 || first[h] >= first[g]);
    if (ordered && traversed[g] && !broken[g]) ++m.gates_cleared;
  }
  m.finished = !trace.empty() && trace.back().state.x > level.width;
  return m;
}

/// Index of the first state whose running damage total exceeds the budget.
inline int damage_crossing(const Trace& trace, const Level& level) {
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
    if (level.in_tissue(trace[i].state.x, trace[i].state.y)) sum += std::abs(trace[i].control.u) * level.damage_rate;
    if (sum > level.damage_budget) return static_cast<int>(i);
  }
  return -1;
}

// ---------------------------------------------------------------------------
// Shared trained skills: 5 generated two-gate levels, 3 scripted demos each.

struct Trained {
  std::vector<Level> levels;
  std::vector<Demonstration> demos;
  skills::SkillLibrary lib;
};

inline const Trained& trained() {
  static const Trained t = [] {
    Trained r;
    for (int i = 0; i < 5; ++i) {
      LevelSpec spec;
      spec.seed = 100 + static_cast<std::uint64_t>(i);
      r.levels.push_back(generate_level(spec));
      auto d = scripted_demonstrations(r.levels.back(), 3, 1000 + static_cast<std::uint64_t>(i));
      r.demos.insert(r.demos.end(), d.begin(), d.end());
    }
    r.lib = skills::train_library(r.demos, r.levels);
    return r;
  }();
  return t;
}

}  // namespace fx
