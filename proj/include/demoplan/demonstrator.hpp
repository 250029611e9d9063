#pragma once

// Built-in scripted demonstrator: feedback steering that lines the needle up
// with each gate's passage direction, drives through the gate center and then
// heads for the right edge. Per-demonstration speed, gain and lookahead are
// drawn from a seed so repeated demonstrations of one level differ.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "demoplan/needle.hpp"
#include "demoplan/random.hpp"

namespace demoplan::needle {

struct DemonstratorStyle {
  double speed = 1.2;
  double gain = 0.8;
  /// Distance ahead on the gate line used for line following.
  double lookahead = 8.0;
  /// Distance before a gate at which line following starts.
  double lead_in = 14.0;
  double u_noise = 0.01;
  int max_steps = 600;

  static DemonstratorStyle random(std::uint64_t seed) {
    Rng gen = derive_rng(seed, {0xde30});
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    DemonstratorStyle s;
    s.speed = 0.9 + 0.6 * u01(gen);
    s.gain = 1.0 + 1.0 * u01(gen);
    s.lookahead = 7.0 + 4.0 * u01(gen);
    s.lead_in = 18.0 + 6.0 * u01(gen);
    return s;
  }
};

/// Runs the demonstrator from the level start until the needle exits or the
/// step limit is reached.
inline Demonstration scripted_demonstration(const Level& level, const DemonstratorStyle& style, std::uint64_t seed) {
  Rng gen = derive_rng(seed, {0xde31});
  std::normal_distribution<double> noise(0.0, style.u_noise);
  const double speed = std::clamp(style.speed, 0.0, level.v_max);

  Demonstration demo;
  demo.level_id = level.id;
  NeedleState s = level.start;
  std::size_t target = 0;
  demo.trace.push_back({0, s, {}});
  for (int t = 0; t < style.max_steps && !level.at_exit(s); ++t) {
    while (target < level.gates.size()) {
      const Gate& g = level.gates[target];
      GateLocal p = to_gate_frame(g, s.x, s.y);
      const bool through = p.along > 0.5 * g.width + 0.5 && std::abs(p.across) < g.height;
      if (!through && s.x <= level.gate_right_extent(static_cast<int>(target)) + 1.0) break;
      ++target;
    }
    double desired;
    if (target < level.gates.size()) {
      const Gate& g = level.gates[target];
      GateLocal p = to_gate_frame(g, s.x, s.y);
      // Pure pursuit of a point on the gate line, never further back than lead_in.
      const double along = std::max(p.along + style.lookahead, -style.lead_in);
      const double ax = g.x + along * std::cos(g.theta), ay = g.y + along * std::sin(g.theta);
      desired = std::atan2(ay - s.y, ax - s.x);
    } else {
      double ay = std::clamp(s.y, 0.25 * level.height, 0.75 * level.height);
      desired = std::atan2(ay - s.y, level.width + 10.0 - s.x);
    }
    const double u = std::clamp(style.gain * wrap_angle(desired - s.theta) + noise(gen), -level.u_max, level.u_max);
    // Slow down for sharp turns.
    const double err = std::abs(wrap_angle(desired - s.theta));
    const Control c{u, speed * std::clamp(1.0 - err / 1.5, 0.5, 1.0)};
    demo.trace.back().control = c;
    s = step(s, c);
    demo.trace.push_back({t + 1, s, c});
  }
  return demo;
}

/// A demonstration is usable when it is valid, finishes the level and clears
/// every gate.
inline bool good_demonstration(const Demonstration& d, const Level& level) {
  if (!check_valid(d.trace, level)) return false;
  Metrics m = score(d.trace, level);
  return m.finished == 1 && m.gates_cleared == static_cast<int>(level.gates.size());
}

/// Up to `count` good demonstrations, trying at most `max_attempts` styles.
inline std::vector<Demonstration> scripted_demonstrations(const Level& level, int count, std::uint64_t seed,
                                                          int max_attempts = 40) {
  std::vector<Demonstration> out;
  for (int a = 0; a < max_attempts && static_cast<int>(out.size()) < count; ++a) {
    const std::uint64_t s = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(a) + 1));
    Demonstration d = scripted_demonstration(level, DemonstratorStyle::random(s), s);
    if (good_demonstration(d, level)) out.push_back(std::move(d));
  }
  return out;
}

/// Demonstrator seed for one level of a batch: the batch seed mixed with the
/// level id, so adding levels does not change the others' demonstrations.
inline std::uint64_t level_demo_seed(std::uint64_t seed, const std::string& level_id) {
  return splitmix64(seed ^ fnv1a(level_id));
}

}  // namespace demoplan::needle
