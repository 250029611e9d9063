#pragma once

// Needle Master world model: kinematics, level geometry, gate tracking and
// predicates, trajectory validity and scoring.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "demoplan/errors.hpp"

namespace demoplan::needle {

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::remainder(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  return a;
}

struct NeedleState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  friend bool operator==(const NeedleState&, const NeedleState&) = default;
};

struct Control {
  /// Rotation per step (radians).
  double u = 0.0;
  /// Forward distance per step.
  double v = 0.0;

  friend bool operator==(const Control&, const Control&) = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct Polygon {
  std::vector<Point> vertices;

  friend bool operator==(const Polygon&, const Polygon&) = default;

  /// Even-odd ray casting; points on the boundary may go either way.
  bool contains(double px, double py) const {
    bool in = false;
    const std::size_t n = vertices.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point& a = vertices[i];
      const Point& b = vertices[j];
      if ((a.y > py) != (b.y > py)) {
        double xc = (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x;
        if (px < xc) in = !in;
      }
    }
    return in;
  }
};

/// A gate is an oriented rectangle. `theta` is the passage direction: the
/// needle crosses the gate along its local x axis ("along"), and the opening
/// spans the local y axis ("across"). `width` is measured along, `height`
/// across.
struct Gate {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double width = 4.0;
  double height = 14.0;

  friend bool operator==(const Gate&, const Gate&) = default;
};

struct GateLocal {
  double along = 0.0;
  double across = 0.0;
};

inline GateLocal to_gate_frame(const Gate& g, double x, double y) {
  const double dx = x - g.x, dy = y - g.y;
  const double c = std::cos(g.theta), s = std::sin(g.theta);
  return {c * dx + s * dy, -s * dx + c * dy};
}

struct Level {
  std::string id;
  double width = 100.0;
  double height = 60.0;
  NeedleState start{2.0, 30.0, 0.0};
  std::vector<Gate> gates;
  std::vector<Polygon> tissues;
  std::vector<Polygon> deep_tissues;
  double u_max = 0.2;
  double v_max = 2.0;
  double damage_rate = 1.0;
  double damage_budget = 3.0;
  /// Fraction of the gate height taken by each of the top and bottom bars.
  double bar_fraction = 0.25;

  friend bool operator==(const Level&, const Level&) = default;

  bool in_gate(int g, double x, double y) const {
    const Gate& gate = gates.at(static_cast<std::size_t>(g));
    GateLocal p = to_gate_frame(gate, x, y);
    return std::abs(p.along) <= 0.5 * gate.width && std::abs(p.across) <= 0.5 * gate.height;
  }

  bool in_gate_bar(int g, double x, double y) const {
    if (!in_gate(g, x, y)) return false;
    const Gate& gate = gates.at(static_cast<std::size_t>(g));
    GateLocal p = to_gate_frame(gate, x, y);
    return std::abs(p.across) > (0.5 - bar_fraction) * gate.height;
  }

  /// Largest world x covered by the gate rectangle.
  double gate_right_extent(int g) const {
    const Gate& gate = gates.at(static_cast<std::size_t>(g));
    return gate.x + 0.5 * gate.width * std::abs(std::cos(gate.theta)) +
           0.5 * gate.height * std::abs(std::sin(gate.theta));
  }

  bool in_tissue(double x, double y) const {
    return std::any_of(tissues.begin(), tissues.end(), [&](const Polygon& p) { return p.contains(x, y); });
  }

  bool in_deep_tissue(double x, double y) const {
    return std::any_of(deep_tissues.begin(), deep_tissues.end(),
                       [&](const Polygon& p) { return p.contains(x, y); });
  }

  bool at_exit(const NeedleState& s) const { return s.x > width; }

  /// Out of bounds anywhere except past the right edge, which is the exit.
  bool out_of_bounds(const NeedleState& s) const { return s.x < 0.0 || s.y < 0.0 || s.y > height; }

  bool control_in_bounds(const Control& c) const {
    constexpr double eps = 1e-12;
    return std::abs(c.u) <= u_max + eps && c.v >= -eps && c.v <= v_max + eps;
  }
};

/// x' = x + v cos(theta), y' = y + v sin(theta), theta' = wrap(theta + u), with
/// the pre-update heading used for translation.
inline NeedleState step(const NeedleState& s, const Control& c) {
  return {s.x + c.v * std::cos(s.theta), s.y + c.v * std::sin(s.theta), wrap_angle(s.theta + c.u)};
}

/// One entry per simulated state. `control` is the input applied at this state;
/// the final entry repeats the last applied control (zero for a trace with a
/// single state).
struct TraceStep {
  int t = 0;
  NeedleState state;
  Control control;

  friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

using Trace = std::vector<TraceStep>;

struct Demonstration {
  std::string level_id;
  Trace trace;

  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

/// Index of the first step violating state_{i+1} = step(state_i, control_i),
/// or nullopt when the trace is consistent.
inline std::optional<std::size_t> first_dynamics_violation(const Trace& trace, double tol = 1e-9) {
  for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
    NeedleState pred = step(trace[i].state, trace[i].control);
    const NeedleState& next = trace[i + 1].state;
    if (std::abs(pred.x - next.x) > tol || std::abs(pred.y - next.y) > tol ||
        std::abs(wrap_angle(pred.theta - next.theta)) > tol)
      return i;
  }
  return std::nullopt;
}

/// A primitive applies a constant control for round(t) steps.
struct Primitive {
  double u = 0.0;
  double v = 0.0;
  double t = 0.0;

  int steps() const { return t <= 0.0 ? 0 : static_cast<int>(std::lround(t)); }

  friend bool operator==(const Primitive&, const Primitive&) = default;
};

/// Fixed-length sequence of piecewise-constant control primitives. Flattens
/// to (u0, v0, t0, u1, v1, t1, ...).
struct TrajectoryParam {
  std::vector<Primitive> segments;

  friend bool operator==(const TrajectoryParam&, const TrajectoryParam&) = default;

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(segments.size() * 3);
    for (const auto& p : segments) {
      out.push_back(p.u);
      out.push_back(p.v);
      out.push_back(p.t);
    }
    return out;
  }

  static TrajectoryParam unflatten(const std::vector<double>& flat) {
    if (flat.size() % 3 != 0) throw InvalidArgument("trajectory param: flat length must be a multiple of 3");
    TrajectoryParam p;
    for (std::size_t i = 0; i < flat.size(); i += 3) p.segments.push_back({flat[i], flat[i + 1], flat[i + 2]});
    return p;
  }

  int total_steps() const {
    int n = 0;
    for (const auto& p : segments) n += p.steps();
    return n;
  }
};

inline Trace rollout_primitives(const NeedleState& s0, const TrajectoryParam& xi, int t0 = 0) {
  Trace trace;
  trace.reserve(static_cast<std::size_t>(xi.total_steps()) + 1);
  trace.push_back({t0, s0, {}});
  for (const auto& seg : xi.segments) {
    const Control c{seg.u, seg.v};
    for (int k = 0; k < seg.steps(); ++k) {
      trace.back().control = c;
      trace.push_back({trace.back().t + 1, step(trace.back().state, c), c});
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Gate tracking and predicates

/// Per-gate state accumulated while walking a trace.
struct GateStatus {
  bool entered = false;
  bool inside = false;
  bool broken = false;
  bool closed = false;
  bool traversed = false;
  bool entered_from_back = false;
  /// Closed because the needle moved past the gate without entering it.
  bool missed = false;
};

struct GateHistory {
  std::vector<GateStatus> gates;
  std::optional<NeedleState> prev;

  explicit GateHistory(const Level& level) : gates(level.gates.size()) {}
  GateHistory() = default;
};

struct PredicateSet {
  std::optional<int> needle_in_gate;
  bool has_prev_gate = false;
  std::vector<bool> gate_closed;
  std::vector<bool> gate_open;
  bool at_exit = false;

  bool all_closed() const { return std::all_of(gate_closed.begin(), gate_closed.end(), [](bool b) { return b; }); }
  bool operator==(const PredicateSet&) const = default;
};

/// Advances `history` by state `s` and returns the predicates holding at `s`.
/// A gate closes once the needle has entered and left it, broken it, or moved
/// entirely past it without entering.
inline PredicateSet eval_predicates(const NeedleState& s, const Level& level, GateHistory& history) {
  if (history.gates.size() != level.gates.size()) history.gates.assign(level.gates.size(), {});
  PredicateSet p;
  const int n = static_cast<int>(level.gates.size());
  for (int g = 0; g < n; ++g) {
    GateStatus& st = history.gates[static_cast<std::size_t>(g)];
    const bool inside = level.in_gate(g, s.x, s.y);
    if (inside) {
      if (!st.inside) {
        st.entered_from_back =
            history.prev && to_gate_frame(level.gates[static_cast<std::size_t>(g)], history.prev->x, history.prev->y).along < 0.0;
      }
      st.entered = true;
      st.inside = true;
      if (level.in_gate_bar(g, s.x, s.y)) st.broken = st.closed = true;
      if (!p.needle_in_gate) p.needle_in_gate = g;
    } else if (st.inside) {
      st.inside = false;
      st.closed = true;
      if (st.entered_from_back && to_gate_frame(level.gates[static_cast<std::size_t>(g)], s.x, s.y).along > 0.0)
        st.traversed = true;
    } else if (!st.closed && s.x > level.gate_right_extent(g)) {
      st.closed = true;
      st.missed = true;
    }
  }
  history.prev = s;
  p.gate_closed.resize(static_cast<std::size_t>(n));
  p.gate_open.resize(static_cast<std::size_t>(n));
  bool any_closed = false, any_open = false;
  for (int g = 0; g < n; ++g) {
    p.gate_closed[static_cast<std::size_t>(g)] = history.gates[static_cast<std::size_t>(g)].closed;
    p.gate_open[static_cast<std::size_t>(g)] = !history.gates[static_cast<std::size_t>(g)].closed;
    any_closed = any_closed || p.gate_closed[static_cast<std::size_t>(g)];
    any_open = any_open || p.gate_open[static_cast<std::size_t>(g)];
  }
  p.has_prev_gate = any_closed && any_open;
  p.at_exit = level.at_exit(s);
  return p;
}

// ---------------------------------------------------------------------------
// Validity

struct Validity {
  bool valid = true;
  /// Index of the first offending state (or control), -1 when valid.
  int first_invalid = -1;
  std::string reason;

  explicit operator bool() const { return valid; }
};

/// Damage accrued by applying `c` at `s`: |u| * damage_rate inside tissue.
inline double step_damage(const Level& level, const NeedleState& s, const Control& c) {
  return level.in_tissue(s.x, s.y) ? std::abs(c.u) * level.damage_rate : 0.0;
}

/// A trace is invalid if any state is inside deep tissue or out of bounds
/// (other than past the right edge), any applied control exceeds the level
/// limits, or accumulated tissue damage exceeds the budget. `initial_damage`
/// carries damage from earlier parts of a longer trajectory.
inline Validity check_valid(const Trace& trace, const Level& level, double initial_damage = 0.0) {
  double damage = initial_damage;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& st = trace[i];
    const int idx = static_cast<int>(i);
    if (level.out_of_bounds(st.state)) return {false, idx, "out-of-bounds"};
    if (level.in_deep_tissue(st.state.x, st.state.y)) return {false, idx, "deep-tissue"};
    if (i + 1 < trace.size()) {
      if (!level.control_in_bounds(st.control)) return {false, idx, "control-bounds"};
      damage += step_damage(level, st.state, st.control);
      if (damage > level.damage_budget) return {false, idx, "tissue-damage"};
    }
  }
  return {};
}

/// Damage accrued along a whole trace.
inline double trace_damage(const Trace& trace, const Level& level) {
  double d = 0.0;
  for (std::size_t i = 0; i + 1 < trace.size(); ++i) d += step_damage(level, trace[i].state, trace[i].control);
  return d;
}

// ---------------------------------------------------------------------------
// Scoring

struct Metrics {
  int gates_entered = 0;
  int gates_cleared = 0;
  int gates_broken = 0;
  int finished = 0;

  Metrics& operator+=(const Metrics& o) {
    gates_entered += o.gates_entered;
    gates_cleared += o.gates_cleared;
    gates_broken += o.gates_broken;
    finished += o.finished;
    return *this;
  }
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// A gate is entered if any state lies inside it and broken if any in-gate
/// state lies inside a top or bottom bar. It is cleared if it was traversed
/// (entered from its back face, left through its front face) without being
/// broken, and it was entered in order: when first entered, every earlier gate
/// had been entered and no later gate had. The level is finished when the final
/// state is past the right edge.
inline Metrics score(const Trace& trace, const Level& level) {
  const int n = static_cast<int>(level.gates.size());
  GateHistory history(level);
  std::vector<int> first_entry(static_cast<std::size_t>(n), -1);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    eval_predicates(trace[i].state, level, history);
    for (int g = 0; g < n; ++g)
      if (history.gates[static_cast<std::size_t>(g)].entered && first_entry[static_cast<std::size_t>(g)] < 0)
        first_entry[static_cast<std::size_t>(g)] = static_cast<int>(i);
  }
  Metrics m;
  for (int g = 0; g < n; ++g) {
    const GateStatus& st = history.gates[static_cast<std::size_t>(g)];
    const int fe = first_entry[static_cast<std::size_t>(g)];
    if (!st.entered) continue;
    ++m.gates_entered;
    if (st.broken) ++m.gates_broken;
    bool in_order = true;
    for (int h = 0; h < n; ++h) {
      const int he = first_entry[static_cast<std::size_t>(h)];
      if (h < g && (he < 0 || he > fe)) in_order = false;
      if (h > g && he >= 0 && he < fe) in_order = false;
    }
    if (st.traversed && !st.broken && in_order) ++m.gates_cleared;
  }
  m.finished = !trace.empty() && level.at_exit(trace.back().state) ? 1 : 0;
  return m;
}

}  // namespace demoplan::needle
