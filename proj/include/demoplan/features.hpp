#pragma once

// Action labels and the per-action feature map. Every action uses the
// features of the entities it is parameterized by, followed by |u|, an
// in-tissue flag, and first differences of everything except the flag.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "demoplan/errors.hpp"
#include "demoplan/needle.hpp"

namespace demoplan {

enum class ActionKind { ApproachGate, PassThroughGate, ConnectGates, MoveToExit, Done };

inline constexpr std::array<ActionKind, 4> kMotionKinds{ActionKind::ApproachGate, ActionKind::PassThroughGate,
                                                        ActionKind::ConnectGates, ActionKind::MoveToExit};

inline std::string_view to_string(ActionKind k) {
  switch (k) {
    case ActionKind::ApproachGate: return "APPROACH_GATE";
    case ActionKind::PassThroughGate: return "PASS_THROUGH_GATE";
    case ActionKind::ConnectGates: return "CONNECT_GATES";
    case ActionKind::MoveToExit: return "MOVE_TO_EXIT";
    case ActionKind::Done: return "DONE";
  }
  return "?";
}

inline ActionKind action_kind_from_string(std::string_view s) {
  for (ActionKind k : {ActionKind::ApproachGate, ActionKind::PassThroughGate, ActionKind::ConnectGates,
                       ActionKind::MoveToExit, ActionKind::Done})
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown action kind '" + std::string(s) + "'");
}

struct ActionLabel {
  ActionKind kind = ActionKind::ApproachGate;
  /// Target gate (approach, pass) or the gate being left (connect).
  int gate = -1;
  /// Gate being connected to (connect only).
  int next_gate = -1;

  friend bool operator==(const ActionLabel&, const ActionLabel&) = default;

  static ActionLabel approach(int g) { return {ActionKind::ApproachGate, g, -1}; }
  static ActionLabel pass(int g) { return {ActionKind::PassThroughGate, g, -1}; }
  static ActionLabel connect(int from, int to) { return {ActionKind::ConnectGates, from, to}; }
  static ActionLabel exit() { return {ActionKind::MoveToExit, -1, -1}; }
  static ActionLabel done() { return {ActionKind::Done, -1, -1}; }

  std::string str() const {
    std::string s(to_string(kind));
    if (kind == ActionKind::ConnectGates) return s + "(" + std::to_string(gate) + "," + std::to_string(next_gate) + ")";
    if (gate >= 0) return s + "(" + std::to_string(gate) + ")";
    return s;
  }
};

namespace features {

using Vector = Eigen::VectorXd;

/// [along, across, dist, angdiff]: the needle position in the gate frame, the
/// Euclidean distance to the gate center, and |wrap(theta_gate - theta)|.
inline std::array<double, 4> gate_features(const needle::NeedleState& s, const needle::Gate& g) {
  needle::GateLocal p = needle::to_gate_frame(g, s.x, s.y);
  const double dist = std::hypot(s.x - g.x, s.y - g.y);
  const double angdiff = std::abs(needle::wrap_angle(g.theta - s.theta));
  return {p.along, p.across, dist, angdiff};
}

/// Number of leading entries that are differenced (everything except the
/// in-tissue flag): entity features plus |u|.
inline int base_width(ActionKind k) {
  switch (k) {
    case ActionKind::ApproachGate:
    case ActionKind::PassThroughGate: return 4 + 1;
    case ActionKind::ConnectGates: return 8 + 1;
    case ActionKind::MoveToExit: return 1 + 1;
    case ActionKind::Done: break;
  }
  throw InvalidArgument("DONE has no features");
}

inline int feature_dim(ActionKind k) { return 2 * base_width(k) + 1; }

/// Entry names in feature order.
inline std::vector<std::string> feature_names(ActionKind k) {
  std::vector<std::string> base;
  auto gate = [&](const std::string& prefix) {
    for (const char* f : {"along", "across", "dist", "angdiff"}) base.push_back(prefix + f);
  };
  switch (k) {
    case ActionKind::ApproachGate:
    case ActionKind::PassThroughGate: gate("gate."); break;
    case ActionKind::ConnectGates:
      gate("prev.");
      gate("next.");
      break;
    case ActionKind::MoveToExit: base.push_back("exit_dx"); break;
    case ActionKind::Done: throw InvalidArgument("DONE has no features");
  }
  base.push_back("abs_u");
  std::vector<std::string> out = base;
  out.push_back("in_tissue");
  for (const auto& b : base) out.push_back("d_" + b);
  return out;
}

inline void check_label(const needle::Level& level, const ActionLabel& a) {
  const int n = static_cast<int>(level.gates.size());
  auto ok = [&](int g) { return g >= 0 && g < n; };
  switch (a.kind) {
    case ActionKind::ApproachGate:
    case ActionKind::PassThroughGate:
      if (!ok(a.gate)) throw InvalidArgument("action " + a.str() + " references a missing gate");
      return;
    case ActionKind::ConnectGates:
      if (!ok(a.gate) || !ok(a.next_gate))
        throw InvalidArgument("action " + a.str() + " references a missing gate");
      return;
    case ActionKind::MoveToExit: return;
    case ActionKind::Done: throw InvalidArgument("DONE has no features");
  }
}

/// Entity features followed by |u| (the differenced part).
inline Vector base_features(const needle::NeedleState& s, const needle::Control& c, const needle::Level& level,
                            const ActionLabel& a) {
  check_label(level, a);
  Vector b(base_width(a.kind));
  int i = 0;
  auto put_gate = [&](int g) {
    for (double f : gate_features(s, level.gates[static_cast<std::size_t>(g)])) b[i++] = f;
  };
  switch (a.kind) {
    case ActionKind::ApproachGate:
    case ActionKind::PassThroughGate: put_gate(a.gate); break;
    case ActionKind::ConnectGates:
      put_gate(a.gate);
      put_gate(a.next_gate);
      break;
    case ActionKind::MoveToExit: b[i++] = level.width - s.x; break;
    case ActionKind::Done: break;
  }
  b[i] = std::abs(c.u);
  return b;
}

/// Full feature vector at one step. `prev_base` is the previous step's base
/// features within the same clip; without it all differences are zero.
inline Vector action_features(const needle::NeedleState& s, const needle::Control& c, const needle::Level& level,
                              const ActionLabel& a, const Vector* prev_base, Vector* base_out = nullptr) {
  Vector b = base_features(s, c, level, a);
  const int w = static_cast<int>(b.size());
  Vector x(2 * w + 1);
  x.head(w) = b;
  x[w] = level.in_tissue(s.x, s.y) ? 1.0 : 0.0;
  if (prev_base) {
    if (prev_base->size() != w) throw InvalidArgument("action_features: history has wrong width");
    x.tail(w) = b - *prev_base;
  } else {
    x.tail(w).setZero();
  }
  if (base_out) *base_out = std::move(b);
  return x;
}

/// Feature rows for every step of a clip, differences restarting at the clip's
/// first step.
inline std::vector<Vector> clip_features(const needle::Trace& clip, const needle::Level& level, const ActionLabel& a) {
  std::vector<Vector> rows;
  rows.reserve(clip.size());
  Vector prev, cur;
  for (std::size_t i = 0; i < clip.size(); ++i) {
    rows.push_back(action_features(clip[i].state, clip[i].control, level, a, i == 0 ? nullptr : &prev, &cur));
    prev = cur;
  }
  return rows;
}

}  // namespace features
}  // namespace demoplan
