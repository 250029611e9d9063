#pragma once

// Seeded procedural levels. Gates go left to right; deep-tissue obstacles are
// kept off the corridor joining the start, the gate centers and the exit, and
// every level is checked with a coarse grid search before it is returned.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "demoplan/errors.hpp"
#include "demoplan/needle.hpp"
#include "demoplan/random.hpp"

namespace demoplan::needle {

struct LevelSpec {
  int n_gates = 2;
  int n_obstacles = 2;
  /// Pink tissue patches, each surrounding one gate.
  int n_tissues = 0;
  std::uint64_t seed = 0;
  std::string id;
  /// Bound on |across| / |along| between consecutive gates, in both frames.
  double max_lateral_slope = 0.6;
  int max_retries = 200;
};

namespace detail {

inline double point_segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

inline Polygon rotated_rect(double cx, double cy, double w, double h, double ang) {
  const double c = std::cos(ang), s = std::sin(ang);
  Polygon p;
  for (auto [lx, ly] : {std::pair{-0.5 * w, -0.5 * h}, {0.5 * w, -0.5 * h}, {0.5 * w, 0.5 * h}, {-0.5 * w, 0.5 * h}})
    p.vertices.push_back({cx + c * lx - s * ly, cy + s * lx + c * ly});
  return p;
}

inline std::vector<Point> corridor(const Level& level) {
  std::vector<Point> pts{{level.start.x, level.start.y}};
  for (const auto& g : level.gates) pts.push_back({g.x, g.y});
  pts.push_back({level.width, pts.back().y});
  return pts;
}

inline double corridor_distance(const std::vector<Point>& path, Point p) {
  double d = 1e300;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) d = std::min(d, point_segment_distance(p, path[i], path[i + 1]));
  return d;
}

}  // namespace detail

/// Breadth-first search on a unit grid: can the needle get from the start
/// through every gate center in order and out the right edge while keeping
/// `clearance` from deep tissue and staying inside the vertical bounds?
inline bool grid_feasible(const Level& level, double cell = 1.0, double clearance = 1.0) {
  const int nx = static_cast<int>(std::ceil(level.width / cell)) + 1;
  const int ny = static_cast<int>(std::ceil(level.height / cell)) + 1;
  std::vector<char> blocked(static_cast<std::size_t>(nx * ny), 0);
  auto center = [&](int i, int j) { return Point{(i + 0.5) * cell, (j + 0.5) * cell}; };
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      Point c = center(i, j);
      bool bad = c.y > level.height;
      for (double dx : {-clearance, 0.0, clearance})
        for (double dy : {-clearance, 0.0, clearance})
          bad = bad || level.in_deep_tissue(c.x + dx, c.y + dy);
      blocked[static_cast<std::size_t>(i * ny + j)] = bad;
    }
  auto cell_of = [&](double x, double y) {
    return std::pair{std::clamp(static_cast<int>(x / cell), 0, nx - 1), std::clamp(static_cast<int>(y / cell), 0, ny - 1)};
  };
  auto reach = [&](std::pair<int, int> from, auto&& is_goal) {
    if (blocked[static_cast<std::size_t>(from.first * ny + from.second)]) return false;
    std::vector<char> seen(blocked.size(), 0);
    std::deque<std::pair<int, int>> q{from};
    seen[static_cast<std::size_t>(from.first * ny + from.second)] = 1;
    while (!q.empty()) {
      auto [i, j] = q.front();
      q.pop_front();
      if (is_goal(i, j)) return true;
      for (auto [di, dj] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
        int a = i + di, b = j + dj;
        if (a < 0 || b < 0 || a >= nx || b >= ny) continue;
        auto k = static_cast<std::size_t>(a * ny + b);
        if (seen[k] || blocked[k]) continue;
        seen[k] = 1;
        q.push_back({a, b});
      }
    }
    return false;
  };
  auto from = cell_of(level.start.x, level.start.y);
  for (const auto& g : level.gates) {
    auto to = cell_of(g.x, g.y);
    if (!reach(from, [&](int i, int j) { return i == to.first && j == to.second; })) return false;
    from = to;
  }
  return reach(from, [&](int i, int) { return i == nx - 1; });
}

inline Level generate_level(const LevelSpec& spec) {
  if (spec.n_gates < 1) throw InvalidArgument("generate_level: n_gates must be at least 1");
  if (spec.n_obstacles < 0 || spec.n_tissues < 0) throw InvalidArgument("generate_level: negative counts");
  for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
    Rng gen = derive_rng(spec.seed, {0x1e7e1, static_cast<std::uint64_t>(attempt)});
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double a, double b) { return a + (b - a) * u01(gen); };

    Level level;
    level.id = spec.id.empty() ? "level-" + std::to_string(spec.seed) : spec.id;
    level.start = {2.0, uni(0.35, 0.65) * level.height, 0.0};

    const double x0 = 25.0, x1 = 85.0;
    const double slot = (x1 - x0) / spec.n_gates;
    for (int g = 0; g < spec.n_gates; ++g) {
      Gate gate;
      gate.x = x0 + slot * (g + 0.5) + uni(-0.15, 0.15) * slot;
      gate.y = uni(0.3, 0.7) * level.height;
      gate.theta = uni(-0.25, 0.25) * std::numbers::pi;
      level.gates.push_back(gate);
    }
    bool spaced = true;
    for (std::size_t g = 1; g < level.gates.size(); ++g)
      spaced = spaced && level.gates[g].x - level.gates[g - 1].x >= level.gates[g].width;
    if (!spaced) continue;
    // Each gate must be reachable from the previous one (or the start) without
    // a lateral offset steeper than max_lateral_slope relative to either
    // passage direction.
    bool flowing = true;
    for (std::size_t g = 0; g < level.gates.size(); ++g) {
      const Gate& next = level.gates[g];
      const Gate prev = g == 0 ? Gate{level.start.x, level.start.y, level.start.theta} : level.gates[g - 1];
      GateLocal a = to_gate_frame(next, prev.x, prev.y);
      GateLocal b = to_gate_frame(prev, next.x, next.y);
      flowing = flowing && std::abs(a.across) <= spec.max_lateral_slope * std::abs(a.along) &&
                std::abs(b.across) <= spec.max_lateral_slope * std::abs(b.along);
    }
    if (!flowing) continue;

    for (int t = 0; t < spec.n_tissues; ++t) {
      const Gate& g = level.gates[static_cast<std::size_t>(t) % level.gates.size()];
      level.tissues.push_back(detail::rotated_rect(g.x, g.y, uni(10.0, 16.0), g.height * uni(1.6, 2.2), g.theta));
    }

    const auto path = detail::corridor(level);
    bool placed_all = true;
    for (int o = 0; o < spec.n_obstacles && placed_all; ++o) {
      bool placed = false;
      for (int tries = 0; tries < 400 && !placed; ++tries) {
        const double w = uni(6.0, 14.0), h = uni(4.0, 9.0), ang = uni(0.0, std::numbers::pi);
        const double cx = uni(12.0, level.width - 4.0), cy = uni(0.0, level.height);
        const double radius = 0.5 * std::hypot(w, h);
        if (detail::corridor_distance(path, {cx, cy}) < radius + 10.0) continue;
        bool overlaps = false;
        for (const auto& g : level.gates) overlaps = overlaps || std::hypot(cx - g.x, cy - g.y) < radius + g.height;
        if (overlaps) continue;
        level.deep_tissues.push_back(detail::rotated_rect(cx, cy, w, h, ang));
        placed = true;
      }
      placed_all = placed;
    }
    if (!placed_all) continue;
    if (!grid_feasible(level)) continue;
    return level;
  }
  throw GenerationFailure("generate_level: no feasible level after " + std::to_string(spec.max_retries) +
                          " attempts (seed " + std::to_string(spec.seed) + ")");
}

/// A seeded suite of `n` levels. Level i uses seed
/// splitmix64(seed ^ splitmix64(i + 1)) and id "s<seed>-<iii>".
inline std::vector<Level> generate_suite(const LevelSpec& spec, int n, std::uint64_t seed) {
  std::vector<Level> out;
  for (int i = 0; i < n; ++i) {
    LevelSpec s = spec;
    s.seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(i) + 1));
    char id[48];
    std::snprintf(id, sizeof id, "s%llu-%03d", static_cast<unsigned long long>(seed), i);
    s.id = id;
    out.push_back(generate_level(s));
  }
  return out;
}

}  // namespace demoplan::needle
