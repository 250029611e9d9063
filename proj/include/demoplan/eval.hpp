#pragma once

// Evaluation: the three-method comparison over a level suite, plan files with
// their optimizer run logs, and per-action cost traces.

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "demoplan/baselines.hpp"
#include "demoplan/errors.hpp"
#include "demoplan/io.hpp"
#include "demoplan/needle.hpp"
#include "demoplan/optimizer.hpp"
#include "demoplan/skills.hpp"

namespace demoplan::eval {

using io::json;
using needle::Level;
using needle::Metrics;
using needle::Trace;

enum class Method { Naive, NoGoal, Full };

inline constexpr Method kMethods[] = {Method::Naive, Method::NoGoal, Method::Full};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Naive: return "naive";
    case Method::NoGoal: return "nogoal";
    case Method::Full: return "full";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : kMethods)
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown method '" + s + "' (expected naive, nogoal or full)");
}

// ---------------------------------------------------------------------------
// Run logs and plan files

inline constexpr int kPlanVersion = 1;

inline json run_log_to_json(const opt::OptResult& r) {
  json its = json::array();
  for (const auto& e : r.log)
    its.push_back({{"iteration", e.iteration},
                   {"cost", e.cost},
                   {"acceptance_rate", e.acceptance_rate},
                   {"draws", e.draws},
                   {"best_log_weight", e.best_log_weight},
                   {"noise", e.noise},
                   {"surrogate_mean", e.surrogate_mean},
                   {"surrogate_sd", e.surrogate_sd}});
  return {{"cost_label", "mean negative expert log-likelihood of the action and its goal"},
          {"best_param", r.best_param.flatten()},
          {"best_log_weight", r.best_log_weight},
          {"iterations", its}};
}

/// One method's result on one level.
struct MethodRun {
  std::string level_id;
  Method method = Method::Full;
  Trace trace;
  /// Planner output for the optimizer methods.
  std::optional<opt::PlanResult> plan;
  Metrics metrics;
  /// Empty on success; otherwise the failure and a zero-score row.
  std::string error;
};

inline json to_json(const MethodRun& run) {
  json j = {{"format", "demoplan.plan"},
            {"version", kPlanVersion},
            {"level_id", run.level_id},
            {"method", to_string(run.method)},
            {"metrics", io::to_json(run.metrics)},
            {"error", run.error},
            {"columns", {"t", "x", "y", "theta", "u", "v"}},
            {"trace", io::trace_to_json(run.trace)}};
  json actions = json::array();
  json logs = json::array();
  if (run.plan) {
    for (std::size_t a = 0; a < run.plan->actions.size(); ++a) {
      const auto& span = run.plan->actions[a];
      actions.push_back({{"action", span.label.str()}, {"begin", span.begin}, {"end", span.end}});
      json log = run_log_to_json(run.plan->results[a]);
      log["action"] = span.label.str();
      logs.push_back(std::move(log));
    }
  }
  j["actions"] = actions;
  j["run_log"] = logs;
  return j;
}

/// Runs one method on one level. Failures never throw; they produce a
/// zero-score row carrying the error.
inline MethodRun run_method(const skills::SkillLibrary& lib, const Level& level, Method method,
                            const opt::OptimizerConfig& cfg, const opt::OptimizeOptions& opts = {}) {
  MethodRun run;
  run.level_id = level.id;
  run.method = method;
  try {
    if (method == Method::Naive) {
      run.trace = baselines::run_naive(lib, level, level.start);
    } else {
      const skills::SkillChain chain = skills::build_chain(level, &lib);
      opt::PlanResult plan = method == Method::Full ? opt::plan_task(chain, lib, level, level.start, cfg, true, opts)
                                                    : baselines::plan_no_goal(chain, lib, level, level.start, cfg, opts);
      run.trace = plan.trace;
      if (!plan.complete) run.error = plan.error;
      run.plan = std::move(plan);
    }
  } catch (const Error& e) {
    run.error = std::string(e.kind()) + ": " + e.what();
  }
  if (run.error.empty()) run.metrics = needle::score(run.trace, level);
  return run;
}

// ---------------------------------------------------------------------------
// Comparison

struct Comparison {
  std::vector<MethodRun> runs;

  Metrics total(Method m) const {
    Metrics t;
    for (const auto& r : runs)
      if (r.method == m) t += r.metrics;
    return t;
  }
};

/// Per-level optimizer seed: the suite seed mixed with the level's position.
inline std::uint64_t level_seed(std::uint64_t seed, std::size_t index) { return splitmix64(seed ^ splitmix64(index + 0x5eed)); }

inline Comparison run_comparison(const skills::SkillLibrary& lib, const std::vector<Level>& suite,
                                 const opt::OptimizerConfig& cfg, const std::vector<Method>& methods = {kMethods[0], kMethods[1], kMethods[2]},
                                 const opt::OptimizeOptions& opts = {}) {
  Comparison out;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    opt::OptimizerConfig c = cfg;
    c.seed = level_seed(cfg.seed, i);
    for (Method m : methods) out.runs.push_back(run_method(lib, suite[i], m, c, opts));
  }
  return out;
}

inline std::string comparison_csv(const Comparison& c) {
  std::ostringstream os;
  os << "level,method,gates_entered,gates_cleared,gates_broken,finished,error\n";
  for (const auto& r : c.runs) {
    std::string err = r.error;
    for (char& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    os << r.level_id << ',' << to_string(r.method) << ',' << r.metrics.gates_entered << ',' << r.metrics.gates_cleared
       << ',' << r.metrics.gates_broken << ',' << r.metrics.finished << ',' << err << '\n';
  }
  return os.str();
}

/// Aggregate counts per method, human readable.
inline std::string comparison_table(const Comparison& c, std::size_t n_levels) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-8s %8s %8s %8s %9s\n", "method", "entered", "cleared", "broken", "finished");
  os << line;
  for (Method m : kMethods) {
    bool present = false;
    for (const auto& r : c.runs) present = present || r.method == m;
    if (!present) continue;
    Metrics t = c.total(m);
    std::snprintf(line, sizeof line, "%-8s %8d %8d %8d %5d/%-3zu\n", to_string(m).c_str(), t.gates_entered,
                  t.gates_cleared, t.gates_broken, t.finished, n_levels);
    os << line;
  }
  return os.str();
}

inline json comparison_json(const Comparison& c, std::size_t n_levels) {
  json totals = json::object();
  for (Method m : kMethods) {
    bool present = false;
    for (const auto& r : c.runs) present = present || r.method == m;
    if (present) totals[to_string(m)] = io::to_json(c.total(m));
  }
  json rows = json::array();
  for (const auto& r : c.runs) {
    json row = io::to_json(r.metrics);
    row["level_id"] = r.level_id;
    row["method"] = to_string(r.method);
    row["error"] = r.error;
    rows.push_back(std::move(row));
  }
  return {{"format", "demoplan.comparison"}, {"version", 1}, {"levels", n_levels}, {"totals", totals}, {"rows", rows}};
}

// ---------------------------------------------------------------------------
// Cost traces

struct CostSeries {
  std::string name;
  std::vector<double> cost;
};

inline std::vector<CostSeries> cost_series(const opt::PlanResult& plan) {
  std::vector<CostSeries> out;
  for (std::size_t a = 0; a < plan.results.size(); ++a)
    out.push_back({plan.actions[a].label.str(), plan.results[a].cost_trace});
  return out;
}

/// One row per (series, iteration), costs written with shortest round-trip
/// formatting.
inline std::string export_cost_traces(const std::vector<CostSeries>& series) {
  std::ostringstream os;
  os << "series,name,iteration,cost\n";
  for (std::size_t s = 0; s < series.size(); ++s)
    for (std::size_t i = 0; i < series[s].cost.size(); ++i)
      os << s << ',' << series[s].name << ',' << i << ',' << json(series[s].cost[i]).dump() << '\n';
  return os.str();
}

}  // namespace demoplan::eval
