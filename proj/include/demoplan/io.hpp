#pragma once

// JSON file formats for levels, demonstrations and mixture models. Doubles are
// written in shortest round-trip form, so save/load is value-exact. Every file
// carries "format" and "version" fields; loaders report the offending field.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "demoplan/errors.hpp"
#include "demoplan/gmm.hpp"
#include "demoplan/needle.hpp"
#include "json.hpp"

namespace demoplan::io {

using json = nlohmann::json;

inline constexpr int kLevelVersion = 1;
inline constexpr int kDemoVersion = 1;
inline constexpr int kGmmVersion = 1;

// ---------------------------------------------------------------------------
// Field access with path context

inline const json& field(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(path + "." + key + ": missing field");
  return *it;
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ParseError(path + ": expected a number");
  double v = j.get<double>();
  if (!std::isfinite(v)) throw ParseError(path + ": not finite");
  return v;
}

inline double number(const json& j, const std::string& key, const std::string& path) {
  return number(field(j, key, path), path + "." + key);
}

inline long long integer(const json& j, const std::string& key, const std::string& path) {
  const json& v = field(j, key, path);
  if (!v.is_number_integer()) throw ParseError(path + "." + key + ": expected an integer");
  return v.get<long long>();
}

inline std::string string(const json& j, const std::string& key, const std::string& path) {
  const json& v = field(j, key, path);
  if (!v.is_string()) throw ParseError(path + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline const json& array(const json& j, const std::string& key, const std::string& path) {
  const json& v = field(j, key, path);
  if (!v.is_array()) throw ParseError(path + "." + key + ": expected an array");
  return v;
}

inline void check_header(const json& j, const std::string& format, int version) {
  std::string f = string(j, "format", "$");
  if (f != format) throw ParseError("$.format: expected '" + format + "', got '" + f + "'");
  long long v = integer(j, "version", "$");
  if (v != version) throw ParseError("$.version: unsupported version " + std::to_string(v));
}

inline json parse_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ParseError(p.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("io-error", p.string() + ": cannot write");
  out << text;
}

inline std::string dump(const json& j) { return j.dump(1, '\t') + "\n"; }

// ---------------------------------------------------------------------------
// Levels

inline json to_json(const needle::NeedleState& s) { return {{"x", s.x}, {"y", s.y}, {"theta", s.theta}}; }

inline needle::NeedleState state_from_json(const json& j, const std::string& path) {
  return {number(j, "x", path), number(j, "y", path), number(j, "theta", path)};
}

inline json to_json(const needle::Metrics& m) {
  return {{"gates_entered", m.gates_entered},
          {"gates_cleared", m.gates_cleared},
          {"gates_broken", m.gates_broken},
          {"finished", m.finished}};
}

inline json to_json(const needle::Polygon& p) {
  json a = json::array();
  for (const auto& v : p.vertices) a.push_back({v.x, v.y});
  return a;
}

inline needle::Polygon polygon_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() < 3) throw ParseError(path + ": expected an array of at least 3 vertices");
  needle::Polygon p;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string vp = path + "[" + std::to_string(i) + "]";
    if (!j[i].is_array() || j[i].size() != 2) throw ParseError(vp + ": expected [x, y]");
    p.vertices.push_back({number(j[i][0], vp + "[0]"), number(j[i][1], vp + "[1]")});
  }
  return p;
}

inline json to_json(const needle::Level& level) {
  json gates = json::array();
  for (const auto& g : level.gates)
    gates.push_back({{"x", g.x}, {"y", g.y}, {"theta", g.theta}, {"width", g.width}, {"height", g.height}});
  json tissues = json::array(), deep = json::array();
  for (const auto& p : level.tissues) tissues.push_back(to_json(p));
  for (const auto& p : level.deep_tissues) deep.push_back(to_json(p));
  return {{"format", "demoplan.level"},
          {"version", kLevelVersion},
          {"id", level.id},
          {"width", level.width},
          {"height", level.height},
          {"start", to_json(level.start)},
          {"u_max", level.u_max},
          {"v_max", level.v_max},
          {"damage_rate", level.damage_rate},
          {"damage_budget", level.damage_budget},
          {"bar_fraction", level.bar_fraction},
          {"gates", gates},
          {"tissues", tissues},
          {"deep_tissues", deep}};
}

inline needle::Level level_from_json(const json& j) {
  check_header(j, "demoplan.level", kLevelVersion);
  needle::Level l;
  l.id = string(j, "id", "$");
  l.width = number(j, "width", "$");
  l.height = number(j, "height", "$");
  l.start = state_from_json(field(j, "start", "$"), "$.start");
  l.u_max = number(j, "u_max", "$");
  l.v_max = number(j, "v_max", "$");
  l.damage_rate = number(j, "damage_rate", "$");
  l.damage_budget = number(j, "damage_budget", "$");
  l.bar_fraction = number(j, "bar_fraction", "$");
  if (!(l.width > 0.0)) throw ParseError("$.width: must be positive");
  if (!(l.height > 0.0)) throw ParseError("$.height: must be positive");
  if (!(l.u_max > 0.0)) throw ParseError("$.u_max: must be positive");
  if (!(l.v_max > 0.0)) throw ParseError("$.v_max: must be positive");
  if (!(l.bar_fraction > 0.0 && l.bar_fraction < 0.5)) throw ParseError("$.bar_fraction: must lie in (0, 0.5)");
  const json& gates = array(j, "gates", "$");
  for (std::size_t i = 0; i < gates.size(); ++i) {
    const std::string gp = "$.gates[" + std::to_string(i) + "]";
    needle::Gate g{number(gates[i], "x", gp), number(gates[i], "y", gp), number(gates[i], "theta", gp),
                   number(gates[i], "width", gp), number(gates[i], "height", gp)};
    if (!(g.width > 0.0)) throw ParseError(gp + ".width: must be positive");
    if (!(g.height > 0.0)) throw ParseError(gp + ".height: must be positive");
    l.gates.push_back(g);
  }
  const json& tissues = array(j, "tissues", "$");
  for (std::size_t i = 0; i < tissues.size(); ++i)
    l.tissues.push_back(polygon_from_json(tissues[i], "$.tissues[" + std::to_string(i) + "]"));
  const json& deep = array(j, "deep_tissues", "$");
  for (std::size_t i = 0; i < deep.size(); ++i)
    l.deep_tissues.push_back(polygon_from_json(deep[i], "$.deep_tissues[" + std::to_string(i) + "]"));
  return l;
}

inline std::string level_to_string(const needle::Level& l) { return dump(to_json(l)); }

inline needle::Level level_from_string(const std::string& text) { return level_from_json(parse_text(text, "level")); }

inline void save_level(const needle::Level& l, const std::filesystem::path& p) { write_file(p, level_to_string(l)); }

inline needle::Level load_level(const std::filesystem::path& p) {
  try {
    return level_from_string(read_file(p));
  } catch (const ParseError& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Demonstrations: trace rows are [t, x, y, theta, u, v].

inline json trace_to_json(const needle::Trace& trace) {
  json rows = json::array();
  for (const auto& s : trace)
    rows.push_back({s.t, s.state.x, s.state.y, s.state.theta, s.control.u, s.control.v});
  return rows;
}

inline needle::Trace trace_from_json(const json& rows, const std::string& path) {
  if (!rows.is_array()) throw ParseError(path + ": expected an array");
  needle::Trace trace;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string rp = path + "[" + std::to_string(i) + "]";
    const json& r = rows[i];
    if (!r.is_array() || r.size() != 6) throw ParseError(rp + ": expected [t, x, y, theta, u, v]");
    if (!r[0].is_number_integer()) throw ParseError(rp + ".t: expected an integer");
    needle::TraceStep st;
    st.t = r[0].get<int>();
    st.state = {number(r[1], rp + ".x"), number(r[2], rp + ".y"), number(r[3], rp + ".theta")};
    st.control = {number(r[4], rp + ".u"), number(r[5], rp + ".v")};
    trace.push_back(st);
  }
  return trace;
}

inline json to_json(const needle::Demonstration& d) {
  return {{"format", "demoplan.demonstration"},
          {"version", kDemoVersion},
          {"level_id", d.level_id},
          {"columns", {"t", "x", "y", "theta", "u", "v"}},
          {"trace", trace_to_json(d.trace)}};
}

inline needle::Demonstration demonstration_from_json(const json& j) {
  check_header(j, "demoplan.demonstration", kDemoVersion);
  needle::Demonstration d;
  d.level_id = string(j, "level_id", "$");
  d.trace = trace_from_json(array(j, "trace", "$"), "$.trace");
  if (auto bad = needle::first_dynamics_violation(d.trace))
    throw ParseError("$.trace[" + std::to_string(*bad + 1) + "]: state is not consistent with the dynamics");
  for (std::size_t i = 1; i < d.trace.size(); ++i)
    if (d.trace[i].t != d.trace[i - 1].t + 1)
      throw ParseError("$.trace[" + std::to_string(i) + "].t: step indices must increase by one");
  return d;
}

inline std::string demonstration_to_string(const needle::Demonstration& d) { return dump(to_json(d)); }

inline needle::Demonstration demonstration_from_string(const std::string& text) {
  return demonstration_from_json(parse_text(text, "demonstration"));
}

inline void save_demonstration(const needle::Demonstration& d, const std::filesystem::path& p) {
  write_file(p, demonstration_to_string(d));
}

inline needle::Demonstration load_demonstration(const std::filesystem::path& p) {
  try {
    return demonstration_from_string(read_file(p));
  } catch (const ParseError& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Mixture models: covariances are stored row-major.

inline json to_json(const gmm::GmmModel& m) {
  json means = json::array(), covs = json::array();
  for (const auto& g : m.components()) {
    means.push_back(std::vector<double>(g.mean().data(), g.mean().data() + g.dim()));
    std::vector<double> flat;
    for (int r = 0; r < g.dim(); ++r)
      for (int c = 0; c < g.dim(); ++c) flat.push_back(g.cov()(r, c));
    covs.push_back(flat);
  }
  return {{"format", "demoplan.gmm"}, {"version", kGmmVersion}, {"dim", m.dim()},   {"k", m.k()},
          {"weights", m.weights()},   {"means", means},          {"covariances", covs}};
}

inline std::vector<double> numbers(const json& j, std::size_t expected, const std::string& path) {
  if (!j.is_array() || j.size() != expected)
    throw ParseError(path + ": expected an array of " + std::to_string(expected) + " numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline gmm::GmmModel gmm_from_json(const json& j, const std::string& path = "$") {
  if (path == "$") check_header(j, "demoplan.gmm", kGmmVersion);
  const long long d = integer(j, "dim", path), k = integer(j, "k", path);
  if (d < 1) throw ParseError(path + ".dim: must be positive");
  if (k < 1) throw ParseError(path + ".k: must be positive");
  auto w = numbers(field(j, "weights", path), static_cast<std::size_t>(k), path + ".weights");
  const json& means = array(j, "means", path);
  const json& covs = array(j, "covariances", path);
  if (means.size() != static_cast<std::size_t>(k)) throw ParseError(path + ".means: expected k entries");
  if (covs.size() != static_cast<std::size_t>(k)) throw ParseError(path + ".covariances: expected k entries");
  std::vector<gmm::Gaussian> comps;
  for (long long c = 0; c < k; ++c) {
    const std::string cs = "[" + std::to_string(c) + "]";
    auto mu = numbers(means[static_cast<std::size_t>(c)], static_cast<std::size_t>(d), path + ".means" + cs);
    auto cv = numbers(covs[static_cast<std::size_t>(c)], static_cast<std::size_t>(d * d), path + ".covariances" + cs);
    gmm::Vector m = Eigen::Map<gmm::Vector>(mu.data(), d);
    gmm::Matrix s(d, d);
    for (long long r = 0; r < d; ++r)
      for (long long q = 0; q < d; ++q) s(r, q) = cv[static_cast<std::size_t>(r * d + q)];
    comps.emplace_back(m, s);
    if (!comps.back().positive_definite())
      throw ParseError(path + ".covariances" + cs + ": not positive definite");
  }
  try {
    return gmm::GmmModel(w, comps);
  } catch (const InvalidArgument& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline std::string gmm_to_string(const gmm::GmmModel& m) { return dump(to_json(m)); }
inline gmm::GmmModel gmm_from_string(const std::string& text) { return gmm_from_json(parse_text(text, "gmm")); }

}  // namespace demoplan::io
