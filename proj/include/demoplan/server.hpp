#pragma once

// Demonstration recording service. The server owns the dynamics: clients send
// controls, the server steps each session's needle and reports states,
// predicates and the running score, and writes the finished trace as a
// demonstration file on commit.
//
// HTTP surface (JSON bodies, NDJSON for the tick stream):
//   GET    /api/v1/info
//   GET    /api/v1/levels
//   GET    /api/v1/levels/{id}
//   POST   /api/v1/sessions               {"level_id": ...}
//   GET    /api/v1/sessions/{sid}
//   POST   /api/v1/sessions/{sid}/tick    {"u": ..., "v": ...}
//   POST   /api/v1/sessions/{sid}/stream  one {"u","v"} object per line
//   POST   /api/v1/sessions/{sid}/commit
//   DELETE /api/v1/sessions/{sid}

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "demoplan/errors.hpp"
#include "demoplan/io.hpp"
#include "demoplan/needle.hpp"
#include "demoplan/skills.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen's
// product kernels.
#include <httplib.h>

namespace demoplan::serve {

using io::json;
using needle::Level;

inline constexpr int kApiVersion = 1;
inline constexpr int kTickRate = 30;

/// A failure that maps to an HTTP status.
struct ApiError : Error {
  int status;
  ApiError(int status, std::string kind, const std::string& what) : Error(std::move(kind), what), status(status) {}
};

inline json error_json(const std::string& kind, const std::string& message) {
  return {{"error", {{"kind", kind}, {"message", message}}}};
}

inline json predicates_json(const needle::PredicateSet& p) {
  return {{"needle_in_gate", p.needle_in_gate ? json(*p.needle_in_gate) : json(nullptr)},
          {"has_prev_gate", p.has_prev_gate},
          {"gate_closed", p.gate_closed},
          {"gate_open", p.gate_open},
          {"at_exit", p.at_exit}};
}

struct Session {
  std::string id;
  const Level* level = nullptr;
  needle::Trace trace;
  needle::GateHistory history;
  needle::PredicateSet predicates;
  bool committed = false;
  std::mutex mu;
};

/// Session bookkeeping and dynamics, independent of the transport.
class RecorderService {
 public:
  RecorderService(std::vector<Level> levels, std::filesystem::path out_dir)
      : levels_(std::move(levels)), out_dir_(std::move(out_dir)) {
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      if (by_id_.count(levels_[i].id)) throw ConfigError("serve: duplicate level id '" + levels_[i].id + "'");
      by_id_[levels_[i].id] = i;
    }
  }

  const std::vector<Level>& levels() const { return levels_; }

  const Level& level(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw ApiError(404, "not-found", "no level '" + id + "'");
    return levels_[it->second];
  }

  json info() const {
    return {{"api_version", kApiVersion}, {"tick_rate", kTickRate}, {"levels", levels_.size()}};
  }

  json list_levels() const {
    json arr = json::array();
    for (const auto& l : levels_)
      arr.push_back({{"id", l.id}, {"gates", l.gates.size()}, {"width", l.width}, {"height", l.height}});
    return {{"levels", arr}};
  }

  json create_session(const std::string& level_id) {
    const Level& l = level(level_id);
    auto s = std::make_shared<Session>();
    s->level = &l;
    s->history = needle::GateHistory(l);
    s->trace.push_back({0, l.start, {}});
    s->predicates = needle::eval_predicates(l.start, l, s->history);
    {
      std::lock_guard lock(mu_);
      s->id = "s" + std::to_string(++counter_);
      sessions_[s->id] = s;
    }
    std::lock_guard lock(s->mu);
    return snapshot(*s);
  }

  json get_session(const std::string& sid) {
    auto s = find(sid);
    std::lock_guard lock(s->mu);
    return snapshot(*s);
  }

  /// Applies one control at the current state and returns the new state.
  json tick(const std::string& sid, double u, double v) {
    auto s = find(sid);
    std::lock_guard lock(s->mu);
    return tick_locked(*s, u, v);
  }

  /// Applies each control in turn; one response line per control. Stops at
  /// the first rejected control, reporting it as the last line.
  std::vector<json> tick_many(const std::string& sid, const std::vector<std::pair<double, double>>& controls) {
    auto s = find(sid);
    std::lock_guard lock(s->mu);
    std::vector<json> out;
    for (auto [u, v] : controls) {
      try {
        out.push_back(tick_locked(*s, u, v));
      } catch (const ApiError& e) {
        out.push_back(error_json(e.kind(), e.what()));
        break;
      }
    }
    return out;
  }

  /// Writes the session's trace as a demonstration file and closes the
  /// session. Sessions without a single tick are rejected.
  json commit(const std::string& sid) {
    auto s = find(sid);
    std::lock_guard lock(s->mu);
    if (s->committed) throw ApiError(409, "conflict", "session " + sid + " is already committed");
    if (s->trace.size() < 2) throw ApiError(400, "empty-demonstration", "session " + sid + " has no ticks to commit");
    needle::Demonstration d{s->level->id, s->trace};
    std::filesystem::create_directories(out_dir_);
    const std::filesystem::path path = out_dir_ / (s->level->id + "-" + s->id + ".json");
    io::save_demonstration(d, path);
    s->committed = true;
    json j = snapshot(*s);
    j["path"] = path.string();
    j["steps"] = s->trace.size() - 1;
    {
      std::lock_guard lock2(mu_);
      sessions_.erase(sid);
    }
    return j;
  }

  void drop(const std::string& sid) {
    std::lock_guard lock(mu_);
    if (!sessions_.erase(sid)) throw ApiError(404, "not-found", "no session '" + sid + "'");
  }

  std::size_t open_sessions() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

 private:
  std::shared_ptr<Session> find(const std::string& sid) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(sid);
    if (it == sessions_.end()) throw ApiError(404, "not-found", "no session '" + sid + "'");
    return it->second;
  }

  json tick_locked(Session& s, double u, double v) {
    const Level& l = *s.level;
    if (s.committed) throw ApiError(409, "conflict", "session " + s.id + " is already committed");
    if (s.predicates.at_exit) throw ApiError(409, "finished", "session " + s.id + " has reached the exit");
    if (!std::isfinite(u) || !std::isfinite(v) || !l.control_in_bounds({u, v}))
      throw ApiError(400, "invalid-argument", "control (" + std::to_string(u) + ", " + std::to_string(v) +
                                                  ") outside |u| <= u_max, 0 <= v <= v_max");
    const needle::Control c{u, v};
    s.trace.back().control = c;
    const needle::NeedleState next = needle::step(s.trace.back().state, c);
    s.trace.push_back({s.trace.back().t + 1, next, c});
    s.predicates = needle::eval_predicates(next, l, s.history);
    return snapshot(s);
  }

  static json snapshot(const Session& s) {
    const Level& l = *s.level;
    const auto& last = s.trace.back();
    const needle::Validity valid = needle::check_valid(s.trace, l);
    return {{"session_id", s.id},
            {"level_id", l.id},
            {"t", last.t},
            {"state", io::to_json(last.state)},
            {"predicates", predicates_json(s.predicates)},
            {"action", skills::label_for(s.predicates).str()},
            {"damage", needle::trace_damage(s.trace, l)},
            {"valid", valid.valid},
            {"invalid_reason", valid.valid ? json(nullptr) : json(valid.reason)},
            {"score", io::to_json(needle::score(s.trace, l))},
            {"finished", s.predicates.at_exit}};
  }

  std::vector<Level> levels_;
  std::map<std::string, std::size_t> by_id_;
  std::filesystem::path out_dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  unsigned long counter_ = 0;
};

// ---------------------------------------------------------------------------
// HTTP binding

inline void send_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ApiError(400, "parse-error", std::string("request body: ") + e.what());
  }
}

inline std::pair<double, double> control_from(const json& j, const std::string& path) {
  if (!j.is_object()) throw ApiError(400, "parse-error", path + ": expected an object with u and v");
  try {
    return {io::number(j, "u", path), io::number(j, "v", path)};
  } catch (const ParseError& e) {
    throw ApiError(400, "parse-error", e.what());
  }
}

template <class F>
auto guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ApiError& e) {
      send_json(res, error_json(e.kind(), e.what()), e.status);
    } catch (const Error& e) {
      send_json(res, error_json(e.kind(), e.what()), 400);
    } catch (const std::exception& e) {
      send_json(res, error_json("internal", e.what()), 500);
    }
  };
}

/// Registers the API routes on `server`, and mounts `static_dir` at / when it
/// is non-empty.
inline void install_routes(httplib::Server& server, RecorderService& svc, const std::filesystem::path& static_dir = {}) {
  server.Get("/api/v1/info", guarded([&](const auto&, auto& res) { send_json(res, svc.info()); }));
  server.Get("/api/v1/levels", guarded([&](const auto&, auto& res) { send_json(res, svc.list_levels()); }));
  server.Get(R"(/api/v1/levels/([^/]+))",
             guarded([&](const auto& req, auto& res) { send_json(res, io::to_json(svc.level(req.matches[1]))); }));
  server.Post("/api/v1/sessions", guarded([&](const auto& req, auto& res) {
                json body = parse_body(req);
                if (!body.contains("level_id") || !body["level_id"].is_string())
                  throw ApiError(400, "parse-error", "$.level_id: expected a string");
                send_json(res, svc.create_session(body["level_id"].template get<std::string>()), 201);
              }));
  server.Get(R"(/api/v1/sessions/([^/]+))",
             guarded([&](const auto& req, auto& res) { send_json(res, svc.get_session(req.matches[1])); }));
  server.Delete(R"(/api/v1/sessions/([^/]+))", guarded([&](const auto& req, auto& res) {
                  svc.drop(req.matches[1]);
                  send_json(res, {{"dropped", std::string(req.matches[1])}});
                }));
  server.Post(R"(/api/v1/sessions/([^/]+)/tick)", guarded([&](const auto& req, auto& res) {
                auto [u, v] = control_from(parse_body(req), "$");
                send_json(res, svc.tick(req.matches[1], u, v));
              }));
  server.Post(R"(/api/v1/sessions/([^/]+)/stream)", guarded([&](const auto& req, auto& res) {
                std::vector<std::pair<double, double>> controls;
                std::istringstream in(req.body);
                std::string line;
                for (int n = 0; std::getline(in, line); ++n) {
                  if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                  json j;
                  try {
                    j = json::parse(line);
                  } catch (const json::parse_error& e) {
                    throw ApiError(400, "parse-error", "line " + std::to_string(n + 1) + ": " + e.what());
                  }
                  controls.push_back(control_from(j, "line " + std::to_string(n + 1)));
                }
                std::string out;
                for (const auto& j : svc.tick_many(req.matches[1], controls)) out += j.dump() + "\n";
                res.set_content(out, "application/x-ndjson");
              }));
  server.Post(R"(/api/v1/sessions/([^/]+)/commit)",
              guarded([&](const auto& req, auto& res) { send_json(res, svc.commit(req.matches[1])); }));
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir.string()))
    throw ConfigError("serve: static directory '" + static_dir.string() + "' does not exist");
}

}  // namespace demoplan::serve
