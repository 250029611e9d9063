#pragma once

// Demonstrations to skill densities: predicate-driven segmentation, per-action
// feature extraction with z-scoring, GMM fitting, skill bundles and chains.

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "demoplan/errors.hpp"
#include "demoplan/features.hpp"
#include "demoplan/gmm.hpp"
#include "demoplan/io.hpp"
#include "demoplan/needle.hpp"
#include "demoplan/random.hpp"

namespace demoplan::skills {

using gmm::Vector;
using needle::Level;
using needle::Trace;

// ---------------------------------------------------------------------------
// Segmentation

/// The five-state mapping from predicates to the active action.
inline ActionLabel label_for(const needle::PredicateSet& p) {
  if (p.at_exit) return ActionLabel::done();
  if (p.needle_in_gate) return ActionLabel::pass(*p.needle_in_gate);
  if (p.gate_closed.empty() || p.all_closed()) return ActionLabel::exit();
  int first_open = 0;
  while (!p.gate_open[static_cast<std::size_t>(first_open)]) ++first_open;
  if (p.has_prev_gate) {
    int prev = -1;
    for (int g = 0; g < first_open; ++g)
      if (p.gate_closed[static_cast<std::size_t>(g)]) prev = g;
    if (prev < 0)
      for (int g = static_cast<int>(p.gate_closed.size()) - 1; g >= 0; --g)
        if (p.gate_closed[static_cast<std::size_t>(g)]) {
          prev = g;
          break;
        }
    return ActionLabel::connect(prev, first_open);
  }
  return ActionLabel::approach(first_open);
}

struct Clip {
  ActionLabel label;
  /// Index of the clip's first step in the segmented trace.
  std::size_t begin = 0;
  Trace steps;
  /// Gate history just before the clip's first step.
  needle::GateHistory history_before;
};

/// Splits a trace into maximal runs with the same predicate-derived label.
/// `history` is the gate history before the first step (empty for a whole
/// demonstration).
inline std::vector<Clip> segment(const Trace& trace, const Level& level, needle::GateHistory history) {
  if (auto bad = needle::first_dynamics_violation(trace))
    throw SegmentationError("segment: trace step " + std::to_string(*bad) + " is not consistent with the dynamics");
  for (std::size_t i = 0; i + 1 < trace.size(); ++i)
    if (!level.control_in_bounds(trace[i].control))
      throw SegmentationError("segment: control at step " + std::to_string(i) + " exceeds the limits of level '" +
                              level.id + "'");
  std::vector<Clip> clips;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    needle::GateHistory before = history;
    ActionLabel label = label_for(needle::eval_predicates(trace[i].state, level, history));
    if (clips.empty() || !(clips.back().label == label)) clips.push_back({label, i, {}, std::move(before)});
    clips.back().steps.push_back(trace[i]);
  }
  return clips;
}

inline std::vector<Clip> segment(const needle::Demonstration& demo, const Level& level) {
  if (!demo.level_id.empty() && !level.id.empty() && demo.level_id != level.id)
    throw SegmentationError("segment: demonstration recorded on '" + demo.level_id + "', not '" + level.id + "'");
  return segment(demo.trace, level, needle::GateHistory(level));
}

// ---------------------------------------------------------------------------
// Skill models

/// Feature layout for a skill plus the standardization applied before the
/// density: z = (x - offset) / scale.
struct FeatureSchema {
  std::vector<std::string> names;
  Vector offset;
  Vector scale;

  int dim() const { return static_cast<int>(names.size()); }

  Vector standardize(const Vector& x) const {
    if (x.size() != offset.size()) throw InvalidArgument("schema: feature width mismatch");
    return ((x - offset).array() / scale.array()).matrix();
  }
};

struct SkillModel {
  ActionKind kind = ActionKind::ApproachGate;
  FeatureSchema schema;
  gmm::GmmModel density;

  /// Expert log-density of a raw feature vector, evaluated on the
  /// standardized features.
  double log_likelihood(const Vector& raw) const { return density.log_pdf(schema.standardize(raw)); }
};

struct TrainConfig {
  gmm::FitConfig fit{};
  /// Standard deviation of the jitter added to boolean features at fit time.
  double bool_jitter = 1e-4;
  /// Lower bound on the standardization scale.
  double min_scale = 1e-6;
  /// Leave out each clip's first row, whose differences are the Δ=0
  /// placeholder rather than observed motion. Kept, those rows form a tight
  /// "not moving" mode that the optimizer then converges to.
  bool skip_clip_start = true;
};

struct ClipRef {
  const Level* level = nullptr;
  ActionLabel label;
  Trace steps;
};

/// Pooled raw feature rows for all clips.
inline std::vector<Vector> feature_rows(const std::vector<ClipRef>& clips, ActionKind kind,
                                        bool skip_clip_start = false) {
  std::vector<Vector> rows;
  for (const auto& c : clips) {
    if (c.label.kind != kind) throw InvalidArgument("train_skill: clip " + c.label.str() + " is not of kind " +
                                                    std::string(to_string(kind)));
    auto r = features::clip_features(c.steps, *c.level, c.label);
    rows.insert(rows.end(), r.begin() + (skip_clip_start && !r.empty() ? 1 : 0), r.end());
  }
  return rows;
}

inline SkillModel train_skill(const std::vector<ClipRef>& clips, ActionKind kind, const TrainConfig& cfg = {},
                              gmm::FitTrace* trace = nullptr) {
  if (kind == ActionKind::Done) throw InvalidArgument("train_skill: DONE has no density");
  std::vector<Vector> rows = feature_rows(clips, kind, cfg.skip_clip_start);
  const int d = features::feature_dim(kind);
  const std::size_t need = static_cast<std::size_t>(cfg.fit.k) * static_cast<std::size_t>(d + 1);
  if (rows.size() < need)
    throw InsufficientData("train_skill: " + std::string(to_string(kind)) + " has " + std::to_string(rows.size()) +
                           " feature rows, needs at least " + std::to_string(need));

  const int flag = features::base_width(kind);  // in_tissue column
  Rng gen = derive_rng(cfg.fit.seed, {0x5c11, static_cast<std::uint64_t>(kind)});
  std::normal_distribution<double> jitter(0.0, cfg.bool_jitter);
  for (auto& r : rows) r[flag] += jitter(gen);

  SkillModel skill;
  skill.kind = kind;
  skill.schema.names = features::feature_names(kind);
  Vector mean = Vector::Zero(d), sq = Vector::Zero(d);
  for (const auto& r : rows) mean += r;
  mean /= static_cast<double>(rows.size());
  for (const auto& r : rows) sq += (r - mean).cwiseAbs2();
  Vector sd = (sq / static_cast<double>(rows.size())).cwiseSqrt();
  for (int i = 0; i < d; ++i) sd[i] = std::max(sd[i], cfg.min_scale);
  skill.schema.offset = mean;
  skill.schema.scale = sd;

  std::vector<Vector> z;
  z.reserve(rows.size());
  for (const auto& r : rows) z.push_back(skill.schema.standardize(r));
  skill.density = gmm::fit_em(z, cfg.fit, trace);
  return skill;
}

/// Skills keyed by action kind.
struct SkillLibrary {
  std::map<ActionKind, SkillModel> skills;

  bool has(ActionKind k) const { return skills.count(k) > 0; }
  const SkillModel& at(ActionKind k) const {
    auto it = skills.find(k);
    if (it == skills.end()) throw ConfigError("no trained skill for " + std::string(to_string(k)));
    return it->second;
  }
};

struct TrainingSet {
  std::map<ActionKind, std::vector<ClipRef>> clips;
};

/// Segments every demonstration against its level and groups the clips by
/// action kind. `levels` must outlive the returned set.
inline TrainingSet collect_clips(const std::vector<needle::Demonstration>& demos, const std::vector<Level>& levels) {
  TrainingSet set;
  for (const auto& d : demos) {
    const Level* level = nullptr;
    for (const auto& l : levels)
      if (l.id == d.level_id) level = &l;
    if (!level) throw ConfigError("demonstration references unknown level '" + d.level_id + "'");
    for (auto& c : segment(d, *level)) {
      if (c.label.kind == ActionKind::Done) continue;
      set.clips[c.label.kind].push_back({level, c.label, std::move(c.steps)});
    }
  }
  return set;
}

/// Trains one skill per motion kind present in the demonstrations.
inline SkillLibrary train_library(const std::vector<needle::Demonstration>& demos, const std::vector<Level>& levels,
                                  const TrainConfig& cfg = {}) {
  if (demos.empty()) throw InsufficientData("train: no demonstrations");
  TrainingSet set = collect_clips(demos, levels);
  SkillLibrary lib;
  for (ActionKind k : kMotionKinds) {
    auto it = set.clips.find(k);
    if (it == set.clips.end()) continue;
    lib.skills.emplace(k, train_skill(it->second, k, cfg));
  }
  if (lib.skills.empty()) throw InsufficientData("train: demonstrations produced no motion clips");
  return lib;
}

// ---------------------------------------------------------------------------
// Chains

struct ChainElement {
  ActionLabel label;
  /// Index of the successor element, none for the terminal DONE.
  std::optional<std::size_t> successor;
};

struct SkillChain {
  std::vector<ChainElement> elements;
};

/// APPROACH(0), PASS(0), CONNECT(0,1), PASS(1), ..., MOVE_TO_EXIT, DONE.
inline SkillChain build_chain(const Level& level, const SkillLibrary* library = nullptr) {
  const int n = static_cast<int>(level.gates.size());
  std::vector<ActionLabel> labels;
  if (n > 0) {
    labels.push_back(ActionLabel::approach(0));
    labels.push_back(ActionLabel::pass(0));
    for (int g = 1; g < n; ++g) {
      labels.push_back(ActionLabel::connect(g - 1, g));
      labels.push_back(ActionLabel::pass(g));
    }
  }
  labels.push_back(ActionLabel::exit());
  labels.push_back(ActionLabel::done());
  if (library)
    for (const auto& l : labels)
      if (l.kind != ActionKind::Done && !library->has(l.kind))
        throw ConfigError("build_chain: level '" + level.id + "' needs a " + std::string(to_string(l.kind)) +
                          " skill");
  SkillChain chain;
  for (std::size_t i = 0; i < labels.size(); ++i)
    chain.elements.push_back({labels[i], i + 1 < labels.size() ? std::optional<std::size_t>(i + 1) : std::nullopt});
  return chain;
}

// ---------------------------------------------------------------------------
// Bundle file

inline constexpr int kBundleVersion = 1;

inline io::json to_json(const SkillLibrary& lib) {
  io::json skills = io::json::array();
  for (const auto& [kind, s] : lib.skills) {
    io::json density = io::to_json(s.density);
    density.erase("format");
    density.erase("version");
    skills.push_back({{"action", std::string(to_string(kind))},
                      {"feature_names", s.schema.names},
                      {"offset", std::vector<double>(s.schema.offset.data(), s.schema.offset.data() + s.schema.dim())},
                      {"scale", std::vector<double>(s.schema.scale.data(), s.schema.scale.data() + s.schema.dim())},
                      {"density", density}});
  }
  return {{"format", "demoplan.skills"}, {"version", kBundleVersion}, {"skills", skills}};
}

inline SkillLibrary library_from_json(const io::json& j) {
  io::check_header(j, "demoplan.skills", kBundleVersion);
  SkillLibrary lib;
  const auto& arr = io::array(j, "skills", "$");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string p = "$.skills[" + std::to_string(i) + "]";
    SkillModel s;
    try {
      s.kind = action_kind_from_string(io::string(arr[i], "action", p));
    } catch (const InvalidArgument& e) {
      throw ParseError(p + ".action: " + e.what());
    }
    if (s.kind == ActionKind::Done) throw ParseError(p + ".action: DONE has no density");
    const std::size_t d = static_cast<std::size_t>(features::feature_dim(s.kind));
    const auto& names = io::array(arr[i], "feature_names", p);
    if (names.size() != d) throw ParseError(p + ".feature_names: expected " + std::to_string(d) + " entries");
    for (std::size_t k = 0; k < d; ++k) {
      if (!names[k].is_string()) throw ParseError(p + ".feature_names[" + std::to_string(k) + "]: expected a string");
      s.schema.names.push_back(names[k].get<std::string>());
    }
    auto off = io::numbers(io::field(arr[i], "offset", p), d, p + ".offset");
    auto sc = io::numbers(io::field(arr[i], "scale", p), d, p + ".scale");
    s.schema.offset = Eigen::Map<Vector>(off.data(), static_cast<Eigen::Index>(d));
    s.schema.scale = Eigen::Map<Vector>(sc.data(), static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k)
      if (!(sc[k] > 0.0)) throw ParseError(p + ".scale[" + std::to_string(k) + "]: must be positive");
    s.density = io::gmm_from_json(io::field(arr[i], "density", p), p + ".density");
    if (s.density.dim() != static_cast<int>(d)) throw ParseError(p + ".density.dim: does not match the feature schema");
    lib.skills.emplace(s.kind, std::move(s));
  }
  return lib;
}

inline void save_library(const SkillLibrary& lib, const std::filesystem::path& p) { io::write_file(p, io::dump(to_json(lib))); }

inline SkillLibrary load_library(const std::filesystem::path& p) {
  try {
    return library_from_json(io::parse_text(io::read_file(p), p.string()));
  } catch (const ParseError& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

}  // namespace demoplan::skills
