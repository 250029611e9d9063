// demoplan: level generation, demonstration recording, training, planning and
// evaluation from the command line. Failures print one JSON line on stderr,
// {"error": {"kind": ..., "message": ...}}, and exit with status 1.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "demoplan/baselines.hpp"
#include "demoplan/demonstrator.hpp"
#include "demoplan/errors.hpp"
#include "demoplan/eval.hpp"
#include "demoplan/io.hpp"
#include "demoplan/level_gen.hpp"
#include "demoplan/optimizer.hpp"
#include "demoplan/server.hpp"
#include "demoplan/skills.hpp"

namespace fs = std::filesystem;
using namespace demoplan;
using io::json;

namespace {

std::vector<fs::path> json_files(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("'" + p.string() + "' does not exist");
  if (!fs::is_directory(p)) return {p};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename() != "suite.json")
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<needle::Level> load_levels(const fs::path& p) {
  std::vector<needle::Level> out;
  for (const auto& f : json_files(p)) out.push_back(io::load_level(f));
  if (out.empty()) throw ConfigError("no level files under '" + p.string() + "'");
  return out;
}

std::vector<needle::Demonstration> load_demos(const fs::path& p) {
  std::vector<needle::Demonstration> out;
  for (const auto& f : json_files(p)) out.push_back(io::load_demonstration(f));
  return out;
}

std::string safe_name(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  return s;
}

void add_optimizer_flags(CLI::App* app, opt::OptimizerConfig& cfg) {
  app->add_option("--seed", cfg.seed, "Random seed");
  app->add_option("--samples", cfg.samples, "Samples per iteration");
  app->add_option("--iters", cfg.iters, "Iterations per action");
  app->add_option("--alpha", cfg.alpha, "Step size in (0, 1)");
  app->add_option("--segments", cfg.segments, "Constant-control segments per action");
  app->add_option("--noise0", cfg.noise0, "Initial diagonal noise (relative to squared parameter scale)");
  app->add_option("--noise-decay", cfg.noise_decay, "Per-iteration noise decay in (0, 1]");
  app->add_option("--surrogate-k", cfg.surrogate_k, "Surrogate mixture components (1 = Gaussian)");
  app->add_option("--max-rejections", cfg.max_rejections, "Rejected draws allowed per iteration");
  app->add_flag("!--no-early-stop", cfg.early_stop, "Always run every iteration");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn skill densities from demonstrations and plan Needle Master levels"};
  app.require_subcommand(1);

  // gen-levels
  int n_levels = 10;
  needle::LevelSpec spec;
  std::uint64_t seed = 0;
  fs::path out;
  auto* gen = app.add_subcommand("gen-levels", "Write a seeded level suite");
  gen->add_option("--n", n_levels, "Number of levels")->check(CLI::PositiveNumber);
  gen->add_option("--gates", spec.n_gates, "Gates per level");
  gen->add_option("--obstacles", spec.n_obstacles, "Deep-tissue obstacles per level");
  gen->add_option("--tissues", spec.n_tissues, "Tissue patches per level");
  gen->add_option("--seed", seed, "Suite seed");
  gen->add_option("--out", out, "Output directory")->required();

  // demo-script
  fs::path levels_in;
  int per_level = 3;
  auto* demo = app.add_subcommand("demo-script", "Scripted demonstrations for every level");
  demo->add_option("--levels", levels_in, "Level file or directory")->required();
  demo->add_option("--per-level", per_level, "Demonstrations per level")->check(CLI::PositiveNumber);
  demo->add_option("--seed", seed, "Demonstrator seed");
  demo->add_option("--out", out, "Output directory")->required();

  // serve
  int port = 8080;
  std::string host = "127.0.0.1";
  fs::path static_dir;
  auto* srv = app.add_subcommand("serve", "Host the recording API and static UI");
  srv->add_option("--levels", levels_in, "Level file or directory")->required();
  srv->add_option("--out", out, "Directory for committed demonstrations")->required();
  srv->add_option("--port", port, "TCP port (0 picks a free one)");
  srv->add_option("--host", host, "Bind address");
  srv->add_option("--static", static_dir, "Static asset directory served at /");

  // train
  fs::path demos_in;
  skills::TrainConfig tcfg;
  auto* train = app.add_subcommand("train", "Segment demonstrations and fit one density per action");
  train->add_option("--demos", demos_in, "Demonstration file or directory")->required();
  train->add_option("--levels", levels_in, "Level file or directory")->required();
  train->add_option("--k", tcfg.fit.k, "Mixture components per skill");
  train->add_option("--seed", tcfg.fit.seed, "EM seed");
  train->add_option("--out", out, "Skill bundle file")->required();

  // plan
  fs::path skills_in;
  opt::OptimizerConfig ocfg;
  bool no_goal = false;
  auto* plan = app.add_subcommand("plan", "Plan one level");
  plan->add_option("--skills", skills_in, "Skill bundle")->required();
  plan->add_option("--level", levels_in, "Level file")->required();
  plan->add_option("--out", out, "Output directory")->required();
  plan->add_flag("--no-goal", no_goal, "Drop the successor-skill factor");
  add_optimizer_flags(plan, ocfg);

  // eval
  std::string method = "full";
  auto* ev = app.add_subcommand("eval", "Run one method over a suite and score it");
  ev->add_option("--skills", skills_in, "Skill bundle")->required();
  ev->add_option("--suite", levels_in, "Level directory")->required();
  ev->add_option("--method", method, "naive, nogoal or full")->check(CLI::IsMember({"naive", "nogoal", "full"}));
  ev->add_option("--out", out, "Output directory")->required();
  add_optimizer_flags(ev, ocfg);

  // compare
  auto* cmp = app.add_subcommand("compare", "All three methods over a suite");
  cmp->add_option("--skills", skills_in, "Skill bundle")->required();
  cmp->add_option("--suite", levels_in, "Level directory")->required();
  cmp->add_option("--out", out, "Output directory")->required();
  add_optimizer_flags(cmp, ocfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << serve::error_json("usage", e.what()).dump() << "\n";
    return 2;
  }

  try {
    if (*gen) {
      fs::create_directories(out);
      json suite = {{"format", "demoplan.suite"}, {"version", 1}, {"seed", seed}, {"levels", json::array()}};
      for (const auto& l : needle::generate_suite(spec, n_levels, seed)) {
        const std::string file = l.id + ".json";
        io::save_level(l, out / file);
        suite["levels"].push_back({{"id", l.id}, {"file", file}});
      }
      io::write_file(out / "suite.json", io::dump(suite));
      std::cout << "wrote " << n_levels << " levels to " << out.string() << "\n";
    } else if (*demo) {
      fs::create_directories(out);
      int written = 0;
      for (const auto& l : load_levels(levels_in)) {
        auto demos = needle::scripted_demonstrations(l, per_level, needle::level_demo_seed(seed, l.id));
        if (static_cast<int>(demos.size()) < per_level)
          throw GenerationFailure("demo-script: only " + std::to_string(demos.size()) + " of " +
                                  std::to_string(per_level) + " demonstrations succeeded on level '" + l.id + "'");
        for (std::size_t k = 0; k < demos.size(); ++k, ++written)
          io::save_demonstration(demos[k], out / (safe_name(l.id) + "-demo-" + std::to_string(k) + ".json"));
      }
      std::cout << "wrote " << written << " demonstrations to " << out.string() << "\n";
    } else if (*srv) {
      serve::RecorderService svc(load_levels(levels_in), out);
      httplib::Server server;
      serve::install_routes(server, svc, static_dir);
      const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
      if (bound < 0) throw ConfigError("serve: cannot bind " + host + ":" + std::to_string(port));
      std::cout << "listening on http://" << host << ":" << bound << std::endl;
      server.listen_after_bind();
    } else if (*train) {
      const auto levels = load_levels(levels_in);
      const auto demos = load_demos(demos_in);
      const auto lib = skills::train_library(demos, levels, tcfg);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      skills::save_library(lib, out);
      std::cout << "trained " << lib.skills.size() << " skills from " << demos.size() << " demonstrations\n";
    } else if (*plan) {
      const auto lib = skills::load_library(skills_in);
      const needle::Level level = io::load_level(levels_in);
      const auto run = eval::run_method(lib, level, no_goal ? eval::Method::NoGoal : eval::Method::Full, ocfg);
      fs::create_directories(out);
      io::write_file(out / "plan.json", io::dump(eval::to_json(run)));
      if (run.plan) io::write_file(out / "cost_traces.csv", eval::export_cost_traces(eval::cost_series(*run.plan)));
      if (!run.error.empty()) throw Infeasible("plan: " + run.error + " (partial plan written)");
      std::cout << "entered " << run.metrics.gates_entered << " cleared " << run.metrics.gates_cleared << " broken "
                << run.metrics.gates_broken << " finished " << run.metrics.finished << "\n";
    } else if (*ev || *cmp) {
      const auto lib = skills::load_library(skills_in);
      const auto suite = load_levels(levels_in);
      std::vector<eval::Method> methods;
      if (*ev) methods = {eval::method_from_string(method)};
      else methods = {eval::Method::Naive, eval::Method::NoGoal, eval::Method::Full};
      const eval::Comparison c = eval::run_comparison(lib, suite, ocfg, methods);
      fs::create_directories(out / "plans");
      std::vector<eval::CostSeries> series;
      for (const auto& r : c.runs) {
        io::write_file(out / "plans" / (safe_name(r.level_id) + "-" + eval::to_string(r.method) + ".json"),
                       io::dump(eval::to_json(r)));
        if (r.plan)
          for (auto s : eval::cost_series(*r.plan)) {
            s.name = r.level_id + "/" + eval::to_string(r.method) + "/" + s.name;
            series.push_back(std::move(s));
          }
      }
      io::write_file(out / "comparison.csv", eval::comparison_csv(c));
      io::write_file(out / "comparison.json", io::dump(eval::comparison_json(c, suite.size())));
      const std::string table = eval::comparison_table(c, suite.size());
      io::write_file(out / "comparison.txt", table);
      io::write_file(out / "cost_traces.csv", eval::export_cost_traces(series));
      std::cout << table;
    }
  } catch (const Error& e) {
    std::cerr << serve::error_json(e.kind(), e.what()).dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << serve::error_json("internal", e.what()).dump() << "\n";
    return 1;
  }
  return 0;
}
