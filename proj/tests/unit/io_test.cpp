#include <gtest/gtest.h>

#include <filesystem>
#include <functional>

#include "demoplan/io.hpp"
#include "fixtures.hpp"

using namespace demoplan;
using namespace demoplan::needle;
using io::json;

namespace {

// Every numeric leaf as (path in "$.a[0].b" form, pointer into the document).
void numeric_leaves(const json& j, const std::string& path, const json::json_pointer& ptr,
                    std::vector<std::pair<std::string, json::json_pointer>>& out) {
  if (j.is_number()) {
    out.emplace_back(path, ptr);
  } else if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      numeric_leaves(*it, path + "." + it.key(), ptr / it.key(), out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i)
      numeric_leaves(j[i], path + "[" + std::to_string(i) + "]", ptr / i, out);
  }
}

void expect_named(const std::function<void()>& load, const std::string& path) {
  try {
    load();
    ADD_FAILURE() << "no error for " << path;
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos) << e.what();
  }
}

Level rich_level() {
  LevelSpec spec;
  spec.seed = 77;
  spec.n_obstacles = 2;
  spec.n_tissues = 2;
  return generate_level(spec);
}

}  // namespace

TEST(LevelFile, RoundTripIsExact) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    LevelSpec spec;
    spec.seed = seed;
    spec.n_obstacles = 2;
    spec.n_tissues = 2;
    Level l = generate_level(spec);
    const std::string text = io::level_to_string(l);
    Level back = io::level_from_string(text);
    EXPECT_EQ(io::level_to_string(back), text);
    EXPECT_EQ(back.gates.size(), l.gates.size());
    for (std::size_t g = 0; g < l.gates.size(); ++g) {
      EXPECT_EQ(back.gates[g].x, l.gates[g].x);
      EXPECT_EQ(back.gates[g].theta, l.gates[g].theta);
    }
    EXPECT_EQ(back.start, l.start);
  }
}

TEST(LevelFile, EveryCorruptNumberIsNamed) {
  json j = io::to_json(rich_level());
  std::vector<std::pair<std::string, json::json_pointer>> leaves;
  numeric_leaves(j, "$", json::json_pointer(), leaves);
  ASSERT_GT(leaves.size(), 20u);
  for (const auto& [path, ptr] : leaves) {
    if (path == "$.version") continue;
    json bad = j;
    bad[ptr] = "oops";
    expect_named([&] { io::level_from_json(bad); }, path);
  }
}

TEST(LevelFile, StructuralErrors) {
  json j = io::to_json(rich_level());
  json bad = j;
  bad.erase("gates");
  expect_named([&] { io::level_from_json(bad); }, "$.gates");
  bad = j;
  bad["format"] = "demoplan.demonstration";
  expect_named([&] { io::level_from_json(bad); }, "$.format");
  bad = j;
  bad["version"] = 2;
  expect_named([&] { io::level_from_json(bad); }, "$.version");
  bad = j;
  bad["gates"][0]["width"] = -1.0;
  expect_named([&] { io::level_from_json(bad); }, "$.gates[0].width");
  bad = j;
  bad["tissues"][0] = json::array({json::array({0, 0}), json::array({1, 1})});
  expect_named([&] { io::level_from_json(bad); }, "$.tissues[0]");
  EXPECT_THROW(io::level_from_string("{not json"), ParseError);
}

TEST(LevelFile, LoadNamesTheFile) {
  const auto path = std::filesystem::temp_directory_path() / "demoplan_io_test_level.json";
  io::write_file(path, "{\"format\": \"demoplan.level\", \"version\": 1}");
  try {
    io::load_level(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("$.id"), std::string::npos);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(io::load_level(path), ParseError);
}

TEST(DemoFile, RoundTripIsExact) {
  const auto& t = fx::trained();
  for (const auto& d : t.demos) {
    const std::string text = io::demonstration_to_string(d);
    Demonstration back = io::demonstration_from_string(text);
    EXPECT_EQ(back.trace, d.trace);
    EXPECT_EQ(back.level_id, d.level_id);
  }
}

TEST(DemoFile, RejectsTracesThatBreakTheDynamics) {
  json j = io::to_json(fx::trained().demos[0]);
  json bad = j;
  bad["trace"][5][1] = bad["trace"][5][1].get<double>() + 0.25;
  expect_named([&] { io::demonstration_from_json(bad); }, "$.trace[");
  bad = j;
  bad["trace"][3][0] = 17;
  expect_named([&] { io::demonstration_from_json(bad); }, "$.trace[");
  bad = j;
  bad["trace"][2][4] = "left";
  expect_named([&] { io::demonstration_from_json(bad); }, "$.trace[2]");
}

TEST(DemoFile, EveryCorruptNumberIsNamed) {
  Demonstration d{"tiny", fx::drive({2, 30, 0}, {{0.1, 1.0}, {0.0, 1.5}})};
  json j = io::to_json(d);
  std::vector<std::pair<std::string, json::json_pointer>> leaves;
  numeric_leaves(j, "$", json::json_pointer(), leaves);
  for (const auto& [path, ptr] : leaves) {
    if (path == "$.version") continue;
    json bad = j;
    bad[ptr] = nullptr;
    expect_named([&] { io::demonstration_from_json(bad); }, path.substr(0, path.rfind('[')));
  }
}

TEST(GmmFile, RoundTripIsExact) {
  const auto& m = fx::trained().lib.at(ActionKind::ConnectGates).density;
  gmm::GmmModel back = io::gmm_from_string(io::gmm_to_string(m));
  ASSERT_EQ(back.k(), m.k());
  for (int c = 0; c < m.k(); ++c) {
    EXPECT_EQ(back.weights()[c], m.weights()[c]);
    EXPECT_EQ(back.component(c).mean(), m.component(c).mean());
    EXPECT_EQ(back.component(c).cov(), m.component(c).cov());
  }
  json j = io::to_json(m);
  j["covariances"][1][0] = -5.0;
  expect_named([&] { io::gmm_from_json(j); }, "$.covariances[1]");
  j = io::to_json(m);
  j["weights"] = json::array({1.0});
  expect_named([&] { io::gmm_from_json(j); }, "$.weights");
}
