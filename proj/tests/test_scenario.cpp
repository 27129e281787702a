#include <doctest.h>

#include "softlat/scenario.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace softlat;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string temp_dir(const std::string& tag) {
    std::string dir = (fs::temp_directory_path() / ("softlat_test_" + tag)).string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

const char* kTimingScenario = R"({
  "id": "t",
  "kind": "timing",
  "seed": 3,
  "config": {"gait": "grab_and_pull", "expected_total_travel_s": 498.0}
})";

}  // namespace

TEST_CASE("scenario loading validates the schema") {
    Scenario s = Scenario::load_text(kTimingScenario);
    CHECK(s.id == "t");
    CHECK(s.kind == "timing");
    CHECK(s.seed == 3);

    auto category_of = [](const std::string& text) {
        try {
            Scenario::load_text(text);
        } catch (const Error& e) {
            return e.category();
        }
        return std::string("no-error");
    };
    CHECK(category_of("{nope") == "parse");
    CHECK(category_of(R"({"kind":"timing","seed":1})") == "parse");           // id missing
    CHECK(category_of(R"({"id":"x","seed":1})") == "parse");                  // kind missing
    CHECK(category_of(R"({"id":"x","kind":"warp","seed":1})") == "parse");    // bad kind
    CHECK(category_of(R"({"id":"x","kind":"timing"})") == "parse");           // seed missing
    CHECK(category_of(R"({"id":"x","kind":"timing","seed":-1})") == "parse"); // signed seed
}

TEST_CASE("timing scenario reproduces the committed arithmetic") {
    ExperimentReport rep = run_scenario(Scenario::load_text(kTimingScenario));
    CHECK(rep.success);
    CHECK(rep.metrics.at("total_travel_s") == doctest::Approx(498.0).epsilon(1e-6));
    CHECK(rep.metrics.at("total_actuation_s") == doctest::Approx(82.8).epsilon(1e-6));
    CHECK(rep.metrics.at("cooling_per_cycle_s") == doctest::Approx(41.52));
    CHECK(!rep.config_hash.empty());
}

TEST_CASE("config hash is stable and seed-sensitive") {
    ExperimentReport a = run_scenario(Scenario::load_text(kTimingScenario));
    ExperimentReport b = run_scenario(Scenario::load_text(kTimingScenario));
    CHECK(a.config_hash == b.config_hash);
    CHECK(a.to_json() == b.to_json());

    RunOptions reseeded;
    reseeded.seed_override = 99;
    ExperimentReport c = run_scenario(Scenario::load_text(kTimingScenario), reseeded);
    CHECK(c.seed == 99);
    CHECK(c.config_hash != a.config_hash);
}

TEST_CASE("config overrides apply dotted keys with JSON values") {
    RunOptions opts;
    opts.config_overrides = {"expected_total_travel_s=497.5", "tolerance_s=1"};
    ExperimentReport rep = run_scenario(Scenario::load_text(kTimingScenario), opts);
    CHECK(rep.success);  // 498 is within 1 s of 497.5

    RunOptions bad;
    bad.config_overrides = {"no-equals-sign"};
    ExperimentReport failed = run_scenario(Scenario::load_text(kTimingScenario), bad);
    CHECK_FALSE(failed.success);
    CHECK(failed.failure.find("key=value") != std::string::npos);
}

TEST_CASE("a failing expectation produces a structured failure, not silence") {
    RunOptions opts;
    opts.config_overrides = {"expected_total_travel_s=10"};
    ExperimentReport rep = run_scenario(Scenario::load_text(kTimingScenario), opts);
    CHECK_FALSE(rep.success);
    CHECK(rep.failure.find("total_travel_s") != std::string::npos);
    CHECK(rep.to_json().find("failure") != std::string::npos);
}

TEST_CASE("scenario artifacts land in the output directory") {
    std::string dir = temp_dir("artifacts");
    RunOptions opts;
    opts.out_dir = dir;
    ExperimentReport rep = run_scenario(Scenario::load_text(kTimingScenario), opts);
    CHECK(rep.success);
    CHECK(fs::exists(dir + "/report.json"));
    CHECK(fs::exists(dir + "/gait.csv"));
    CHECK(slurp(dir + "/report.json") == rep.to_json());
    fs::remove_all(dir);
}

TEST_CASE("bundled scenarios load with unique ids") {
    std::vector<Scenario> scenarios = bundled_scenarios();
    CHECK(scenarios.size() >= 12);
    std::set<std::string> ids;
    for (const auto& s : scenarios) {
        CHECK(ids.insert(s.id).second);
        CHECK(!s.kind.empty());
    }
    for (const char* expected :
         {"table1_grab_and_pull", "table1_shuffling", "table1_combined",
          "table1_combined_vibration", "table1_three_legged_race", "attach_sweep",
          "assembly_four_unit", "manipulation_two_ball", "zero_friction_null"})
        CHECK(ids.count(expected) == 1);
}

TEST_CASE("trajectory writer emits the fixed column contract") {
    std::string dir = temp_dir("traj");
    std::string path = dir + "/trajectory.csv";
    auto spec = default_module_spec();
    std::vector<ModuleState> modules{build_module(spec, RigidTransform::identity(), "m0")};
    {
        TrajectoryWriter writer(path);
        writer.sample(0.0, modules);
        writer.sample(0.5, modules);
    }
    std::string text = slurp(path);
    CHECK(text.rfind("t,module_id,node,x,y,z\n", 0) == 0);
    size_t rows = 0;
    for (char c : text)
        if (c == '\n') ++rows;
    CHECK(rows == 1 + 2 * modules[0].node_positions.size());
    CHECK(text.find("0.5,m0,foot_a,") != std::string::npos);

    // Rendering the CSV produces one numbered frame per sampled time.
    int frames = render_trajectory_csv(path, dir);
    CHECK(frames == 2);
    CHECK(fs::exists(dir + "/frame_00000.svg"));
    CHECK(fs::exists(dir + "/frame_00001.svg"));
    std::string svg = slurp(dir + "/frame_00000.svg");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("<circle") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("rendering rejects non-trajectory input") {
    std::string dir = temp_dir("badrender");
    std::string path = dir + "/other.csv";
    {
        std::ofstream out(path);
        out << "a,b,c\n1,2,3\n";
    }
    CHECK_THROWS_AS(render_trajectory_csv(path, dir), Error);
    CHECK_THROWS_AS(render_trajectory_csv(dir + "/missing.csv", dir), Error);
    fs::remove_all(dir);
}

TEST_CASE("svg frames carry both orthographic views") {
    auto spec = default_module_spec();
    std::vector<ModuleState> modules{build_module(spec, RigidTransform::identity(), "m0")};
    std::string svg = render_svg_frame(modules, {Vec3(0, 0, 0.07)});
    CHECK(svg.find("<line") != std::string::npos);    // skeleton edges drawn
    CHECK(svg.find("#f4b400") != std::string::npos);  // ball marker present
    // Every point appears twice: once per view.
    size_t circles = 0;
    for (size_t pos = svg.find("<circle"); pos != std::string::npos;
         pos = svg.find("<circle", pos + 1))
        ++circles;
    CHECK(circles == 2 * (modules[0].node_positions.size() + 1));
}

TEST_CASE("ball trajectory CSV is fixed-format") {
    std::vector<std::vector<BallTrace>> traces(1);
    traces[0].push_back({0.1, Vec3(0.01, 0.02, 0.06), 4});
    std::string csv = ball_trajectory_csv(traces);
    CHECK(csv == "t,ball,x,y,z,node\n0.1,0,0.01,0.02,0.06,4\n");
}

TEST_CASE("summary table lists every report with its status") {
    ExperimentReport ok;
    ok.scenario_id = "good_one";
    ok.kind = "timing";
    ok.success = true;
    ok.notes["simulated"] = "8.3 min";
    ExperimentReport bad;
    bad.scenario_id = "bad_one";
    bad.kind = "assembly";
    bad.success = false;
    bad.failure = "a unit failed to dock";
    std::string table = summary_table({ok, bad});
    CHECK(table.find("good_one") != std::string::npos);
    CHECK(table.find("8.3 min") != std::string::npos);
    CHECK(table.find("bad_one") != std::string::npos);
    CHECK(table.find("FAIL") != std::string::npos);
    CHECK(table.find("a unit failed to dock") != std::string::npos);
}

TEST_CASE("turning scenario validates its sign convention") {
    Scenario s = Scenario::load_text(R"({
      "id": "turn", "kind": "turning", "seed": 1,
      "config": {"cycles": 1, "min_turn_rad": 0.004}
    })");
    ExperimentReport rep = run_scenario(s);
    CHECK(rep.success);
    CHECK(rep.metrics.at("turn_rad") > 0.0);
}
