// Command-line harness: runs scenario files, replicates the bundled
// experiment set, dumps gait activation matrices, and renders trajectory CSVs
// as SVG frames.
#include "softlat/scenario.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

int run_command(const std::string& path, const softlat::RunOptions& opts) {
    softlat::ExperimentReport rep = softlat::run_scenario_file(path, opts);
    std::cout << rep.to_json();
    return rep.success ? 0 : 1;
}

int replicate_command(const softlat::RunOptions& opts) {
    std::vector<softlat::ExperimentReport> reports = softlat::replicate_all(opts);
    std::cout << softlat::summary_table(reports);
    for (const auto& r : reports)
        if (!r.success) return 1;
    return 0;
}

int dump_gait_command(const std::string& name, double dt, const std::string& out_path) {
    softlat::GaitSchedule schedule = softlat::builtin_gait(name);
    std::string csv = softlat::dump_gait_csv(schedule, softlat::ThermalParams{}, dt);
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw softlat::Error("io", "cannot write '" + out_path + "'");
        out << csv;
    }
    return 0;
}

int render_command(const std::string& csv_path, const std::string& out_dir, int stride) {
    int frames = softlat::render_trajectory_csv(csv_path, out_dir.empty() ? "." : out_dir, stride);
    std::cout << "wrote " << frames << " frames\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Soft lattice robot simulator: locomotion, self-assembly, and "
                 "ball manipulation experiments"};
    app.require_subcommand(1);

    softlat::RunOptions opts;
    unsigned seed = 0;
    bool seed_set = false;
    app.add_option_function<unsigned>(
           "--seed", [&](unsigned s) { seed = s; seed_set = true; },
           "Override the scenario seed");
    app.add_option("--out", opts.out_dir, "Artifact output directory");
    app.add_option("--config-override", opts.config_overrides,
                   "key=value applied onto the scenario config (dotted keys nest; repeatable)");
    app.add_flag("--render", opts.render_frames, "Also render SVG frames for trajectories");

    std::string scenario_path;
    CLI::App* run = app.add_subcommand("run", "Run one scenario file");
    run->fallthrough();
    run->add_option("scenario", scenario_path, "Scenario JSON file")->required();

    CLI::App* replicate = app.add_subcommand("replicate-all", "Run every bundled scenario");
    replicate->fallthrough();

    std::string gait_name, gait_out;
    double gait_dt = 0.5;
    CLI::App* dump = app.add_subcommand("dump-gait", "Dump a gait as a channel x time CSV");
    dump->fallthrough();
    dump->add_option("name", gait_name, "Gait name (grab_and_pull, shuffling, combined, "
                                        "three_legged_race)")
        ->required();
    dump->add_option("--dt", gait_dt, "Sample interval in seconds");
    dump->add_option("--csv-out", gait_out, "Write the CSV here instead of stdout");

    std::string render_csv;
    int render_stride = 1;
    CLI::App* render = app.add_subcommand("render", "Render a trajectory CSV as SVG frames");
    render->fallthrough();
    render->add_option("trajectory", render_csv, "trajectory.csv produced by a scenario run")
        ->required();
    render->add_option("--stride", render_stride, "Keep every Nth frame");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    if (seed_set) opts.seed_override = seed;

    try {
        if (run->parsed()) return run_command(scenario_path, opts);
        if (replicate->parsed()) return replicate_command(opts);
        if (dump->parsed()) return dump_gait_command(gait_name, gait_dt, gait_out);
        if (render->parsed()) return render_command(render_csv, opts.out_dir, render_stride);
    } catch (const softlat::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        // Parse/usage faults are the caller's to fix; everything else is a
        // failed scenario.
        bool usage = e.category() == "parse" || e.category() == "io" ||
                     e.category().rfind("unknown-", 0) == 0;
        return usage ? 2 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
