#include "softlat/scenario.hpp"

#include "softlat/contact.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace softlat {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Fixed shortest-faithful formatting so identical runs emit identical bytes.
std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

Vec2 xy(const Vec3& p) { return {p.x(), p.y()}; }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write '" + path + "'");
    out << text;
}

std::string data_dir() {
    if (const char* env = std::getenv("SOFTLAT_DATA_DIR")) return env;
    return "data";
}

std::string config_hash_of(const std::string& config_text, std::uint32_t seed) {
    // FNV-1a over the canonical config text plus the seed bytes.
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](unsigned char byte) {
        h ^= byte;
        h *= 1099511628211ull;
    };
    for (unsigned char c : config_text) mix(c);
    for (int i = 0; i < 4; ++i) mix(static_cast<unsigned char>((seed >> (8 * i)) & 0xff));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json parse_config(const std::string& text) {
    if (text.empty()) return json::object();
    return json::parse(text);
}

void apply_override(json& cfg, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error("parse", "config override must be key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);

    std::vector<std::string> parts;
    std::string part;
    std::istringstream keys(key);
    while (std::getline(keys, part, '.')) {
        if (part.empty()) throw Error("parse", "config override key has an empty segment: '" + key + "'");
        parts.push_back(part);
    }

    json* node = &cfg;
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        json& next = (*node)[parts[i]];
        if (!next.is_object() && !next.is_null())
            throw Error("parse", "config override '" + key + "' descends into a non-object field");
        if (next.is_null()) next = json::object();
        node = &next;
    }
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;  // bare strings need no quoting on the command line
    }
    (*node)[parts.back()] = parsed;
}

ModuleSpecPtr spec_from(const json& cfg) {
    return make_module_spec(cfg.value("skeleton_stiffness", 150.0),
                            cfg.value("sma_stiffness", 60.0), cfg.value("node_mass", 0.004));
}

ThermalParams thermal_from(const json& cfg) {
    ThermalParams tp;
    tp.tau_heat = cfg.value("tau_heat", tp.tau_heat);
    tp.tau_cool = cfg.value("tau_cool", tp.tau_cool);
    tp.fan_factor = cfg.value("fan_factor", tp.fan_factor);
    tp.thin_sma_factor = cfg.value("thin_sma_factor", tp.thin_sma_factor);
    return tp;
}

Vec3 system_com(const std::vector<ModuleState>& states) {
    Vec3 c = Vec3::Zero();
    for (const auto& s : states) c += s.center_of_mass();
    return c / static_cast<double>(states.size());
}

// ---------------------------------------------------------------------------
// Pipelines. Each fills metrics/notes and sets rep.success; artifacts land in
// out_dir when non-empty.

void run_locomotion(const json& cfg, const RunOptions& opts, ExperimentReport& rep) {
    std::string gait_name = cfg.value("gait", "combined");
    std::string subject = cfg.value("subject", "module");
    double mu = cfg.value("mu", 0.3);
    int warmup = cfg.value("warmup_cycles", 1);
    int cycles = cfg.value("cycles", 1);
    if (cycles < 1) throw Error("parse", "locomotion field 'cycles' must be >= 1");

    GaitSchedule schedule = builtin_gait(gait_name);
    if (cfg.value("vibration", false))
        schedule = apply_vibration_overlay(
            schedule, cfg.value("vibration_on_ms", 50.0), cfg.value("vibration_off_ms", 1000.0),
            {{"", "VA"}}, cfg.value("vibration_friction_factor", 0.8));

    auto spec = spec_from(cfg);
    GaitRunOptions run_opts;
    run_opts.mu = mu;
    run_opts.cycles = 1;

    std::vector<ModuleState> states;
    if (subject == "unit") {
        LatticeState lattice = build_unit(spec, RigidTransform::identity(), "");
        for (const auto& b : lattice.bonds) run_opts.extra_constraints.bonds.push_back({b.a, b.b});
        states = lattice.modules;
    } else if (subject == "module") {
        states.push_back(build_module(spec, RigidTransform::identity()));
        ConstraintSet cs;
        for (int n = 0; n < static_cast<int>(spec->node_templates.size()); ++n)
            cs.ground.push_back({{0, n}});
        ActuationState none;
        solve_equilibrium_inplace(states, none, cs);
    } else {
        throw Error("parse", "locomotion field 'subject' must be 'module' or 'unit', got '" +
                                 subject + "'");
    }

    for (int c = 0; c < warmup; ++c) run_gait(states, schedule, ThermalParams{}, run_opts);

    std::unique_ptr<TrajectoryWriter> writer;
    if (!opts.out_dir.empty())
        writer = std::make_unique<TrajectoryWriter>(opts.out_dir + "/trajectory.csv");
    if (writer) writer->sample(0.0, states);

    Vec3 com_before = system_com(states);
    double cycle_s = schedule.cycle_duration();
    double net_forward = 0, net_lateral = 0;
    for (int c = 0; c < cycles; ++c) {
        double t0 = c * cycle_s;
        if (writer)
            run_opts.on_substep = [&](double t, const std::vector<ModuleState>& ss) {
                writer->sample(t0 + t, ss);
            };
        GaitRunResult r = run_gait(states, schedule, ThermalParams{}, run_opts);
        net_forward += r.net_forward;
        net_lateral += r.net_lateral;
    }
    Vec2 net_xy = xy(system_com(states)) - xy(com_before);

    double per_cycle = net_forward / cycles;
    rep.metrics["per_cycle_m"] = per_cycle;
    rep.metrics["cycle_duration_s"] = cycle_s;
    rep.metrics["net_forward_m"] = net_forward;
    rep.metrics["net_lateral_m"] = net_lateral;
    rep.metrics["net_xy_m"] = net_xy.norm();

    std::string expect = cfg.value("expect", "forward");
    if (expect == "forward") {
        rep.success = per_cycle > 0;
        if (!rep.success) rep.failure = "expected strictly positive per-cycle displacement";
        double travel_s = 0.02 / per_cycle * cycle_s;
        rep.metrics["travel_time_2cm_s"] = travel_s;
        rep.metrics["travel_time_2cm_min"] = travel_s / 60.0;
        rep.notes["simulated"] = fmt(travel_s / 60.0) + " min";
    } else if (expect == "null") {
        double tol = cfg.value("null_tolerance_m", 1e-4);
        rep.success = net_xy.norm() < tol;
        if (!rep.success)
            rep.failure = "closed cycle moved " + fmt(net_xy.norm()) + " m (tolerance " +
                          fmt(tol) + ")";
        rep.notes["simulated"] = fmt(net_xy.norm()) + " m net";
    } else {
        throw Error("parse", "locomotion field 'expect' must be 'forward' or 'null'");
    }
    if (cfg.contains("paper_minutes")) {
        double paper = cfg.at("paper_minutes").get<double>();
        rep.metrics["paper_minutes"] = paper;
        rep.notes["paper"] = fmt(paper) + " min";
    }
}

void run_timing(const json& cfg, const RunOptions& opts, ExperimentReport& rep) {
    std::string gait_name = cfg.value("gait", "grab_and_pull");
    double distance = cfg.value("target_distance_m", 0.02);

    GaitSchedule schedule = builtin_gait(gait_name);
    ThermalParams tp = thermal_from(cfg);
    double per_cycle = cfg.contains("per_cycle_m") ? cfg.at("per_cycle_m").get<double>()
                                                   : calibrated_cycle_displacement(gait_name);

    double cycle_s = schedule.cycle_duration();
    double actuation_s = schedule.actuation_time();
    double cooling_s = 0;
    for (const auto& p : schedule.phases)
        if (p.on_channels.empty()) cooling_s += p.duration;
    double cycles_needed = distance / per_cycle;
    double total_s = predict_travel_time(schedule, tp, per_cycle, distance);

    rep.metrics["cycle_duration_s"] = cycle_s;
    rep.metrics["actuation_per_cycle_s"] = actuation_s;
    rep.metrics["cooling_per_cycle_s"] = cooling_s;
    rep.metrics["cycles_needed"] = cycles_needed;
    rep.metrics["total_travel_s"] = total_s;
    rep.metrics["total_travel_min"] = total_s / 60.0;
    rep.metrics["total_actuation_s"] = actuation_s * cycles_needed;
    rep.metrics["total_actuation_min"] = actuation_s * cycles_needed / 60.0;
    rep.notes["simulated"] = fmt(total_s / 60.0) + " min";

    rep.success = true;
    auto check = [&](const char* cfg_key, const char* metric, double tol) {
        if (!cfg.contains(cfg_key)) return;
        double expected = cfg.at(cfg_key).get<double>();
        rep.metrics[std::string("expected_") + metric] = expected;
        if (std::abs(rep.metrics.at(metric) - expected) > tol) {
            rep.success = false;
            rep.failure += std::string(metric) + " = " + fmt(rep.metrics.at(metric)) +
                           " vs expected " + fmt(expected) + "; ";
        }
    };
    double tol = cfg.value("tolerance_s", 1.0);
    check("expected_total_travel_s", "total_travel_s", tol);
    check("expected_total_actuation_s", "total_actuation_s", tol);
    check("expected_cycle_duration_s", "cycle_duration_s", tol);
    check("expected_cooling_per_cycle_s", "cooling_per_cycle_s", tol);
    if (cfg.contains("paper_minutes")) {
        double paper = cfg.at("paper_minutes").get<double>();
        rep.metrics["paper_minutes"] = paper;
        rep.notes["paper"] = fmt(paper) + " min";
    }

    if (!opts.out_dir.empty())
        write_file(opts.out_dir + "/gait.csv",
                   dump_gait_csv(schedule, tp, cfg.value("sample_dt_s", 0.5)));
}

void run_turning(const json& cfg, const RunOptions& opts, ExperimentReport& rep) {
    double left_s = cfg.value("left_contract_s", 5.2);
    double right_s = cfg.value("right_contract_s", 2.6);
    double mu = cfg.value("mu", 0.6);
    int cycles = cfg.value("cycles", 5);
    double min_turn = cfg.value("min_turn_rad", 0.01);

    auto spec = spec_from(cfg);
    std::vector<ModuleState> states{build_module(spec, RigidTransform::identity())};
    ConstraintSet cs;
    for (int n = 0; n < static_cast<int>(spec->node_templates.size()); ++n)
        cs.ground.push_back({{0, n}});
    ActuationState none;
    solve_equilibrium_inplace(states, none, cs);

    std::unique_ptr<TrajectoryWriter> writer;
    if (!opts.out_dir.empty())
        writer = std::make_unique<TrajectoryWriter>(opts.out_dir + "/trajectory.csv");
    if (writer) writer->sample(0.0, states);
    double turn = asymmetric_turn(states, left_s, right_s, mu, cycles);
    if (writer) writer->sample(1.0, states);

    rep.metrics["turn_rad"] = turn;
    rep.metrics["turn_rad_per_cycle"] = turn / cycles;
    // Positive turn = toward the right, the less-contracted side when the left
    // contraction is longer.
    double toward_shorter = left_s >= right_s ? turn : -turn;
    rep.metrics["turn_toward_less_contracted_rad"] = toward_shorter;
    rep.success = toward_shorter > min_turn;
    if (!rep.success)
        rep.failure = "turn toward the less-contracted side was " + fmt(toward_shorter) +
                      " rad (needs > " + fmt(min_turn) + ")";
    rep.notes["simulated"] = fmt(turn) + " rad / " + fmt(static_cast<double>(cycles)) + " cycles";
}

void run_attachment_sweep(const json& cfg, std::uint32_t seed, const RunOptions& opts,
                          ExperimentReport& rep) {
    std::vector<double> angles = cfg.value("angles_deg", std::vector<double>{0, 30, 60, 90, 120});
    std::vector<std::uint32_t> seeds =
        cfg.value("seeds", std::vector<std::uint32_t>{1, 2, 3, 4, 5});
    (void)seed;  // the per-run seeds come from the sweep list

    AttachmentParams params;
    params.mu = cfg.value("mu", params.mu);
    params.noise_position = cfg.value("noise_position_m", params.noise_position);
    params.noise_heading_deg = cfg.value("noise_heading_deg", params.noise_heading_deg);
    params.spec = spec_from(cfg);

    std::ostringstream sweep_csv;
    sweep_csv << "angle_deg,seed,success,approaches,cycles\n";

    rep.success = true;
    for (double angle : angles) {
        int ok = 0;
        for (std::uint32_t s : seeds) {
            bool success = false;
            int approaches = 0, run_cycles = 0;
            try {
                AttachmentReport r = run_attachment_protocol(angle, s, params);
                success = r.success;
                approaches = r.approaches;
                run_cycles = r.cycles;
            } catch (const Error&) {
                // an unconverged scene counts as a failed attempt
            }
            ok += success ? 1 : 0;
            sweep_csv << fmt(angle) << ',' << s << ',' << (success ? 1 : 0) << ',' << approaches
                      << ',' << run_cycles << '\n';
        }
        int required = angle < 120.0 ? static_cast<int>(seeds.size())
                                     : cfg.value("min_successes_at_120", 3);
        rep.metrics["successes_at_" + fmt(angle)] = ok;
        rep.metrics["required_at_" + fmt(angle)] = required;
        if (ok < required) {
            rep.success = false;
            rep.failure += fmt(angle) + " deg: " + std::to_string(ok) + "/" +
                           std::to_string(seeds.size()) + " (needs " + std::to_string(required) +
                           "); ";
        }
        rep.notes["simulated"] += fmt(angle) + ":" + std::to_string(ok) + "/" +
                                  std::to_string(seeds.size()) + " ";
    }
    if (!opts.out_dir.empty()) write_file(opts.out_dir + "/sweep.csv", sweep_csv.str());
}

void run_assembly(const json& cfg, std::uint32_t seed, const RunOptions& opts,
                  ExperimentReport& rep) {
    auto spec = spec_from(cfg);
    LatticeState lattice = build_unit(spec, RigidTransform::identity(), "a");

    // Rim vertices of the seed unit (half-hexagon fan, side length 0.044 m).
    const double side = 0.044;
    auto rim = [&](int k) {
        double ang = (-90.0 + 60.0 * k) * M_PI / 180.0;
        return Vec3(side * std::cos(ang), side * std::sin(ang), 0);
    };

    json docks = cfg.value("docks", json::array({
                                        json{{"edge", 1}, {"offset_deg", 0.0}, {"prefix", "b"}},
                                        json{{"edge", 0}, {"offset_deg", 0.0}, {"prefix", "c"}},
                                        json{{"edge", 2}, {"offset_deg", 15.0}, {"prefix", "d"}},
                                    }));
    double gap = cfg.value("approach_gap_m", 0.012);

    std::unique_ptr<TrajectoryWriter> writer;
    if (!opts.out_dir.empty())
        writer = std::make_unique<TrajectoryWriter>(opts.out_dir + "/trajectory.csv");
    if (writer) writer->sample(0.0, lattice);

    bool all = true;
    int dock_index = 0;
    for (const auto& dock : docks) {
        int edge = dock.at("edge").get<int>();
        double offset = dock.value("offset_deg", 0.0);
        std::string prefix = dock.at("prefix").get<std::string>();
        if (edge < 0 || edge > 2) throw Error("parse", "assembly dock 'edge' must be 0..2");

        Vec3 a = rim(edge), b = rim(edge + 1);
        Vec3 outward = ((a + b) / 2).normalized();
        UnitAttachmentParams up;
        up.spec = spec;
        up.mu = cfg.value("mu", up.mu);
        up.approach_offset_deg = offset;
        std::vector<int> idx = place_unit_for_docking(lattice, spec, a, b, outward, gap, offset,
                                                      prefix);
        AttachmentReport r = run_unit_attachment(lattice, idx, seed, up);
        all = all && r.success;
        rep.metrics["dock_" + prefix + "_success"] = r.success ? 1 : 0;
        rep.metrics["dock_" + prefix + "_cycles"] = r.cycles;
        rep.notes["dock_" + prefix] = r.detail;
        ++dock_index;
        if (writer) writer->sample(static_cast<double>(dock_index), lattice);
    }

    TopNodeGraph graph = top_node_graph(lattice);
    rep.metrics["modules"] = static_cast<double>(lattice.modules.size());
    rep.metrics["bonds"] = static_cast<double>(lattice.bonds.size());
    rep.metrics["top_nodes"] = static_cast<double>(graph.nodes.size());
    rep.metrics["top_edges"] = static_cast<double>(graph.edges.size());
    rep.metrics["connected"] = graph.connected() ? 1 : 0;
    rep.success = all && graph.connected();
    if (!rep.success)
        rep.failure = all ? "top-node graph is disconnected" : "a unit failed to dock";
    rep.notes["simulated"] = fmt(rep.metrics["top_nodes"]) + " top nodes, " +
                             (graph.connected() ? "connected" : "disconnected");
}

void record_ball_metrics(const ManipulationReport& r, const std::string& prefix,
                         ExperimentReport& rep) {
    rep.metrics[prefix + "duration_s"] = r.duration;
    rep.metrics[prefix + "escapes"] = r.escapes;
    rep.metrics[prefix + "delivered"] =
        static_cast<double>(std::count(r.delivered.begin(), r.delivered.end(), true));
    if (r.final_balls.size() > 1) rep.metrics[prefix + "min_separation_m"] = r.min_separation;
    rep.notes[prefix + "detail"] = r.detail;
}

void run_manipulation(const json& cfg, const RunOptions& opts, ExperimentReport& rep) {
    std::string demo = cfg.value("demo", "single_hop");
    auto spec = spec_from(cfg);
    std::string surface = cfg.value("surface", "grid");
    LatticeState lattice =
        surface == "row" ? build_row_lattice(spec) : build_grid_lattice(spec);
    SurfaceMesh mesh = surface_from_lattice(lattice);

    ManipulationParams params;
    params.capture_distance = cfg.value("capture_distance_m", params.capture_distance);
    params.capture_speed = cfg.value("capture_speed_m_s", params.capture_speed);
    params.thermal = thermal_from(cfg);

    std::unique_ptr<TrajectoryWriter> writer;
    int stride = cfg.value("trajectory_stride", 10);
    int step_count = 0;
    double time_base = 0;
    if (!opts.out_dir.empty()) {
        writer = std::make_unique<TrajectoryWriter>(opts.out_dir + "/trajectory.csv");
        params.on_control_step = [&](double t, const LatticeState& l) {
            if (step_count++ % stride == 0) writer->sample(time_base + t, l);
        };
    }

    auto ball_at = [&](int vertex) {
        BallState b;
        b.radius = cfg.value("ball_radius_m", b.radius);
        b.position = mesh.vertices[static_cast<size_t>(vertex)] + Vec3(0, 0, b.radius);
        return b;
    };

    std::vector<std::vector<BallTrace>> traces;
    auto append_traces = [&](const ManipulationReport& r, double offset) {
        for (size_t i = 0; i < r.traces.size(); ++i) {
            if (traces.size() <= i) traces.emplace_back();
            for (BallTrace s : r.traces[i]) {
                s.t += offset;
                traces[i].push_back(s);
            }
        }
    };

    if (demo == "single_hop" || demo == "circuit") {
        ManipulationPlan plan;
        if (demo == "single_hop") {
            plan = plan_path(mesh, cfg.value("from", 0), cfg.value("to", 1));
        } else {
            std::vector<int> waypoints = cfg.value("waypoints", std::vector<int>{0, 6, 8, 4, 0});
            plan = plan_waypoints(mesh, waypoints);
        }
        ManipulationReport r = execute_plan(lattice, plan, ball_at(plan.path.front()), params);
        append_traces(r, 0.0);
        record_ball_metrics(r, "", rep);
        rep.metrics["hops"] = static_cast<double>(plan.hops.size());
        rep.success = r.success;
        if (!rep.success) rep.failure = r.detail;
    } else if (demo == "bidirectional") {
        int a = cfg.value("from", 2), b = cfg.value("to", 3);
        ManipulationReport leg1 = execute_plan(lattice, plan_path(mesh, a, b), ball_at(a), params);
        append_traces(leg1, 0.0);
        record_ball_metrics(leg1, "leg1_", rep);
        time_base = leg1.duration;
        mesh.refresh(lattice);
        ManipulationReport leg2 =
            execute_plan(lattice, plan_path(mesh, b, a), leg1.final_balls[0], params);
        append_traces(leg2, leg1.duration);
        record_ball_metrics(leg2, "leg2_", rep);
        rep.success = leg1.success && leg2.success;
        if (!rep.success) rep.failure = leg1.detail + leg2.detail;
    } else if (demo == "two_ball") {
        std::vector<std::vector<int>> raw =
            cfg.value("requests", std::vector<std::vector<int>>{{0, 6}, {8, 4}});
        std::vector<std::pair<int, int>> requests;
        for (const auto& r : raw) {
            if (r.size() != 2) throw Error("parse", "manipulation 'requests' entries need [from, to]");
            requests.emplace_back(r[0], r[1]);
        }
        std::vector<ManipulationPlan> plans = schedule_multi_ball(mesh, requests, params);
        std::vector<BallState> balls;
        for (const auto& [from, to] : requests) balls.push_back(ball_at(from));
        ManipulationReport r = execute_plans(lattice, plans, balls, params);
        append_traces(r, 0.0);
        record_ball_metrics(r, "", rep);
        for (size_t i = 0; i < plans.size(); ++i)
            rep.metrics["offset_" + std::to_string(i) + "_s"] = plans[i].start_offset;
        double min_sep = cfg.value("min_separation_m", 2 * balls[0].radius);
        rep.success = r.success && r.min_separation > min_sep;
        if (!rep.success)
            rep.failure = r.detail + " min separation " + fmt(r.min_separation) + " m";
    } else {
        throw Error("parse", "manipulation field 'demo' must be one of single_hop, bidirectional, "
                             "circuit, two_ball");
    }

    rep.notes["simulated"] = rep.success ? "delivered" : "not delivered";
    if (!opts.out_dir.empty())
        write_file(opts.out_dir + "/balls.csv", ball_trajectory_csv(traces));
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenario loading

Scenario Scenario::load_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error("parse", std::string("scenario is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error("parse", "scenario root must be a JSON object");

    Scenario s;
    if (!j.contains("id") || !j.at("id").is_string() || j.at("id").get<std::string>().empty())
        throw Error("parse", "scenario field 'id' must be a non-empty string");
    s.id = j.at("id").get<std::string>();

    static const std::set<std::string> kinds = {"locomotion", "timing",   "turning",
                                                "attachment_sweep", "assembly", "manipulation"};
    if (!j.contains("kind") || !j.at("kind").is_string() ||
        !kinds.count(j.at("kind").get<std::string>()))
        throw Error("parse",
                    "scenario field 'kind' must be one of locomotion, timing, turning, "
                    "attachment_sweep, assembly, manipulation");
    s.kind = j.at("kind").get<std::string>();

    if (!j.contains("seed") || !j.at("seed").is_number_unsigned())
        throw Error("parse", "scenario field 'seed' must be an unsigned integer (determinism)");
    s.seed = j.at("seed").get<std::uint32_t>();

    json config = j.value("config", json::object());
    if (!config.is_object()) throw Error("parse", "scenario field 'config' must be an object");
    s.config_text = config.dump();
    return s;
}

Scenario Scenario::load_file(const std::string& path) {
    return load_text(read_file(path));
}

// ---------------------------------------------------------------------------
// Reports

std::string ExperimentReport::to_json() const {
    json j;
    j["scenario_id"] = scenario_id;
    j["kind"] = kind;
    j["success"] = success;
    if (!failure.empty()) j["failure"] = failure;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    json m = json::object();
    for (const auto& [key, value] : metrics) m[key] = value;
    j["metrics"] = m;
    json n = json::object();
    for (const auto& [key, value] : notes) n[key] = value;
    j["notes"] = n;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Execution

ExperimentReport run_scenario(const Scenario& scenario, const RunOptions& opts) {
    ExperimentReport rep;
    rep.scenario_id = scenario.id;
    rep.kind = scenario.kind;
    rep.seed = opts.seed_override.value_or(scenario.seed);

    try {
        json cfg = parse_config(scenario.config_text);
        for (const auto& kv : opts.config_overrides) apply_override(cfg, kv);
        rep.config_hash = config_hash_of(cfg.dump(), rep.seed);
        if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);

        if (scenario.kind == "locomotion") run_locomotion(cfg, opts, rep);
        else if (scenario.kind == "timing") run_timing(cfg, opts, rep);
        else if (scenario.kind == "turning") run_turning(cfg, opts, rep);
        else if (scenario.kind == "attachment_sweep") run_attachment_sweep(cfg, rep.seed, opts, rep);
        else if (scenario.kind == "assembly") run_assembly(cfg, rep.seed, opts, rep);
        else if (scenario.kind == "manipulation") run_manipulation(cfg, opts, rep);
        else throw Error("parse", "unknown scenario kind '" + scenario.kind + "'");
    } catch (const std::exception& e) {
        rep.success = false;
        rep.failure = e.what();
    }

    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir);
        write_file(opts.out_dir + "/report.json", rep.to_json());
        if (opts.render_frames) {
            std::string csv = opts.out_dir + "/trajectory.csv";
            if (fs::exists(csv)) render_trajectory_csv(csv, opts.out_dir);
        }
    }
    return rep;
}

ExperimentReport run_scenario_file(const std::string& path, const RunOptions& opts) {
    return run_scenario(Scenario::load_file(path), opts);
}

std::vector<Scenario> bundled_scenarios() {
    std::string dir = data_dir() + "/scenarios";
    if (!fs::is_directory(dir))
        throw Error("io", "bundled scenario directory '" + dir +
                              "' not found (set SOFTLAT_DATA_DIR)");
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".json") paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw Error("io", "no scenario files under '" + dir + "'");

    std::vector<Scenario> scenarios;
    for (const auto& path : paths) scenarios.push_back(Scenario::load_file(path));
    return scenarios;
}

std::vector<ExperimentReport> replicate_all(const RunOptions& opts) {
    std::vector<ExperimentReport> reports;
    for (const Scenario& s : bundled_scenarios()) {
        RunOptions child = opts;
        if (!opts.out_dir.empty()) child.out_dir = opts.out_dir + "/" + s.id;
        reports.push_back(run_scenario(s, child));
    }
    if (!opts.out_dir.empty()) write_file(opts.out_dir + "/summary.txt", summary_table(reports));
    return reports;
}

std::string summary_table(const std::vector<ExperimentReport>& reports) {
    std::ostringstream out;
    auto cell = [&](const std::string& text, size_t width) {
        out << text;
        for (size_t i = text.size(); i < width; ++i) out << ' ';
        out << "  ";
    };
    cell("scenario", 32);
    cell("kind", 16);
    cell("status", 6);
    cell("simulated", 24);
    cell("paper", 12);
    out << '\n';
    for (const auto& r : reports) {
        cell(r.scenario_id, 32);
        cell(r.kind, 16);
        cell(r.success ? "ok" : "FAIL", 6);
        auto note = [&](const char* key) {
            auto it = r.notes.find(key);
            return it == r.notes.end() ? std::string("-") : it->second;
        };
        cell(note("simulated"), 24);
        cell(note("paper"), 12);
        out << '\n';
        if (!r.success) out << "    failure: " << r.failure << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Trajectory CSV

struct TrajectoryWriter::Impl {
    std::ofstream out;
};

TrajectoryWriter::TrajectoryWriter(const std::string& path) : impl_(new Impl) {
    impl_->out.open(path, std::ios::binary | std::ios::trunc);
    if (!impl_->out) {
        delete impl_;
        throw Error("io", "cannot open trajectory file '" + path + "'");
    }
    impl_->out << "t,module_id,node,x,y,z\n";
}

TrajectoryWriter::~TrajectoryWriter() { delete impl_; }

void TrajectoryWriter::sample(double t, const std::vector<ModuleState>& modules) {
    for (const auto& m : modules)
        for (size_t n = 0; n < m.node_positions.size(); ++n) {
            const Vec3& p = m.node_positions[n];
            impl_->out << fmt(t) << ',' << m.module_id << ','
                       << m.spec->node_templates[n].label << ',' << fmt(p.x()) << ','
                       << fmt(p.y()) << ',' << fmt(p.z()) << '\n';
        }
}

void TrajectoryWriter::sample(double t, const LatticeState& lattice) {
    sample(t, lattice.modules);
}

std::string ball_trajectory_csv(const std::vector<std::vector<BallTrace>>& traces) {
    std::ostringstream out;
    out << "t,ball,x,y,z,node\n";
    for (size_t i = 0; i < traces.size(); ++i)
        for (const auto& s : traces[i])
            out << fmt(s.t) << ',' << i << ',' << fmt(s.position.x()) << ','
                << fmt(s.position.y()) << ',' << fmt(s.position.z()) << ',' << s.nearest_node
                << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// SVG rendering

namespace {

struct RenderGroup {
    std::string label;
    std::vector<Vec3> points;
    std::vector<std::pair<int, int>> edges;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string render_groups(const std::vector<RenderGroup>& groups, const std::vector<Vec3>& balls) {
    double lo_x = 1e30, hi_x = -1e30, lo_y = 1e30, hi_y = -1e30, lo_z = 1e30, hi_z = -1e30;
    auto grow = [&](const Vec3& p) {
        lo_x = std::min(lo_x, p.x()); hi_x = std::max(hi_x, p.x());
        lo_y = std::min(lo_y, p.y()); hi_y = std::max(hi_y, p.y());
        lo_z = std::min(lo_z, p.z()); hi_z = std::max(hi_z, p.z());
    };
    for (const auto& g : groups)
        for (const auto& p : g.points) grow(p);
    for (const auto& b : balls) grow(b);
    if (lo_x > hi_x) { lo_x = lo_y = lo_z = 0; hi_x = hi_y = hi_z = 1; }

    const double pad = 0.02, scale = 2000.0;
    lo_x -= pad; hi_x += pad; lo_y -= pad; hi_y += pad; lo_z -= pad; hi_z += pad;
    double w = (hi_x - lo_x) * scale;
    double h_top = (hi_y - lo_y) * scale, h_front = (hi_z - lo_z) * scale;
    double h = std::max(h_top, h_front);
    double gap_px = 40;

    // Two orthographic panels: top view (x right, y up) and front view (x right, z up).
    auto top = [&](const Vec3& p) {
        return std::pair<double, double>((p.x() - lo_x) * scale, h - (p.y() - lo_y) * scale);
    };
    auto front = [&](const Vec3& p) {
        return std::pair<double, double>(w + gap_px + (p.x() - lo_x) * scale,
                                         h - (p.z() - lo_z) * scale);
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(2 * w + gap_px)
        << "\" height=\"" << fmt(h) << "\" viewBox=\"0 0 " << fmt(2 * w + gap_px) << ' '
        << fmt(h) << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // Ground line in the front view.
    auto g0 = front(Vec3(lo_x, 0, 0)), g1 = front(Vec3(hi_x, 0, 0));
    svg << "<line x1=\"" << fmt(g0.first) << "\" y1=\"" << fmt(g0.second) << "\" x2=\""
        << fmt(g1.first) << "\" y2=\"" << fmt(g1.second)
        << "\" stroke=\"#cccccc\" stroke-width=\"1\"/>\n";

    int color_index = 0;
    for (const auto& g : groups) {
        const char* color = kPalette[color_index++ % (sizeof(kPalette) / sizeof(*kPalette))];
        for (auto project : {+0, +1}) {
            auto view = [&](const Vec3& p) { return project == 0 ? top(p) : front(p); };
            for (const auto& [a, b] : g.edges) {
                auto pa = view(g.points[static_cast<size_t>(a)]);
                auto pb = view(g.points[static_cast<size_t>(b)]);
                svg << "<line x1=\"" << fmt(pa.first) << "\" y1=\"" << fmt(pa.second)
                    << "\" x2=\"" << fmt(pb.first) << "\" y2=\"" << fmt(pb.second)
                    << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
            }
            for (const auto& p : g.points) {
                auto pp = view(p);
                svg << "<circle cx=\"" << fmt(pp.first) << "\" cy=\"" << fmt(pp.second)
                    << "\" r=\"3\" fill=\"" << color << "\"/>\n";
            }
        }
    }
    for (const auto& b : balls) {
        for (auto project : {+0, +1}) {
            auto pp = project == 0 ? top(b) : front(b);
            svg << "<circle cx=\"" << fmt(pp.first) << "\" cy=\"" << fmt(pp.second)
                << "\" r=\"" << fmt(0.01 * scale) << "\" fill=\"#f4b400\" stroke=\"#333333\"/>\n";
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace

std::string render_svg_frame(
    const std::vector<std::pair<std::string, std::vector<Vec3>>>& point_groups,
    const std::vector<Vec3>& balls) {
    std::vector<RenderGroup> groups;
    for (const auto& [label, points] : point_groups) {
        RenderGroup g{label, points, {}};
        for (int i = 0; i + 1 < static_cast<int>(points.size()); ++i) g.edges.push_back({i, i + 1});
        groups.push_back(std::move(g));
    }
    return render_groups(groups, balls);
}

std::string render_svg_frame(const std::vector<ModuleState>& modules,
                             const std::vector<Vec3>& balls) {
    std::vector<RenderGroup> groups;
    for (const auto& m : modules) {
        RenderGroup g{m.module_id, m.node_positions, {}};
        for (const auto& e : m.spec->skeleton_edges)
            g.edges.push_back({m.spec->node_index(e.node_a), m.spec->node_index(e.node_b)});
        groups.push_back(std::move(g));
    }
    return render_groups(groups, balls);
}

int render_trajectory_csv(const std::string& csv_path, const std::string& out_dir, int stride) {
    if (stride < 1) throw Error("parse", "render stride must be >= 1");
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw Error("io", "cannot open trajectory file '" + csv_path + "'");
    fs::create_directories(out_dir);

    std::string line;
    if (!std::getline(in, line) || line.rfind("t,module_id,node", 0) != 0)
        throw Error("parse", "'" + csv_path + "' is not a trajectory CSV");

    std::string frame_time;
    // Group id -> points, in first-appearance order within the frame.
    std::vector<std::pair<std::string, std::vector<Vec3>>> groups;
    int frame_index = 0, written = 0;

    auto flush = [&]() {
        if (groups.empty()) return;
        if (frame_index % stride == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%05d.svg", written);
            write_file(out_dir + "/" + std::string(name), render_svg_frame(groups));
            ++written;
        }
        ++frame_index;
        groups.clear();
    };

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string t, module_id, node, xs, ys, zs;
        if (!std::getline(row, t, ',') || !std::getline(row, module_id, ',') ||
            !std::getline(row, node, ',') || !std::getline(row, xs, ',') ||
            !std::getline(row, ys, ',') || !std::getline(row, zs))
            throw Error("parse", "malformed trajectory row: '" + line + "'");
        if (t != frame_time) {
            flush();
            frame_time = t;
        }
        Vec3 p(std::stod(xs), std::stod(ys), std::stod(zs));
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const auto& g) { return g.first == module_id; });
        if (it == groups.end()) {
            groups.push_back({module_id, {p}});
        } else {
            it->second.push_back(p);
        }
    }
    flush();
    return written;
}

}  // namespace softlat
