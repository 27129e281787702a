#include <doctest.h>

#include "softlat/energy.hpp"

#include <random>

using namespace softlat;

namespace {

std::vector<ModuleState> random_pose(std::mt19937& rng, ModuleSpecPtr spec) {
    std::uniform_real_distribution<double> jitter(-0.005, 0.005);
    ModuleState m = build_module(spec, RigidTransform::translate(Vec3(0, 0, 0.01)));
    for (auto& p : m.node_positions) p += Vec3(jitter(rng), jitter(rng), jitter(rng));
    return {m};
}

ActuationState random_actuation(std::mt19937& rng, const ModuleSpec& spec) {
    std::uniform_real_distribution<double> level(0.0, 1.0);
    ActuationState act;
    for (const auto& c : spec.sma_channels) act.set("", c.label, level(rng));
    return act;
}

// Central finite differences of the potential, independent of the analytic path.
std::vector<Vec3> fd_gradient(std::vector<ModuleState> states, const ActuationState& act,
                              double h) {
    std::vector<Vec3> grad;
    for (auto& m : states)
        for (auto& p : m.node_positions) {
            Vec3 g;
            for (int axis = 0; axis < 3; ++axis) {
                double saved = p[axis];
                p[axis] = saved + h;
                double up = potential_energy(states, act);
                p[axis] = saved - h;
                double down = potential_energy(states, act);
                p[axis] = saved;
                g[axis] = (up - down) / (2 * h);
            }
            grad.push_back(g);
        }
    return grad;
}

double grad_rel_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    double diff = 0, norm = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]).squaredNorm();
        norm += b[i].squaredNorm();
    }
    return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
}

}  // namespace

TEST_CASE("analytic gradient matches central finite differences") {
    ModuleSpecPtr spec = default_module_spec();
    std::mt19937 rng(12345);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<ModuleState> states = random_pose(rng, spec);
        ActuationState act = random_actuation(rng, *spec);
        std::vector<Vec3> analytic = energy_gradient(states, act);
        std::vector<Vec3> numeric = fd_gradient(states, act, 1e-6);
        REQUIRE(analytic.size() == numeric.size());
        CHECK(grad_rel_error(analytic, numeric) < 1e-5);
    }
}

TEST_CASE("SMA channels are one-way: slack below rest length stores no energy") {
    // Two-node toy spec: one SMA between nodes at controllable distance.
    ModuleSpec spec;
    spec.name = "toy";
    spec.node_mass = 0.0;  // isolate the spring term
    spec.node_templates.push_back({"a", Vec3(0, 0, 0), NodeRole::foot});
    spec.node_templates.push_back({"b", Vec3(0.1, 0, 0), NodeRole::foot});
    spec.sma_channels.push_back({"VA", "a", "b", 100.0, 0.1, 0.05});
    auto ptr = std::make_shared<const ModuleSpec>(spec);

    ActuationState off;  // rest length 0.1
    ModuleState slack = build_module(ptr, RigidTransform::identity());
    slack.node_positions[1] = Vec3(0.05, 0, 0);  // shorter than rest: slack
    CHECK(potential_energy({slack}, off) == doctest::Approx(0.0));

    ModuleState taut = build_module(ptr, RigidTransform::identity());
    taut.node_positions[1] = Vec3(0.12, 0, 0);  // stretched 0.02 beyond rest
    CHECK(potential_energy({taut}, off) == doctest::Approx(0.5 * 100.0 * 0.02 * 0.02));
}

TEST_CASE("solver matches a coordinate-descent oracle on the actuated module") {
    ModuleSpecPtr spec = default_module_spec();
    ActuationState act;
    act.set("", "HAB", 1.0);
    act.set("", "HAC", 1.0);

    // Shared setup: feet anchored in-plane, everything rests on the ground.
    std::vector<ModuleState> start{build_module(spec, RigidTransform::identity())};
    ConstraintSet cs;
    for (int n = 0; n < 7; ++n) cs.ground.push_back({{0, n}});
    for (int n = 0; n < 7; ++n)
        if (spec->node_templates[static_cast<size_t>(n)].role == NodeRole::foot)
            cs.anchors.push_back(
                {{0, n},
                 Vec2(spec->node_templates[static_cast<size_t>(n)].position.x(),
                      spec->node_templates[static_cast<size_t>(n)].position.y())});

    auto [solved, report] = solve_equilibrium(start, act, cs);
    REQUIRE(report.converged);
    CHECK(report.max_violation <= 1e-6);

    // Oracle: cyclic coordinate descent with a quadratic-fit line search,
    // anchored feet held and z clamped at the ground. Slow but solver-free.
    std::vector<ModuleState> oracle = start;
    auto energy = [&]() { return potential_energy(oracle, act); };
    for (int sweep = 0; sweep < 4000; ++sweep) {
        double moved = 0;
        for (int n = 0; n < 7; ++n) {
            bool anchored = spec->node_templates[static_cast<size_t>(n)].role == NodeRole::foot;
            for (int axis = anchored ? 2 : 0; axis < 3; ++axis) {
                double& coord = oracle[0].node_positions[static_cast<size_t>(n)][axis];
                const double h = 1e-5;
                double e0 = energy();
                double saved = coord;
                coord = saved + h;
                double ep = energy();
                coord = saved - h;
                double em = energy();
                coord = saved;
                double g = (ep - em) / (2 * h);
                double curv = (ep - 2 * e0 + em) / (h * h);
                double step = curv > 1e-9 ? -g / curv : (g > 0 ? -1e-4 : 1e-4);
                step = std::clamp(step, -5e-3, 5e-3);
                double trial = saved + step;
                if (axis == 2) trial = std::max(trial, 0.0);
                coord = trial;
                if (energy() > e0) {
                    coord = saved;  // reject non-descent moves
                } else {
                    moved = std::max(moved, std::abs(coord - saved));
                }
            }
        }
        if (moved < 1e-10) break;
    }

    double oracle_energy = potential_energy(oracle, act);
    CHECK(report.final_energy ==
          doctest::Approx(oracle_energy).epsilon(1e-3));
    CHECK(report.final_energy <= oracle_energy + 1e-9);  // solver at least as good
}

TEST_CASE("bond constraints close to coincidence") {
    ModuleSpecPtr spec = default_module_spec();
    std::vector<ModuleState> states{
        build_module(spec, RigidTransform::identity(), "m0"),
        build_module(spec, RigidTransform::translate(Vec3(0.06, 0, 0)), "m1")};
    ConstraintSet cs;
    for (int m = 0; m < 2; ++m)
        for (int n = 0; n < 7; ++n) cs.ground.push_back({{m, n}});
    // Hold facing feet coincident (foot_b of m0 to foot_a of m1).
    cs.bonds.push_back({{0, spec->node_index("foot_b")}, {1, spec->node_index("foot_a")}});

    ActuationState none;
    SolveReport report = solve_equilibrium_inplace(states, none, cs);
    REQUIRE(report.converged);
    CHECK(report.max_violation <= 1e-6);
    Vec3 a = states[0].node_positions[static_cast<size_t>(spec->node_index("foot_b"))];
    Vec3 b = states[1].node_positions[static_cast<size_t>(spec->node_index("foot_a"))];
    CHECK((a - b).norm() <= 1e-6);
    for (const auto& m : states)
        for (const auto& p : m.node_positions) CHECK(p.z() >= -1e-6);
}

TEST_CASE("solves are deterministic") {
    ModuleSpecPtr spec = default_module_spec();
    ActuationState act;
    act.set("", "VA", 0.6);
    ConstraintSet cs;
    for (int n = 0; n < 7; ++n) cs.ground.push_back({{0, n}});

    std::vector<ModuleState> a{build_module(spec, RigidTransform::identity())};
    std::vector<ModuleState> b{build_module(spec, RigidTransform::identity())};
    SolveReport ra = solve_equilibrium_inplace(a, act, cs);
    SolveReport rb = solve_equilibrium_inplace(b, act, cs);
    REQUIRE(ra.converged);
    REQUIRE(rb.converged);
    CHECK(ra.final_energy == rb.final_energy);
    for (size_t n = 0; n < 7; ++n)
        CHECK((a[0].node_positions[n] - b[0].node_positions[n]).norm() == 0.0);
}

TEST_CASE("activation levels outside [0,1] are rejected") {
    ModuleSpecPtr spec = default_module_spec();
    std::vector<ModuleState> states{build_module(spec, RigidTransform::identity())};
    ActuationState act;
    act.set("", "VA", 1.5);
    CHECK_THROWS_AS(act.validate(states), Error);
    ActuationState unknown;
    unknown.set("", "QQ", 0.5);
    CHECK_THROWS_AS(unknown.validate(states), Error);
}
