#include <doctest.h>

#include "softlat/contact.hpp"

#include <cmath>

using namespace softlat;

namespace {

std::vector<ModuleState> settled_module(ModuleSpecPtr spec) {
    std::vector<ModuleState> states{build_module(spec, RigidTransform::identity())};
    ConstraintSet cs;
    for (int n = 0; n < 7; ++n) cs.ground.push_back({{0, n}});
    ActuationState none;
    SolveReport r = solve_equilibrium_inplace(states, none, cs);
    REQUIRE(r.converged);
    return states;
}

}  // namespace

TEST_CASE("support forces balance the total weight") {
    ModuleSpecPtr spec = default_module_spec();
    std::vector<ModuleState> states = settled_module(spec);
    ContactState contact = support_forces(states);
    CHECK_FALSE(contact.tip_over);
    double total = 0;
    for (const auto& f : contact.feet) {
        CHECK(f.normal >= 0.0);
        total += f.normal;
    }
    double weight = spec->total_mass() * kGravity;
    CHECK(std::abs(total - weight) < 1e-9);
}

TEST_CASE("stuck feet satisfy the Coulomb limit") {
    ModuleSpecPtr spec = default_module_spec();
    std::vector<ModuleState> states = settled_module(spec);

    GaitSchedule g = builtin_gait("combined");
    ActuationState before = activation_at(g, ThermalParams{}, 0.0);
    ActuationState after = activation_at(g, ThermalParams{}, 1.5);
    StickSlipOptions opts;
    opts.mu = 0.6;
    auto [contact, metrics] = stick_slip_step(states, before, after, opts);
    (void)metrics;

    // The tangential force a stuck foot must supply is the in-plane residual
    // of the energy gradient there (gravity and the ground act along z only).
    std::vector<Vec3> grad = energy_gradient(states, after);
    for (const auto& f : contact.feet) {
        if (f.mode != ContactMode::stuck) continue;
        Vec2 tangential(grad[static_cast<size_t>(f.node.node)].x(),
                        grad[static_cast<size_t>(f.node.node)].y());
        CHECK(tangential.norm() <= opts.mu * f.normal + 1e-4);
    }
}

TEST_CASE("zero friction gives no net locomotion over a closed cycle") {
    ModuleSpecPtr spec = default_module_spec();
    std::vector<ModuleState> states = settled_module(spec);
    Vec3 before = states[0].center_of_mass();

    GaitRunOptions opts;
    opts.mu = 0.0;
    opts.cycles = 1;
    run_gait(states, builtin_gait("combined"), ThermalParams{}, opts);
    Vec3 after = states[0].center_of_mass();
    CHECK((Vec2(after.x(), after.y()) - Vec2(before.x(), before.y())).norm() < 1e-4);
}

TEST_CASE("mirrored gait mirrors the trajectory") {
    // Swapping the left/right channels (B <-> C) mirrors the module about the
    // y=0 plane, so the final poses must be reflections of each other.
    ModuleSpecPtr spec = default_module_spec();
    GaitSchedule gait = builtin_gait("shuffling");
    GaitSchedule mirrored = gait;
    for (auto& c : mirrored.channels) {
        if (c.label == "VB") c.label = "VC";
        else if (c.label == "VC") c.label = "VB";
        else if (c.label == "HAB") c.label = "HAC";
        else if (c.label == "HAC") c.label = "HAB";
    }

    std::vector<ModuleState> a = settled_module(spec);
    std::vector<ModuleState> b = a;
    GaitRunOptions opts;
    opts.mu = 0.3;
    opts.cycles = 1;
    run_gait(a, gait, ThermalParams{}, opts);
    run_gait(b, mirrored, ThermalParams{}, opts);

    auto mirror_index = [&](int n) {
        const std::string& label = spec->node_templates[static_cast<size_t>(n)].label;
        std::string swapped = label;
        if (label.back() == 'b') swapped.back() = 'c';
        else if (label.back() == 'c') swapped.back() = 'b';
        return spec->node_index(swapped);
    };
    for (int n = 0; n < 7; ++n) {
        Vec3 pa = a[0].node_positions[static_cast<size_t>(n)];
        Vec3 pb = b[0].node_positions[static_cast<size_t>(mirror_index(n))];
        CHECK(std::abs(pa.x() - pb.x()) < 1e-6);
        CHECK(std::abs(pa.y() + pb.y()) < 1e-6);
        CHECK(std::abs(pa.z() - pb.z()) < 1e-6);
    }
}

TEST_CASE("combined gait walks forward at the calibrated point") {
    ModuleSpecPtr spec = make_module_spec(150, 60, 0.004);
    std::vector<ModuleState> states = settled_module(spec);
    GaitRunOptions opts;
    opts.mu = 0.3;
    opts.cycles = 1;
    run_gait(states, builtin_gait("combined"), ThermalParams{}, opts);  // warm-up
    GaitRunResult r = run_gait(states, builtin_gait("combined"), ThermalParams{}, opts);
    CHECK(r.per_cycle_forward > 0.0);
    CHECK(r.cycle_metrics.h3 ==
          doctest::Approx(r.cycle_metrics.h1 - r.cycle_metrics.h2).epsilon(1e-9));
}

TEST_CASE("asymmetric shuffling turns toward the less-contracted side") {
    ModuleSpecPtr spec = default_module_spec();
    std::vector<ModuleState> left_longer = settled_module(spec);
    std::vector<ModuleState> right_longer = settled_module(spec);
    double a = asymmetric_turn(left_longer, 5.2, 2.6, 0.6, 1);
    double b = asymmetric_turn(right_longer, 2.6, 5.2, 0.6, 1);
    CHECK(a > 0.0);   // left contracted longer: veers right
    CHECK(b < 0.0);   // mirrored command, mirrored turn
    CHECK(a == doctest::Approx(-b).epsilon(1e-6));
}

TEST_CASE("three-legged race advances feet through the air while stable") {
    ModuleSpecPtr spec = make_module_spec(150, 60, 0.004);
    LatticeState lattice = build_unit(spec, RigidTransform::identity(), "");
    GaitRunOptions opts;
    opts.mu = 0.3;
    opts.cycles = 1;
    for (const auto& b : lattice.bonds) opts.extra_constraints.bonds.push_back({b.a, b.b});

    double max_foot_lift = 0;
    bool tipped = false;
    opts.on_substep = [&](double, const std::vector<ModuleState>& states) {
        for (const auto& m : states)
            for (size_t n = 0; n < m.node_positions.size(); ++n)
                if (m.spec->node_templates[n].role == NodeRole::foot)
                    max_foot_lift = std::max(max_foot_lift, m.node_positions[n].z());
        if (support_forces(states).tip_over) tipped = true;
    };
    run_gait(lattice.modules, builtin_gait("three_legged_race"), ThermalParams{}, opts);
    CHECK(max_foot_lift > 5e-4);  // a foot traveled through the air
    CHECK_FALSE(tipped);
}
