#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "softlat/module_model.hpp"

#include <cmath>

using namespace softlat;

TEST_CASE("default module spec has the documented topology") {
    ModuleSpecPtr spec = default_module_spec();
    CHECK(spec->node_templates.size() == 7);
    CHECK(spec->sma_channels.size() == 9);
    CHECK(spec->skeleton_edges.size() == 15);
    CHECK(spec->magnet_sites.size() == 6);
    CHECK_NOTHROW(validate_module_spec(*spec));

    int feet = 0, arms = 0, centers = 0;
    for (const auto& n : spec->node_templates) {
        if (n.role == NodeRole::foot) ++feet;
        if (n.role == NodeRole::arm) ++arms;
        if (n.role == NodeRole::center) ++centers;
    }
    CHECK(feet == 3);
    CHECK(arms == 3);
    CHECK(centers == 1);
}

TEST_CASE("node and channel lookup") {
    ModuleSpecPtr spec = default_module_spec();
    CHECK(spec->node_index("foot_a") >= 0);
    CHECK(spec->node_index("no_such_node") == -1);
    CHECK(spec->channel_index("VA") >= 0);
    CHECK(spec->channel_index("va") == spec->channel_index("VA"));
    CHECK(spec->channel_index("XX") == -1);
    CHECK_THROWS_AS(channel(*spec, "XX"), Error);
    try {
        channel(*spec, "XX");
    } catch (const Error& e) {
        CHECK(e.category() == "unknown-label");
    }
}

TEST_CASE("SMA rest length interpolates between phases") {
    ModuleSpecPtr spec = default_module_spec();
    const SmaChannelSpec& va = channel(*spec, "VA");
    CHECK(va.rest_length(0.0) == doctest::Approx(va.rest_martensite));
    CHECK(va.rest_length(1.0) == doctest::Approx(va.rest_austenite));
    CHECK(va.rest_length(0.5) ==
          doctest::Approx((va.rest_martensite + va.rest_austenite) / 2));
    CHECK(va.rest_austenite < va.rest_martensite);  // contracts when heated
}

TEST_CASE("serialize/load round trip is exact") {
    ModuleSpecPtr spec = default_module_spec();
    std::string text = serialize_module_spec(*spec);
    ModuleSpec reloaded = load_module_spec(text);
    CHECK(serialize_module_spec(reloaded) == text);
    CHECK(reloaded.node_templates.size() == spec->node_templates.size());
    CHECK(reloaded.node_mass == doctest::Approx(spec->node_mass));
}

TEST_CASE("malformed descriptor raises a parse error") {
    CHECK_THROWS_AS(load_module_spec("{not json"), Error);
    try {
        load_module_spec("{not json");
    } catch (const Error& e) {
        CHECK(e.category() == "parse");
    }
}

TEST_CASE("invalid spec invariants are named") {
    ModuleSpec broken = load_module_spec(serialize_module_spec(*default_module_spec()));
    broken.skeleton_edges[0].node_a = "no_such_node";
    CHECK_THROWS_AS(validate_module_spec(broken), Error);
}

TEST_CASE("make_module_spec applies the calibration knobs") {
    ModuleSpecPtr spec = make_module_spec(150.0, 60.0, 0.004);
    CHECK(spec->node_mass == doctest::Approx(0.004));
    CHECK(spec->total_mass() == doctest::Approx(0.028));
    for (const auto& e : spec->skeleton_edges) CHECK(e.stiffness == doctest::Approx(150.0));
    for (const auto& c : spec->sma_channels) CHECK(c.stiffness == doctest::Approx(60.0));
}

TEST_CASE("build_module applies the base pose") {
    ModuleSpecPtr spec = default_module_spec();
    RigidTransform pose = RigidTransform::yaw_translate(M_PI / 2, Vec3(0.1, 0.2, 0.0));
    ModuleState state = build_module(spec, pose, "mod7");
    CHECK(state.module_id == "mod7");
    REQUIRE(state.node_positions.size() == spec->node_templates.size());
    for (size_t i = 0; i < state.node_positions.size(); ++i) {
        Vec3 expected = pose.apply(spec->node_templates[i].position);
        CHECK((state.node_positions[i] - expected).norm() == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("feet of the template rest on the ground plane") {
    ModuleSpecPtr spec = default_module_spec();
    for (const auto& n : spec->node_templates)
        if (n.role == NodeRole::foot) CHECK(std::abs(n.position.z()) < 1e-12);
}
