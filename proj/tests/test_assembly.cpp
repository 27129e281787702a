#include <doctest.h>

#include "softlat/assembly.hpp"

#include <algorithm>
#include <set>

using namespace softlat;

TEST_CASE("bond compatibility follows the polarity loops") {
    ModuleSpecPtr spec = default_module_spec();
    LatticeState lattice;
    lattice.modules.push_back(build_module(spec, RigidTransform::identity(), "m0"));
    lattice.modules.push_back(
        build_module(spec, RigidTransform::translate(Vec3(0.1, 0, 0)), "m1"));
    std::vector<MagnetSite> sites = lattice.magnet_sites();
    REQUIRE(sites.size() == 12);

    const MagnetSite* a = nullptr;
    const MagnetSite* b = nullptr;
    const MagnetSite* a2 = nullptr;
    for (const auto& s : sites) {
        if (s.node.module == 0 && !a) a = &s;
        else if (s.node.module == 0 && !a2) a2 = &s;
        else if (s.node.module == 1 && !b) b = &s;
    }
    REQUIRE(a);
    REQUIRE(b);
    REQUIRE(a2);
    CHECK_NOTHROW(bond_compatible(*a, *b));
    CHECK_THROWS_AS(bond_compatible(*a, *a2), Error);  // same module

    MagnetSite reversed = *b;
    reversed.orientation =
        b->orientation == LoopOrientation::ccw ? LoopOrientation::cw : LoopOrientation::ccw;
    CHECK(bond_compatible(*a, *b) != bond_compatible(*a, reversed));
}

TEST_CASE("detect_bonds is idempotent") {
    ModuleSpecPtr spec = default_module_spec();
    LatticeState lattice;
    lattice.modules.push_back(build_module(spec, RigidTransform::identity(), "m0"));
    // Place the second module so its trailing foot lands within capture range
    // of the first module's front-left foot.
    lattice.modules.push_back(
        build_module(spec, RigidTransform::translate(Vec3(0.0411, 0.022, 0)), "m1"));

    DetectBondsOptions opts;
    opts.capture_radius = 0.004;
    std::vector<Bond> first = detect_bonds(lattice, opts);
    CHECK(!first.empty());
    std::vector<Bond> second = detect_bonds(lattice, opts);
    CHECK(second.empty());
    CHECK_NOTHROW(lattice.validate());
    for (const auto& b : lattice.bonds) CHECK(lattice.same_cluster(b.a, b.b));
}

TEST_CASE("walking unit is bonded into one strapped cluster") {
    ModuleSpecPtr spec = make_module_spec(150, 60, 0.004);
    LatticeState unit = build_unit(spec, RigidTransform::identity(), "u");
    CHECK(unit.modules.size() == 3);
    CHECK(unit.module_index("uL") >= 0);
    CHECK(unit.module_index("uM") >= 0);
    CHECK(unit.module_index("uR") >= 0);
    CHECK(!unit.bonds.empty());
    TopNodeGraph graph = top_node_graph(unit);
    CHECK(graph.nodes.size() == 1);  // the shared centre junction
    CHECK(graph.nodes[0].arms.size() >= 3);
    CHECK(graph.connected());
}

TEST_CASE("row lattice exposes three collinear top nodes") {
    ModuleSpecPtr spec = make_module_spec(150, 60, 0.004);
    LatticeState lattice = build_row_lattice(spec);
    TopNodeGraph graph = top_node_graph(lattice);
    CHECK(graph.nodes.size() == 3);
    CHECK(graph.edges.size() == 2);
    CHECK(graph.connected());
}

TEST_CASE("grid lattice exposes a 3x3 top-node rhombus") {
    ModuleSpecPtr spec = make_module_spec(150, 60, 0.004);
    LatticeState lattice = build_grid_lattice(spec);
    CHECK(lattice.modules.size() == 16);
    TopNodeGraph graph = top_node_graph(lattice);
    REQUIRE(graph.nodes.size() == 9);
    CHECK(graph.connected());

    // Oracle: two junctions are adjacent exactly when one lattice pitch apart.
    const double pitch = 0.044;
    std::set<std::pair<int, int>> expected;
    for (int i = 0; i < 9; ++i)
        for (int j = i + 1; j < 9; ++j) {
            double d = (graph.nodes[static_cast<size_t>(i)].position -
                        graph.nodes[static_cast<size_t>(j)].position)
                           .norm();
            if (std::abs(d - pitch) < 0.2 * pitch) expected.insert({i, j});
        }
    std::set<std::pair<int, int>> actual;
    for (auto [a, b] : graph.edges) actual.insert({std::min(a, b), std::max(a, b)});
    CHECK(actual == expected);
    CHECK(actual.size() == 16);
}

TEST_CASE("every converged lattice build respects ground and bond feasibility") {
    ModuleSpecPtr spec = make_module_spec(150, 60, 0.004);
    for (const LatticeState& lattice :
         {build_unit(spec, RigidTransform::identity(), "u"), build_row_lattice(spec)}) {
        for (const auto& m : lattice.modules)
            for (const auto& p : m.node_positions) CHECK(p.z() >= -1e-6);
        for (const auto& b : lattice.bonds) {
            Vec3 pa = lattice.modules[static_cast<size_t>(b.a.module)]
                          .node_positions[static_cast<size_t>(b.a.node)];
            Vec3 pb = lattice.modules[static_cast<size_t>(b.b.module)]
                          .node_positions[static_cast<size_t>(b.b.node)];
            CHECK((pa - pb).norm() <= 1e-6);
        }
    }
}

TEST_CASE("head-on attachment protocol completes a full bond") {
    AttachmentReport report = run_attachment_protocol(0.0, 1, AttachmentParams{});
    CHECK(report.success);
    CHECK(report.approaches >= 1);
    CHECK(!report.bond_sequence.empty());
    std::string text = serialize_attachment_report(report);
    CHECK(text.find("success") != std::string::npos);
}

TEST_CASE("docking placement faces the requested rim edge") {
    ModuleSpecPtr spec = make_module_spec(150, 60, 0.004);
    LatticeState lattice = build_unit(spec, RigidTransform::identity(), "a");
    Vec3 edge_a(0.044 * std::cos(-M_PI / 6), 0.044 * std::sin(-M_PI / 6), 0);
    Vec3 edge_b(0.044 * std::cos(M_PI / 6), 0.044 * std::sin(M_PI / 6), 0);
    Vec3 mid = (edge_a + edge_b) / 2;
    Vec3 outward = mid.normalized();

    std::vector<int> idx =
        place_unit_for_docking(lattice, spec, edge_a, edge_b, outward, 0.012, 0.0, "b");
    CHECK(idx.size() == 3);
    CHECK(lattice.modules.size() == 6);

    // The new unit sits on the outward side of the edge with a clear gap.
    double best = 1e9;
    for (int m : idx)
        for (const auto& p : lattice.modules[static_cast<size_t>(m)].node_positions) {
            CHECK((p - mid).dot(outward) > 0.0);
            best = std::min(best, (Vec2(p.x(), p.y()) - Vec2(mid.x(), mid.y())).norm());
        }
    CHECK(best > 0.005);
    CHECK(best < 0.05);
}
