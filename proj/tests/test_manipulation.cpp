#include <doctest.h>

#include "softlat/manipulation.hpp"

#include <algorithm>
#include <map>
#include <queue>
#include <set>

using namespace softlat;

namespace {

ModuleSpecPtr calibrated_spec() { return make_module_spec(150, 60, 0.004); }

// Independent breadth-first distances over the mesh edges.
std::vector<int> bfs_distances(const SurfaceMesh& mesh, int from) {
    std::vector<int> dist(mesh.vertices.size(), -1);
    std::queue<int> queue;
    dist[static_cast<size_t>(from)] = 0;
    queue.push(from);
    while (!queue.empty()) {
        int u = queue.front();
        queue.pop();
        for (auto [a, b] : mesh.edges) {
            int v = a == u ? b : b == u ? a : -1;
            if (v >= 0 && dist[static_cast<size_t>(v)] < 0) {
                dist[static_cast<size_t>(v)] = dist[static_cast<size_t>(u)] + 1;
                queue.push(v);
            }
        }
    }
    return dist;
}

// Inclined-plane mesh: a large triangle with height z = -slope * x.
SurfaceMesh slope_mesh(double slope) {
    SurfaceMesh mesh;
    mesh.vertices = {Vec3(-1, -1, slope), Vec3(-1, 1, slope), Vec3(2, 0, -2 * slope)};
    mesh.vertex_arms.resize(3);
    mesh.edges = {{0, 1}, {1, 2}, {0, 2}};
    mesh.faces = {{0, 1, 2}};
    return mesh;
}

}  // namespace

TEST_CASE("grid surface mesh matches the lattice top-node geometry") {
    LatticeState lattice = build_grid_lattice(calibrated_spec());
    SurfaceMesh mesh = surface_from_lattice(lattice);
    REQUIRE(mesh.vertices.size() == 9);
    CHECK(mesh.edges.size() == 16);
    CHECK(!mesh.faces.empty());
    for (size_t v = 0; v < mesh.vertices.size(); ++v) CHECK(mesh.vertex_arms[v].size() >= 3);

    // Interpolating at a vertex returns its height; the gradient is finite.
    double h = 0;
    Vec2 grad;
    REQUIRE(mesh.sample(Vec2(mesh.vertices[4].x(), mesh.vertices[4].y()), h, grad));
    CHECK(h == doctest::Approx(mesh.vertices[4].z()).epsilon(1e-6));
    CHECK(std::isfinite(grad.x()));

    CHECK_FALSE(mesh.sample(Vec2(10.0, 10.0), h, grad));  // far outside
}

TEST_CASE("shortest-hop plans agree with a breadth-first oracle") {
    LatticeState lattice = build_grid_lattice(calibrated_spec());
    SurfaceMesh mesh = surface_from_lattice(lattice);
    std::vector<int> dist = bfs_distances(mesh, 0);

    for (int to = 1; to < 9; ++to) {
        ManipulationPlan plan = plan_path(mesh, 0, to);
        REQUIRE(!plan.path.empty());
        CHECK(plan.path.front() == 0);
        CHECK(plan.path.back() == to);
        CHECK(static_cast<int>(plan.path.size()) - 1 == dist[static_cast<size_t>(to)]);
        for (size_t i = 0; i + 1 < plan.path.size(); ++i)
            CHECK(mesh.adjacent(plan.path[i], plan.path[i + 1]));
        CHECK(plan.hops.size() == plan.path.size() - 1);
    }

    ManipulationPlan loop = plan_waypoints(mesh, {0, 6, 8, 4, 0});
    CHECK(loop.path.front() == 0);
    CHECK(loop.path.back() == 0);
    CHECK(loop.hops.size() >= 8);
}

TEST_CASE("unreachable targets are infeasible") {
    SurfaceMesh mesh;
    mesh.vertices = {Vec3(0, 0, 0.05), Vec3(1, 0, 0.05)};
    mesh.vertex_arms.resize(2);
    // no edges: disconnected
    CHECK_THROWS_AS(plan_path(mesh, 0, 1), Error);
    try {
        plan_path(mesh, 0, 1);
    } catch (const Error& e) {
        CHECK(e.category() == "infeasible");
    }
}

TEST_CASE("hop actuation lowers the start node and pulls toward the target") {
    LatticeState lattice = build_grid_lattice(calibrated_spec());
    SurfaceMesh mesh = surface_from_lattice(lattice);
    ManipulationPlan plan = plan_path(mesh, 0, 1);
    REQUIRE(plan.hops.size() == 1);
    const HopActuation& hop = plan.hops[0];
    CHECK(hop.from == 0);
    CHECK(hop.to == 1);
    // One vertical per arm parked at the start junction.
    CHECK(hop.lower.size() == mesh.vertex_arms[0].size());
    for (const auto& c : hop.lower) CHECK(c.label[0] == 'V');
    CHECK(!hop.connector_first.empty());
    CHECK(!hop.connector_second.empty());
    for (const auto& c : hop.connector_first) CHECK(c.label[0] == 'D');
}

TEST_CASE("ball accelerates at (5/7) g sin(theta) on a frictionless incline") {
    const double slope = 0.1;  // tan(theta)
    SurfaceMesh mesh = slope_mesh(slope);
    BallParams params;
    params.damping = 0.0;

    BallState ball;
    ball.position = Vec3(0, 0, ball.radius);
    const double dt = 0.001, total = 0.25;
    for (double t = 0; t < total - dt / 2; t += dt) ball = ball_step(mesh, ball, dt, params);
    CHECK_FALSE(ball.escaped);

    double theta = std::atan(slope);
    double expected = 0.5 * (5.0 / 7.0) * kGravity * std::sin(theta) * std::cos(theta) * total *
                      total;  // horizontal projection of the slope distance
    CHECK(ball.position.x() == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("ball energy is non-increasing on a static surface") {
    SurfaceMesh mesh = slope_mesh(0.08);
    BallState ball;
    ball.position = Vec3(-0.2, 0.1, ball.radius);
    double last = ball_energy(ball);
    for (int i = 0; i < 400; ++i) {
        ball = ball_step(mesh, ball, 0.001);
        double e = ball_energy(ball);
        CHECK(e <= last + 1e-12);
        last = e;
    }
}

TEST_CASE("ball stays put on a flat surface") {
    SurfaceMesh mesh = slope_mesh(0.0);
    BallState ball;
    ball.position = Vec3(0.1, 0.05, ball.radius);
    for (int i = 0; i < 200; ++i) ball = ball_step(mesh, ball, 0.001);
    CHECK((ball.position - Vec3(0.1, 0.05, ball.radius)).norm() < 1e-9);
    CHECK(ball.velocity.norm() < 1e-12);
}

TEST_CASE("integration step size is bounded") {
    SurfaceMesh mesh = slope_mesh(0.0);
    BallState ball;
    CHECK_THROWS_AS(ball_step(mesh, ball, 0.02), Error);
    CHECK_THROWS_AS(ball_step(mesh, ball, 0.0), Error);
}

TEST_CASE("the boundary rim holds a rolling ball at the edge") {
    SurfaceMesh mesh = slope_mesh(0.0);
    BallState ball;
    ball.position = Vec3(1.9, 0, ball.radius);
    ball.velocity = Vec3(2.0, 0, 0);  // rolls toward the corner at (2, 0)
    for (int i = 0; i < 400; ++i) ball = ball_step(mesh, ball, 0.001);
    CHECK_FALSE(ball.escaped);
    CHECK(ball.position.x() <= 2.0 + 0.011);  // held within the rim margin
    CHECK(ball.velocity.norm() < 0.05);       // outward motion absorbed
}

TEST_CASE("a ball beyond the rim margin escapes and grounds") {
    SurfaceMesh mesh = slope_mesh(0.0);
    BallState ball;
    ball.position = Vec3(2.05, 0, ball.radius);  // well outside the triangulation
    ball = ball_step(mesh, ball, 0.001);
    CHECK(ball.escaped);
    CHECK(ball.position.z() == doctest::Approx(ball.radius));
    CHECK(ball.velocity.norm() == doctest::Approx(0.0));
}

TEST_CASE("multi-ball scheduling separates conflicting plans") {
    LatticeState lattice = build_row_lattice(calibrated_spec());
    SurfaceMesh mesh = surface_from_lattice(lattice);
    REQUIRE(mesh.vertices.size() == 3);

    // Swapping the two end balls on a 3-node row can never run concurrently:
    // every hop pair shares or neighbours a node. The only legal stagger is a
    // full plan length, which an exhaustive search over offsets confirms.
    ManipulationParams params;
    std::vector<ManipulationPlan> plans = schedule_multi_ball(mesh, {{0, 2}, {2, 0}}, params);
    REQUIRE(plans.size() == 2);
    CHECK(plans[0].start_offset == doctest::Approx(0.0));
    CHECK(plans[1].start_offset == doctest::Approx(2 * params.hop_duration()));

    CHECK_THROWS_AS(schedule_multi_ball(mesh, {{0, 2}, {0, 1}}, params), Error);  // shared start
}

TEST_CASE("non-interacting plans run concurrently") {
    LatticeState lattice = build_grid_lattice(calibrated_spec());
    SurfaceMesh mesh = surface_from_lattice(lattice);
    // 0 -> 1 and 8 -> 7 touch opposite corners of the rhombus.
    std::vector<ManipulationPlan> plans = schedule_multi_ball(mesh, {{0, 1}, {8, 7}});
    CHECK(plans[0].start_offset == doctest::Approx(0.0));
    CHECK(plans[1].start_offset == doctest::Approx(0.0));
}

TEST_CASE("an empty plan delivers a ball already at its goal") {
    LatticeState lattice = build_row_lattice(calibrated_spec());
    SurfaceMesh mesh = surface_from_lattice(lattice);
    ManipulationPlan plan;
    plan.path = {1};
    BallState ball;
    ball.position = mesh.vertices[1] + Vec3(0, 0, ball.radius);
    ManipulationReport report = execute_plan(lattice, plan, ball);
    CHECK(report.success);
    CHECK(report.escapes == 0);
}
