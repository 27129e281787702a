#pragma once

#include "softlat/assembly.hpp"

#include <array>
#include <functional>
#include <string>
#include <vector>

namespace softlat {

/// Triangulated top surface of an assembled lattice: vertices are the bonded
/// arm junctions ("top nodes"), edges are the allowed transport paths, faces
/// are triangles of pairwise-adjacent vertices. Vertex positions are refreshed
/// from the lattice after every equilibrium solve.
struct SurfaceMesh {
    /// One member arm of a vertex: which module reaches the junction and with
    /// which limb (a/b/c). Lets plans name actuation channels without the
    /// lattice at hand.
    struct ArmInfo {
        NodeRef node;
        std::string module_id;
        char limb = '?';
    };

    std::vector<Vec3> vertices;
    std::vector<std::vector<ArmInfo>> vertex_arms;  // arm nodes merged per vertex
    std::vector<std::pair<int, int>> edges;
    std::vector<std::array<int, 3>> faces;

    /// Re-reads vertex positions as the mean of their member arm positions.
    void refresh(const LatticeState& lattice);

    bool adjacent(int a, int b) const;
    int nearest_vertex(const Vec2& xy) const;

    /// Surface height and in-plane height gradient at `xy`. Faces are sampled
    /// barycentrically; a mesh without faces (collinear vertices) is sampled
    /// along its edge polyline within `lateral_tol` of the line. Returns false
    /// when `xy` is outside the surface.
    bool sample(const Vec2& xy, double& height, Vec2& grad,
                double lateral_tol = 0.022) const;
};

/// Builds the mesh from the bonded arm clusters. Throws Error("invariant")
/// when fewer than two top nodes exist.
SurfaceMesh surface_from_lattice(const LatticeState& lattice);

struct BallState {
    Vec3 position = Vec3::Zero();  // centre, m
    Vec3 velocity = Vec3::Zero();  // m/s, tangential (z follows the surface)
    double radius = 0.01;          // m
    double mass = 0.003;           // kg
    bool escaped = false;          // rolled off the surface (ball grounded)
};

struct BallParams {
    double gravity_factor = 5.0 / 7.0;  // rolling solid sphere
    double damping = 0.5;               // 1/s, linear velocity damping
    /// The arm-junction ring forms a shallow rim at the surface boundary: a
    /// ball pushed up to this far outside the triangulation is held at the
    /// edge (outward velocity absorbed); beyond it the ball escapes.
    double boundary_margin = 0.01;      // m
};

/// One integration sub-step of the rolling-ball-on-heightfield model
/// (semi-implicit Euler; dt must be in (0, 0.01] s). An escaped ball is
/// grounded at z = radius and stops; the flag stays set.
BallState ball_step(const SurfaceMesh& mesh, BallState ball, double dt,
                    const BallParams& params = {});

/// Mechanical energy of a rolling ball (7/10 m v^2 translational+rotational
/// kinetic part plus potential). Non-increasing on a static surface.
double ball_energy(const BallState& ball);

/// One transport hop between adjacent lattice nodes: drag the start node down
/// (its vertical SMAs), release, then fire the two connector diagonal sets in
/// sequence to carry the ball across the valley.
struct HopActuation {
    int from = -1;
    int to = -1;
    std::vector<ChannelRef> lower;             // verticals of the `from` node
    std::vector<ChannelRef> connector_first;   // diagonals rooted at `from`
    std::vector<ChannelRef> connector_second;  // diagonals rooted at `to`
};

struct ManipulationPlan {
    std::vector<int> path;  // vertex indices; hops join consecutive entries
    std::vector<HopActuation> hops;
    double start_offset = 0;  // s, delay before the first hop (multi-ball)
};

/// Shortest path by hop count over the allowed edges (breadth-first), with
/// the per-hop actuation instantiated from the lattice topology. Throws
/// Error("infeasible") when `to` is unreachable.
ManipulationPlan plan_path(const SurfaceMesh& mesh, int from, int to);

/// Concatenates shortest-path legs through the waypoint list (used for
/// closed circuits; repeat the first waypoint at the end to close the loop).
ManipulationPlan plan_waypoints(const SurfaceMesh& mesh, const std::vector<int>& waypoints);

struct ManipulationParams {
    double control_dt = 0.1;        // s, equilibrium solve cadence
    double ball_dt = 0.001;         // s, ball integration sub-step
    double capture_distance = 0.015;  // m, delivery radius around the goal node
    double capture_speed = 0.01;    // m/s
    double lower_duration = 6.0;    // s, node drag-down phase
    double dwell = 5.0;             // s, per connector firing
    double settle_duration = 9.0;   // s, cool-down closing each hop
    BallParams ball;
    ThermalParams thermal;
    /// Observer called after every control-step equilibrium solve, with the
    /// step's end time and the updated lattice.
    std::function<void(double, const LatticeState&)> on_control_step;

    double hop_duration() const { return lower_duration + 2 * dwell + settle_duration; }
};

struct BallTrace {
    double t = 0;
    Vec3 position = Vec3::Zero();
    int nearest_node = -1;
};

struct ManipulationReport {
    bool success = false;            // every ball delivered, none escaped
    std::vector<bool> delivered;     // per ball
    std::vector<BallState> final_balls;
    double min_separation = 0;       // m, over every sub-step (multi-ball)
    int escapes = 0;
    double duration = 0;             // s simulated
    std::vector<std::vector<BallTrace>> traces;  // per ball, one sample per control step
    std::string detail;
};

/// Executes one plan per ball on the lattice: every control step advances the
/// SMA thermal states, re-solves the lattice equilibrium (feet anchored), and
/// sub-steps the ball(s) on the refreshed surface. Plans wait out their start
/// offsets; execution ends one settle period after the last hop.
ManipulationReport execute_plans(LatticeState& lattice,
                                 const std::vector<ManipulationPlan>& plans,
                                 std::vector<BallState> balls,
                                 const ManipulationParams& params = {});

/// Single-ball convenience wrapper.
ManipulationReport execute_plan(LatticeState& lattice, const ManipulationPlan& plan,
                                const BallState& ball, const ManipulationParams& params = {});

/// Plans every request (shortest path) and staggers start offsets, in whole
/// hop durations, so no two balls are ever mid-hop on overlapping or adjacent
/// node sets. Throws Error("invariant") for duplicate start nodes and
/// Error("infeasible") when no offset assignment separates the plans.
std::vector<ManipulationPlan> schedule_multi_ball(
    const SurfaceMesh& mesh, const std::vector<std::pair<int, int>>& requests,
    const ManipulationParams& params = {});

}  // namespace softlat
