#include "softlat/manipulation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace softlat {

namespace {

char next_limb(char c) { return c == 'a' ? 'b' : (c == 'b' ? 'c' : 'a'); }

std::string vertical_channel(char limb) {
    return std::string("V") + static_cast<char>(std::toupper(limb));
}

std::string diagonal_channel(char foot_limb) {
    // Diagonal channels run foot_x -> arm_{next(x)}.
    return std::string("D") + static_cast<char>(std::toupper(foot_limb));
}

Vec2 xy(const Vec3& p) { return Vec2(p.x(), p.y()); }

}  // namespace

// ---------------------------------------------------------------------------
// SurfaceMesh

void SurfaceMesh::refresh(const LatticeState& lattice) {
    for (size_t v = 0; v < vertices.size(); ++v) {
        Vec3 mean = Vec3::Zero();
        for (const auto& arm : vertex_arms[v])
            mean += lattice.modules[static_cast<size_t>(arm.node.module)]
                        .node_positions[static_cast<size_t>(arm.node.node)];
        vertices[v] = mean / static_cast<double>(vertex_arms[v].size());
    }
}

bool SurfaceMesh::adjacent(int a, int b) const {
    for (const auto& [u, v] : edges)
        if ((u == a && v == b) || (u == b && v == a)) return true;
    return false;
}

int SurfaceMesh::nearest_vertex(const Vec2& p) const {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t v = 0; v < vertices.size(); ++v) {
        double d = (xy(vertices[v]) - p).norm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(v);
        }
    }
    return best;
}

bool SurfaceMesh::sample(const Vec2& p, double& height, Vec2& grad, double lateral_tol) const {
    // Barycentric lookup over the triangles.
    for (const auto& f : faces) {
        Vec2 a = xy(vertices[static_cast<size_t>(f[0])]);
        Vec2 b = xy(vertices[static_cast<size_t>(f[1])]);
        Vec2 c = xy(vertices[static_cast<size_t>(f[2])]);
        double det = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
        if (std::abs(det) < 1e-15) continue;
        double wb = ((p - a).x() * (c - a).y() - (p - a).y() * (c - a).x()) / det;
        double wc = ((b - a).x() * (p - a).y() - (b - a).y() * (p - a).x()) / det;
        double wa = 1.0 - wb - wc;
        const double tol = -1e-9;
        if (wa < tol || wb < tol || wc < tol) continue;
        double za = vertices[static_cast<size_t>(f[0])].z();
        double zb = vertices[static_cast<size_t>(f[1])].z();
        double zc = vertices[static_cast<size_t>(f[2])].z();
        height = wa * za + wb * zb + wc * zc;
        // Plane gradient: solve for z = g.x + g.y + const over the triangle.
        Vec2 e1 = b - a, e2 = c - a;
        double dz1 = zb - za, dz2 = zc - za;
        grad = Vec2(e2.y() * dz1 - e1.y() * dz2, -e2.x() * dz1 + e1.x() * dz2) / det;
        return true;
    }
    if (!faces.empty()) return false;

    // Degenerate (collinear) mesh: sample the edge polyline.
    double best_lat = std::numeric_limits<double>::infinity();
    for (const auto& [ia, ib] : edges) {
        Vec2 a = xy(vertices[static_cast<size_t>(ia)]);
        Vec2 b = xy(vertices[static_cast<size_t>(ib)]);
        Vec2 d = b - a;
        double len2 = d.squaredNorm();
        if (len2 < 1e-18) continue;
        double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
        Vec2 foot = a + t * d;
        double lat = (p - foot).norm();
        if (lat < best_lat) {
            best_lat = lat;
            double za = vertices[static_cast<size_t>(ia)].z();
            double zb = vertices[static_cast<size_t>(ib)].z();
            height = za + t * (zb - za);
            grad = d.normalized() * ((zb - za) / std::sqrt(len2));
        }
    }
    return best_lat <= lateral_tol;
}

SurfaceMesh surface_from_lattice(const LatticeState& lattice) {
    TopNodeGraph g = top_node_graph(lattice);
    if (g.nodes.size() < 2)
        throw Error("invariant", "surface needs at least two top nodes (got " +
                                     std::to_string(g.nodes.size()) + ")");
    SurfaceMesh mesh;
    for (const auto& n : g.nodes) {
        mesh.vertices.push_back(n.position);
        std::vector<SurfaceMesh::ArmInfo> arms;
        for (const auto& ref : n.arms) {
            const auto& st = lattice.modules[static_cast<size_t>(ref.module)];
            const std::string& label = st.spec->node_templates[static_cast<size_t>(ref.node)].label;
            arms.push_back({ref, st.module_id, label.back()});
        }
        mesh.vertex_arms.push_back(std::move(arms));
    }
    mesh.edges = g.edges;
    int n = static_cast<int>(mesh.vertices.size());
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            for (int k = j + 1; k < n; ++k)
                if (mesh.adjacent(i, j) && mesh.adjacent(j, k) && mesh.adjacent(i, k))
                    mesh.faces.push_back({i, j, k});
    return mesh;
}

// ---------------------------------------------------------------------------
// Ball dynamics

namespace {

/// Nearest point of the triangulation's edge set to `p` (used to hold a ball
/// at the boundary rim). False when the mesh has no faces.
bool nearest_mesh_point(const SurfaceMesh& mesh, const Vec2& p, Vec2& out) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : mesh.faces)
        for (int e = 0; e < 3; ++e) {
            Vec2 a = xy(mesh.vertices[static_cast<size_t>(f[e])]);
            Vec2 b = xy(mesh.vertices[static_cast<size_t>(f[(e + 1) % 3])]);
            Vec2 d = b - a;
            double len2 = d.squaredNorm();
            if (len2 < 1e-18) continue;
            double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
            Vec2 q = a + t * d;
            double dist = (p - q).norm();
            if (dist < best) {
                best = dist;
                out = q;
            }
        }
    return best < std::numeric_limits<double>::infinity();
}

/// Samples the surface at `p`, holding the point at the boundary rim when it
/// sits within the margin (outward velocity absorbed). False = escaped.
bool locate_on_surface(const SurfaceMesh& mesh, const BallParams& params, Vec2& p, Vec2* vel,
                       double& h, Vec2& grad) {
    if (mesh.sample(p, h, grad)) return true;
    if (mesh.faces.empty()) return false;  // polyline meshes use the lateral tolerance only
    Vec2 q;
    if (!nearest_mesh_point(mesh, p, q)) return false;
    Vec2 outward = p - q;
    double dist = outward.norm();
    if (dist > params.boundary_margin) return false;
    if (vel && dist > 1e-12) {
        outward /= dist;
        double vo = Vec2(vel->x(), vel->y()).dot(outward);
        if (vo > 0) *vel -= vo * outward;
    }
    p = q;
    return mesh.sample(p, h, grad);
}

}  // namespace

BallState ball_step(const SurfaceMesh& mesh, BallState ball, double dt, const BallParams& params) {
    if (dt <= 0 || dt > 0.01)
        throw Error("invariant", "ball_step dt must lie in (0, 0.01] s");
    if (ball.escaped) {
        ball.position.z() = ball.radius;
        ball.velocity.setZero();
        return ball;
    }
    double h = 0;
    Vec2 grad = Vec2::Zero();
    Vec2 p = xy(ball.position);
    Vec2 v(ball.velocity.x(), ball.velocity.y());
    if (!locate_on_surface(mesh, params, p, &v, h, grad)) {
        ball.escaped = true;
        ball.position.z() = ball.radius;
        ball.velocity.setZero();
        return ball;
    }
    Vec2 accel = -params.gravity_factor * kGravity * grad - params.damping * v;
    v += dt * accel;
    p += dt * v;
    if (!locate_on_surface(mesh, params, p, &v, h, grad)) {
        ball.escaped = true;
        ball.position = Vec3(p.x(), p.y(), ball.radius);
        ball.velocity.setZero();
        return ball;
    }
    ball.velocity = Vec3(v.x(), v.y(), 0);
    ball.position = Vec3(p.x(), p.y(), h + ball.radius);
    return ball;
}

double ball_energy(const BallState& ball) {
    // Rolling solid sphere: KE = 7/10 m v^2 (translation + rotation).
    return 0.7 * ball.mass * ball.velocity.squaredNorm() +
           ball.mass * kGravity * ball.position.z();
}

// ---------------------------------------------------------------------------
// Planning

namespace {

HopActuation make_hop(const SurfaceMesh& mesh, int from, int to) {
    HopActuation hop;
    hop.from = from;
    hop.to = to;
    // Lower the start node: the vertical SMA of every module arm merged there.
    for (const auto& arm : mesh.vertex_arms[static_cast<size_t>(from)])
        hop.lower.push_back({arm.module_id, vertical_channel(arm.limb)});
    // Connector diagonals: a module with arms at two adjacent nodes carries
    // exactly one diagonal spanning the valley (foot under one node, arm at
    // the other). The first connector set pulls the destination arm down from
    // the start side; the second set pulls it down from every far side, so
    // the destination stays the local minimum that catches the ball.
    auto spanning = [&](int foot_node, int arm_node, std::vector<ChannelRef>& out) {
        for (const auto& af : mesh.vertex_arms[static_cast<size_t>(foot_node)])
            for (const auto& aa : mesh.vertex_arms[static_cast<size_t>(arm_node)])
                if (af.module_id == aa.module_id && next_limb(af.limb) == aa.limb)
                    out.push_back({af.module_id, diagonal_channel(af.limb)});
    };
    spanning(from, to, hop.connector_first);
    for (const auto& [a, b] : mesh.edges) {
        int w = a == to ? b : (b == to ? a : -1);
        if (w >= 0 && w != from) spanning(w, to, hop.connector_second);
    }
    return hop;
}

}  // namespace

ManipulationPlan plan_path(const SurfaceMesh& mesh, int from, int to) {
    int n = static_cast<int>(mesh.vertices.size());
    if (from < 0 || from >= n || to < 0 || to >= n)
        throw Error("invariant", "path endpoints outside the mesh");
    std::vector<int> prev(static_cast<size_t>(n), -2);
    std::deque<int> queue{from};
    prev[static_cast<size_t>(from)] = -1;
    while (!queue.empty() && prev[static_cast<size_t>(to)] == -2) {
        int cur = queue.front();
        queue.pop_front();
        for (const auto& [a, b] : mesh.edges) {
            int other = a == cur ? b : (b == cur ? a : -1);
            if (other >= 0 && prev[static_cast<size_t>(other)] == -2) {
                prev[static_cast<size_t>(other)] = cur;
                queue.push_back(other);
            }
        }
    }
    if (prev[static_cast<size_t>(to)] == -2)
        throw Error("infeasible", "target node unreachable over the allowed edges");
    ManipulationPlan plan;
    for (int cur = to; cur != -1; cur = prev[static_cast<size_t>(cur)]) plan.path.push_back(cur);
    std::reverse(plan.path.begin(), plan.path.end());
    for (size_t i = 0; i + 1 < plan.path.size(); ++i)
        plan.hops.push_back(make_hop(mesh, plan.path[i], plan.path[i + 1]));
    return plan;
}

ManipulationPlan plan_waypoints(const SurfaceMesh& mesh, const std::vector<int>& waypoints) {
    if (waypoints.size() < 2) throw Error("invariant", "waypoint list needs at least two nodes");
    ManipulationPlan plan;
    plan.path.push_back(waypoints.front());
    for (size_t w = 0; w + 1 < waypoints.size(); ++w) {
        ManipulationPlan leg = plan_path(mesh, waypoints[w], waypoints[w + 1]);
        plan.path.insert(plan.path.end(), leg.path.begin() + 1, leg.path.end());
        plan.hops.insert(plan.hops.end(), leg.hops.begin(), leg.hops.end());
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

/// Channels commanded on at plan-local time `t` (negative before the start).
void active_channels(const ManipulationPlan& plan, double t, const ManipulationParams& params,
                     std::set<std::pair<std::string, std::string>>& out) {
    t -= plan.start_offset;
    if (t < 0 || plan.hops.empty()) return;
    double T = params.hop_duration();
    int hop = static_cast<int>(t / T);
    if (hop >= static_cast<int>(plan.hops.size())) return;
    double local = t - hop * T;
    const HopActuation& h = plan.hops[static_cast<size_t>(hop)];
    const std::vector<ChannelRef>* group = nullptr;
    if (local < params.lower_duration)
        group = &h.lower;
    else if (local < params.lower_duration + params.dwell)
        group = &h.connector_first;
    else if (local < params.lower_duration + 2 * params.dwell)
        group = &h.connector_second;
    if (group)
        for (const auto& c : *group) out.insert({c.module_scope, c.label});
}

}  // namespace

ManipulationReport execute_plans(LatticeState& lattice, const std::vector<ManipulationPlan>& plans,
                                 std::vector<BallState> balls, const ManipulationParams& params) {
    if (plans.size() != balls.size())
        throw Error("invariant", "one plan per ball required");
    SurfaceMesh mesh = surface_from_lattice(lattice);
    for (const auto& plan : plans) {
        for (size_t i = 0; i + 1 < plan.path.size(); ++i)
            if (!mesh.adjacent(plan.path[i], plan.path[i + 1]))
                throw Error("invariant", "plan path uses a non-adjacent node pair");
        for (const auto& hop : plan.hops)
            for (const auto* group : {&hop.lower, &hop.connector_first, &hop.connector_second})
                for (const auto& c : *group) {
                    int m = lattice.module_index(c.module_scope);
                    if (m < 0 || lattice.modules[static_cast<size_t>(m)].spec->channel_index(
                                     c.label) < 0)
                        throw Error("unknown-label",
                                    "plan references channel '" + c.label + "' on missing module '" +
                                        c.module_scope + "'");
                }
    }

    // The assembled lattice stays put during manipulation: feet are anchored
    // at their current footprint on top of the ground constraints.
    ConstraintSet cs = lattice.constraints();
    for (size_t m = 0; m < lattice.modules.size(); ++m) {
        const auto& st = lattice.modules[m];
        for (size_t n = 0; n < st.node_positions.size(); ++n)
            if (st.spec->node_templates[n].role == NodeRole::foot)
                cs.anchors.push_back({{static_cast<int>(m), static_cast<int>(n)},
                                      xy(st.node_positions[n])});
    }

    ManipulationReport report;
    report.delivered.assign(balls.size(), false);
    report.traces.resize(balls.size());
    report.min_separation = std::numeric_limits<double>::infinity();

    double T = params.hop_duration();
    double duration = 0;
    for (const auto& plan : plans)
        duration = std::max(duration, plan.start_offset +
                                          T * static_cast<double>(plan.hops.size()));

    std::map<std::pair<std::string, std::string>, double> level;
    int ball_substeps = std::max(1, static_cast<int>(std::lround(params.control_dt / params.ball_dt)));
    std::vector<Vec3> warm_multipliers;

    int steps = static_cast<int>(std::ceil(duration / params.control_dt - 1e-9));
    for (int step = 0; step <= steps; ++step) {
        double t = step * params.control_dt;
        std::set<std::pair<std::string, std::string>> heated;
        for (const auto& plan : plans) active_channels(plan, t, params, heated);

        // First-order SMA thermal response toward the commanded state.
        for (const auto& key : heated)
            if (!level.count(key)) level[key] = 0.0;
        ActuationState act;
        for (auto& [key, a] : level) {
            bool on = heated.count(key) != 0;
            double tau = on ? params.thermal.tau_heat : params.thermal.effective_tau_cool();
            double target = on ? 1.0 : 0.0;
            a = target + (a - target) * std::exp(-params.control_dt / tau);
            act.set(key.first, key.second, a);
        }

        SolveOptions so;
        so.warm_bond_multipliers = warm_multipliers;
        SolveReport solve = solve_equilibrium_inplace(lattice.modules, act, cs, so);
        if (!solve.converged) {
            so.penalty_rho = 1e5;
            solve = solve_equilibrium_inplace(lattice.modules, act, cs, so);
        }
        if (!solve.converged)
            throw Error("contact", "lattice equilibrium failed during manipulation (violation " +
                                       std::to_string(solve.max_violation) + ")");
        warm_multipliers.assign(solve.bond_multipliers.begin(), solve.bond_multipliers.end());
        mesh.refresh(lattice);
        if (params.on_control_step) params.on_control_step(t + params.control_dt, lattice);

        for (int sub = 0; sub < ball_substeps; ++sub) {
            for (auto& ball : balls) ball = ball_step(mesh, ball, params.ball_dt, params.ball);
            for (size_t i = 0; i < balls.size(); ++i)
                for (size_t j = i + 1; j < balls.size(); ++j)
                    report.min_separation = std::min(
                        report.min_separation, (balls[i].position - balls[j].position).norm());
        }
        for (size_t i = 0; i < balls.size(); ++i)
            report.traces[i].push_back(
                {t + params.control_dt, balls[i].position, mesh.nearest_vertex(xy(balls[i].position))});
    }

    std::ostringstream detail;
    bool all = true;
    for (size_t i = 0; i < balls.size(); ++i) {
        if (balls[i].escaped) ++report.escapes;
        int goal = plans[i].path.empty() ? -1 : plans[i].path.back();
        bool ok = false;
        if (goal >= 0) {
            double dist = (xy(balls[i].position) - xy(mesh.vertices[static_cast<size_t>(goal)])).norm();
            double speed = balls[i].velocity.norm();
            ok = !balls[i].escaped && dist <= params.capture_distance &&
                 speed < params.capture_speed;
            detail << "ball " << i << ": node " << goal << " dist " << dist << " m speed " << speed
                   << " m/s" << (balls[i].escaped ? " (escaped)" : "") << "; ";
        }
        report.delivered[static_cast<size_t>(i)] = ok;
        all = all && ok;
    }
    report.success = all && report.escapes == 0;
    report.final_balls = std::move(balls);
    report.duration = (steps + 1) * params.control_dt;
    report.detail = detail.str();
    return report;
}

ManipulationReport execute_plan(LatticeState& lattice, const ManipulationPlan& plan,
                                const BallState& ball, const ManipulationParams& params) {
    return execute_plans(lattice, {plan}, {ball}, params);
}

// ---------------------------------------------------------------------------
// Multi-ball scheduling

std::vector<ManipulationPlan> schedule_multi_ball(
    const SurfaceMesh& mesh, const std::vector<std::pair<int, int>>& requests,
    const ManipulationParams& params) {
    std::set<int> starts;
    for (const auto& [from, to] : requests)
        if (!starts.insert(from).second)
            throw Error("invariant", "two balls share start node " + std::to_string(from));

    std::vector<ManipulationPlan> plans;
    for (const auto& [from, to] : requests) plans.push_back(plan_path(mesh, from, to));
    if (plans.size() <= 1) return plans;

    // Hop h of a plan with offset k occupies slot k+h with its endpoint pair;
    // two balls may not be mid-hop on overlapping or adjacent node sets.
    auto conflict = [&](const ManipulationPlan& pa, int ka, const ManipulationPlan& pb, int kb) {
        for (size_t ha = 0; ha < pa.hops.size(); ++ha)
            for (size_t hb = 0; hb < pb.hops.size(); ++hb) {
                if (ka + static_cast<int>(ha) != kb + static_cast<int>(hb)) continue;
                int ua = pa.hops[ha].from, va = pa.hops[ha].to;
                for (int x : {ua, va})
                    for (int y : {pb.hops[hb].from, pb.hops[hb].to})
                        if (x == y || mesh.adjacent(x, y)) return true;
            }
        return false;
    };

    int total_hops = 0;
    for (const auto& p : plans) total_hops += static_cast<int>(p.hops.size());
    int max_offset = total_hops + static_cast<int>(plans.size());

    std::vector<int> offsets(plans.size(), 0);
    // Exhaustive search in lexicographic order; the first ball starts at zero.
    std::function<bool(size_t)> assign = [&](size_t i) {
        if (i == plans.size()) return true;
        for (int k = 0; k <= max_offset; ++k) {
            bool ok = true;
            for (size_t j = 0; j < i && ok; ++j)
                ok = !conflict(plans[i], k, plans[j], offsets[j]);
            if (ok) {
                offsets[i] = k;
                if (assign(i + 1)) return true;
            }
        }
        return false;
    };
    offsets[0] = 0;  // the first ball anchors the timeline
    if (!assign(1))
        throw Error("infeasible", "no hop-aligned start offsets keep the balls separated");
    for (size_t i = 0; i < plans.size(); ++i)
        plans[i].start_offset = offsets[i] * params.hop_duration();
    return plans;
}

}  // namespace softlat
