#include "softlat/assembly.hpp"

#include "softlat/gait.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace softlat {

namespace {

constexpr double kSide = 0.044;  // module foot-triangle side, m

struct UnionFind {
    std::vector<int> parent;

    explicit UnionFind(size_t n) : parent(n) {
        for (size_t i = 0; i < n; ++i) parent[i] = static_cast<int>(i);
    }
    int find(int x) {
        while (parent[static_cast<size_t>(x)] != x) {
            parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            x = parent[static_cast<size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
    }
};

struct SiteIndex {
    std::vector<MagnetSite> sites;
    std::map<NodeRef, int> by_node;

    int index_of(const NodeRef& r) const {
        auto it = by_node.find(r);
        return it == by_node.end() ? -1 : it->second;
    }
};

SiteIndex site_index(const LatticeState& lattice) {
    SiteIndex si;
    si.sites = lattice.magnet_sites();
    for (size_t i = 0; i < si.sites.size(); ++i) si.by_node[si.sites[i].node] = static_cast<int>(i);
    return si;
}

UnionFind bond_clusters(const LatticeState& lattice, const SiteIndex& si) {
    UnionFind uf(si.sites.size());
    for (const auto& b : lattice.bonds) {
        int ia = si.index_of(b.a);
        int ib = si.index_of(b.b);
        if (ia < 0 || ib < 0) throw Error("invariant", "bond references a node without a magnet");
        uf.unite(ia, ib);
    }
    return uf;
}

/// Shared coincidence clusters per unordered module pair.
std::map<std::pair<int, int>, int> shared_cluster_counts(const LatticeState& lattice,
                                                         const SiteIndex& si, UnionFind& uf) {
    std::map<int, std::set<int>> cluster_modules;  // root -> module indices
    for (size_t i = 0; i < si.sites.size(); ++i)
        cluster_modules[uf.find(static_cast<int>(i))].insert(si.sites[i].node.module);
    std::map<std::pair<int, int>, int> counts;
    for (const auto& [root, mods] : cluster_modules) {
        (void)root;
        for (auto it = mods.begin(); it != mods.end(); ++it)
            for (auto jt = std::next(it); jt != mods.end(); ++jt) ++counts[{*it, *jt}];
    }
    return counts;
}

void refresh_bond_states(LatticeState& lattice) {
    SiteIndex si = site_index(lattice);
    UnionFind uf = bond_clusters(lattice, si);
    auto counts = shared_cluster_counts(lattice, si, uf);
    for (auto& b : lattice.bonds) {
        std::pair<int, int> key{std::min(b.a.module, b.b.module), std::max(b.a.module, b.b.module)};
        auto it = counts.find(key);
        // Two bottom + two top magnets held together complete a face bond.
        b.state = (it != counts.end() && it->second >= 4) ? BondState::full : BondState::partial_set;
    }
}

const Vec3& node_position(const LatticeState& lattice, const NodeRef& r) {
    return lattice.modules[static_cast<size_t>(r.module)]
        .node_positions[static_cast<size_t>(r.node)];
}

int shared_clusters_between(const LatticeState& lattice, int module_a, int module_b) {
    SiteIndex si = site_index(lattice);
    UnionFind uf = bond_clusters(lattice, si);
    auto counts = shared_cluster_counts(lattice, si, uf);
    auto it = counts.find({std::min(module_a, module_b), std::max(module_a, module_b)});
    return it == counts.end() ? 0 : it->second;
}

// ---------------------------------------------------------------------------
// Placement

/// Pose mapping the template feet onto the ground triangle (pa, pb, pc),
/// which must be congruent to the template and listed in matching (clockwise
/// from above) order.
RigidTransform pose_feet_on(const ModuleSpec& spec, const Vec2& pa, const Vec2& pb, const Vec2& pc) {
    Vec3 fa = spec.node("foot_a").position;
    Vec3 fb = spec.node("foot_b").position;
    Vec3 fc = spec.node("foot_c").position;
    Vec2 ta(fa.x(), fa.y()), tb(fb.x(), fb.y()), tc(fc.x(), fc.y());
    Vec2 u = tb - ta, v = pb - pa;
    if (std::abs(u.norm() - v.norm()) > 1e-9)
        throw Error("invariant", "target triangle is not congruent to the module feet");
    double yaw = std::atan2(v.y(), v.x()) - std::atan2(u.y(), u.x());
    RigidTransform tf = RigidTransform::yaw_translate(yaw, Vec3::Zero());
    Vec3 ra = tf.rotation * fa;
    tf.translation = Vec3(pa.x() - ra.x(), pa.y() - ra.y(), 0.0);
    Vec3 mapped_c = tf.apply(fc);
    if ((Vec2(mapped_c.x(), mapped_c.y()) - pc).norm() > 1e-9)
        throw Error("invariant", "target triangle winds against the module feet");
    return tf;
}

RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner) {
    RigidTransform tf;
    tf.rotation = outer.rotation * inner.rotation;
    tf.translation = outer.rotation * inner.translation + outer.translation;
    return tf;
}

/// Adds one module over the ground triangle (a, b, c); vertex order is fixed
/// up to match the template's winding, so only the vertex set matters except
/// that `a` always receives foot_a (the trailing limb).
void place_triangle(LatticeState& lattice, ModuleSpecPtr spec, const RigidTransform& frame, Vec2 a,
                    Vec2 b, Vec2 c, const std::string& module_id) {
    Vec2 e1 = b - a, e2 = c - b;
    if (e1.x() * e2.y() - e1.y() * e2.x() > 0) std::swap(b, c);  // enforce clockwise
    RigidTransform local = pose_feet_on(*spec, a, b, c);
    lattice.modules.push_back(build_module(spec, compose(frame, local), module_id));
}

void settle(LatticeState& lattice, const ActuationState& act = {}) {
    SolveReport rep = solve_equilibrium_inplace(lattice.modules, act, lattice.constraints());
    if (!rep.converged) {
        // Fresh multi-millimetre bond gaps occasionally stall a hair above
        // the feasibility tolerance; continue with a stiffer penalty.
        SolveOptions so;
        so.penalty_rho = 1e5;
        rep = solve_equilibrium_inplace(lattice.modules, act, lattice.constraints(), so);
    }
    if (!rep.converged)
        throw Error("invariant", "lattice failed to settle (violation " +
                                     std::to_string(rep.max_violation) + ", iters " +
                                     std::to_string(rep.iterations) + ")");
}

// ---------------------------------------------------------------------------
// Protocol driver: explicit first-order thermal state plus stick-slip
// marching, so activation levels stay continuous across approach, release and
// corrective stages.

using ChannelKey = std::pair<std::string, std::string>;  // module id, channel label

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

struct ProtocolDriver {
    LatticeState& lattice;
    double mu = 0.3;
    double capture_radius = 0.004;
    ThermalParams thermal;
    double t = 0;
    std::map<ChannelKey, double> level;
    AttachmentReport* report = nullptr;

    explicit ProtocolDriver(LatticeState& l) : lattice(l) {}

    void register_module(const ModuleState& st) {
        for (const auto& ch : st.spec->sma_channels) level[{st.module_id, lower(ch.label)}] = 0.0;
    }

    ActuationState actuation() const {
        ActuationState act;
        for (const auto& [key, a] : level) act.set(key.first, key.second, std::clamp(a, 0.0, 1.0));
        return act;
    }

    double activation(const std::string& module_id, const std::string& label) const {
        auto it = level.find({module_id, lower(label)});
        return it == level.end() ? 0.0 : it->second;
    }

    void advance_thermal(double dt, const std::set<ChannelKey>& heated) {
        for (auto& [key, a] : level) {
            if (heated.count(key))
                a = 1.0 + (a - 1.0) * std::exp(-dt / thermal.tau_heat);
            else
                a *= std::exp(-dt / thermal.effective_tau_cool());
        }
    }

    /// One stick-slip transition of dt seconds; returns newly formed bonds.
    std::vector<Bond> step(double dt, const std::set<ChannelKey>& heated,
                           const std::vector<NodeRef>& blocked) {
        ActuationState before = actuation();
        advance_thermal(dt, heated);
        ActuationState after = actuation();
        StickSlipOptions so;
        so.mu = mu;
        for (const auto& b : lattice.bonds) so.extra_constraints.bonds.push_back({b.a, b.b});
        stick_slip_step(lattice.modules, before, after, so);
        t += dt;
        DetectBondsOptions d;
        d.capture_radius = capture_radius;
        d.time = t;
        d.blocked_sites = blocked;
        std::vector<Bond> nb = detect_bonds(lattice, d);
        if (report)
            report->bond_sequence.insert(report->bond_sequence.end(), nb.begin(), nb.end());
        return nb;
    }

    /// Marches `duration` seconds in steps of at most `dt`; stops early (and
    /// returns true) once `stop` holds after a step.
    bool march(double duration, double dt, const std::set<ChannelKey>& heated,
               const std::function<std::vector<NodeRef>()>& blocked,
               const std::function<bool()>& stop) {
        int n = std::max(1, static_cast<int>(std::ceil(duration / dt)));
        for (int i = 0; i < n; ++i) {
            step(duration / n, heated, blocked ? blocked() : std::vector<NodeRef>{});
            if (stop && stop()) return true;
        }
        return false;
    }
};

std::vector<NodeRef> arm_sites_of(const LatticeState& lattice, int module_index) {
    std::vector<NodeRef> out;
    const auto& st = lattice.modules[static_cast<size_t>(module_index)];
    for (const auto& site : st.spec->magnet_sites) {
        int n = st.spec->node_index(site.node);
        if (st.spec->node_templates[static_cast<size_t>(n)].role == NodeRole::arm)
            out.push_back({module_index, n});
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// LatticeState

int LatticeState::module_index(const std::string& module_id) const {
    for (size_t i = 0; i < modules.size(); ++i)
        if (modules[i].module_id == module_id) return static_cast<int>(i);
    return -1;
}

std::vector<MagnetSite> LatticeState::magnet_sites() const {
    std::vector<MagnetSite> out;
    for (size_t m = 0; m < modules.size(); ++m) {
        const auto& spec = *modules[m].spec;
        for (const auto& site : spec.magnet_sites) {
            int n = spec.node_index(site.node);
            if (n < 0) throw Error("invariant", "magnet site references unknown node");
            out.push_back({{static_cast<int>(m), n}, site.polarity, spec.magnet_loop});
        }
    }
    return out;
}

ConstraintSet LatticeState::constraints() const {
    ConstraintSet cs;
    for (size_t m = 0; m < modules.size(); ++m)
        for (size_t n = 0; n < modules[m].node_positions.size(); ++n)
            cs.ground.push_back({{static_cast<int>(m), static_cast<int>(n)}});
    for (const auto& b : bonds) cs.bonds.push_back({b.a, b.b});
    return cs;
}

bool LatticeState::bonded(const NodeRef& a, const NodeRef& b) const {
    for (const auto& bond : bonds)
        if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a)) return true;
    return false;
}

bool LatticeState::same_cluster(const NodeRef& a, const NodeRef& b) const {
    if (a == b) return true;
    SiteIndex si = site_index(*this);
    int ia = si.index_of(a), ib = si.index_of(b);
    if (ia < 0 || ib < 0) return false;
    UnionFind uf = bond_clusters(*this, si);
    return uf.find(ia) == uf.find(ib);
}

void LatticeState::validate() const {
    SiteIndex si = site_index(*this);
    for (const auto& b : bonds) {
        if (b.a.module < 0 || b.a.module >= static_cast<int>(modules.size()) || b.b.module < 0 ||
            b.b.module >= static_cast<int>(modules.size()))
            throw Error("invariant", "bond references a module outside the lattice");
        if (b.a.module == b.b.module)
            throw Error("invariant", "bond joins two sites of the same module");
        if (si.index_of(b.a) < 0 || si.index_of(b.b) < 0)
            throw Error("invariant", "bond endpoint carries no magnet");
    }
}

bool bond_compatible(const MagnetSite& a, const MagnetSite& b) {
    if (a.node.module == b.node.module)
        throw Error("invariant", "bond compatibility is defined between distinct modules");
    // Both polarity loops running the same way means every facing pair meets
    // head-to-tail, whichever side the modules approach from.
    return a.orientation == b.orientation;
}

std::vector<Bond> detect_bonds(LatticeState& lattice, const DetectBondsOptions& opts) {
    if (!(opts.capture_radius > 0)) throw Error("invariant", "capture radius must be > 0");
    SiteIndex si = site_index(lattice);
    UnionFind uf = bond_clusters(lattice, si);
    std::set<NodeRef> blocked(opts.blocked_sites.begin(), opts.blocked_sites.end());

    std::vector<Bond> formed;
    for (size_t i = 0; i < si.sites.size(); ++i) {
        if (blocked.count(si.sites[i].node)) continue;
        for (size_t j = i + 1; j < si.sites.size(); ++j) {
            if (blocked.count(si.sites[j].node)) continue;
            if (si.sites[i].node.module == si.sites[j].node.module) continue;
            if (!bond_compatible(si.sites[i], si.sites[j])) continue;
            double dist =
                (node_position(lattice, si.sites[i].node) - node_position(lattice, si.sites[j].node))
                    .norm();
            if (dist > opts.capture_radius) continue;
            // Already coincident through earlier bonds: a new constraint would
            // be redundant, so each magnet cluster keeps a spanning tree only.
            if (uf.find(static_cast<int>(i)) == uf.find(static_cast<int>(j))) continue;
            Bond b;
            b.a = si.sites[i].node;
            b.b = si.sites[j].node;
            b.formation_time = opts.time;
            formed.push_back(b);
            lattice.bonds.push_back(b);
            uf.unite(static_cast<int>(i), static_cast<int>(j));
        }
    }
    if (!formed.empty()) refresh_bond_states(lattice);
    return formed;
}

TopNodeGraph top_node_graph(const LatticeState& lattice) {
    SiteIndex si = site_index(lattice);
    UnionFind uf = bond_clusters(lattice, si);

    std::map<int, std::vector<NodeRef>> cluster_arms;  // root -> arm members
    for (size_t i = 0; i < si.sites.size(); ++i) {
        const auto& st = lattice.modules[static_cast<size_t>(si.sites[i].node.module)];
        if (st.spec->node_templates[static_cast<size_t>(si.sites[i].node.node)].role ==
            NodeRole::arm)
            cluster_arms[uf.find(static_cast<int>(i))].push_back(si.sites[i].node);
    }

    TopNodeGraph graph;
    std::vector<std::set<int>> node_modules;
    for (const auto& [root, arms] : cluster_arms) {
        (void)root;
        if (arms.size() < 3) continue;
        TopNode tn;
        tn.arms = arms;
        for (const auto& r : arms) tn.position += node_position(lattice, r);
        tn.position /= static_cast<double>(arms.size());
        std::set<int> mods;
        for (const auto& r : arms) mods.insert(r.module);
        node_modules.push_back(std::move(mods));
        graph.nodes.push_back(std::move(tn));
    }

    for (size_t i = 0; i < graph.nodes.size(); ++i)
        for (size_t j = i + 1; j < graph.nodes.size(); ++j) {
            int shared = 0;
            for (int m : node_modules[i]) shared += node_modules[j].count(m) ? 1 : 0;
            // Two modules spanning both junctions are the two faces flanking
            // the connecting valley; one alone is just a corner touch.
            if (shared >= 2)
                graph.edges.push_back({static_cast<int>(i), static_cast<int>(j)});
        }
    return graph;
}

bool TopNodeGraph::connected() const {
    if (nodes.empty()) return false;
    std::vector<char> seen(nodes.size(), 0);
    std::vector<int> queue{0};
    seen[0] = 1;
    while (!queue.empty()) {
        int cur = queue.back();
        queue.pop_back();
        for (const auto& [a, b] : edges) {
            int other = a == cur ? b : (b == cur ? a : -1);
            if (other >= 0 && !seen[static_cast<size_t>(other)]) {
                seen[static_cast<size_t>(other)] = 1;
                queue.push_back(other);
            }
        }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
}

// ---------------------------------------------------------------------------
// Builders

LatticeState single_module_lattice(ModuleSpecPtr spec, const RigidTransform& pose,
                                   const std::string& module_id) {
    LatticeState lattice;
    lattice.modules.push_back(build_module(spec, pose, module_id));
    return lattice;
}

LatticeState build_unit(ModuleSpecPtr spec, const RigidTransform& pose,
                        const std::string& id_prefix) {
    // Half-hexagon fan: three triangles sharing the centre vertex, rim arc
    // opening toward +x of the unit frame. Every module's trailing foot_a sits
    // on the centre so the middle module's heading is the unit heading.
    const double s = kSide;
    Vec2 v(0, 0);
    auto rim = [&](int k) {
        double ang = (-90.0 + 60.0 * k) * M_PI / 180.0;
        return Vec2(s * std::cos(ang), s * std::sin(ang));
    };
    LatticeState lattice;
    place_triangle(lattice, spec, pose, v, rim(0), rim(1), id_prefix + "R");
    place_triangle(lattice, spec, pose, v, rim(1), rim(2), id_prefix + "M");
    place_triangle(lattice, spec, pose, v, rim(2), rim(3), id_prefix + "L");
    detect_bonds(lattice);
    settle(lattice);
    return lattice;
}

LatticeState build_row_lattice(ModuleSpecPtr spec) {
    // A full rosette around the middle junction plus a two-module outer
    // extension at each end junction: three collinear junctions with >= 3
    // arms each (6 / 4 / 4) and no other arm cluster reaching three.
    const double s = kSide;
    LatticeState lattice;
    RigidTransform frame = RigidTransform::identity();
    auto hexv = [&](int k) {
        double ang = 60.0 * k * M_PI / 180.0;
        return Vec2(s * std::cos(ang), s * std::sin(ang));
    };
    Vec2 v1(0, 0);
    int id = 0;
    auto name = [&]() { return "m" + std::to_string(id++); };
    for (int k = 0; k < 6; ++k) place_triangle(lattice, spec, frame, v1, hexv(k), hexv((k + 1) % 6), name());
    for (double sign : {1.0, -1.0}) {
        Vec2 end(sign * s, 0);                      // hexagon vertex on the row axis
        Vec2 w = end + Vec2(sign * s, 0);           // outermost vertex
        Vec2 p = end + Vec2(sign * s / 2, s * std::sqrt(3.0) / 2);
        Vec2 q = end + Vec2(sign * s / 2, -s * std::sqrt(3.0) / 2);
        place_triangle(lattice, spec, frame, end, p, w, name());
        place_triangle(lattice, spec, frame, end, q, w, name());
    }
    detect_bonds(lattice);
    settle(lattice);
    return lattice;
}

LatticeState build_grid_lattice(ModuleSpecPtr spec) {
    // Minimal triangle cover giving a 3x3 rhombus of junctions at least three
    // arms each: the eight triangles inside the rhombus plus one extra
    // triangle per rhombus corner or edge vertex that would otherwise fall
    // short.
    const double s = kSide;
    auto V = [&](int i, int j) {
        return Vec2(s * i + s * 0.5 * j, s * std::sqrt(3.0) / 2 * j);
    };
    LatticeState lattice;
    RigidTransform frame = RigidTransform::identity();
    int id = 0;
    auto up = [&](int i, int j) {
        place_triangle(lattice, spec, frame, V(i, j), V(i + 1, j), V(i, j + 1),
                       "m" + std::to_string(id++));
    };
    auto down = [&](int i, int j) {
        place_triangle(lattice, spec, frame, V(i + 1, j), V(i + 1, j + 1), V(i, j + 1),
                       "m" + std::to_string(id++));
    };
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            up(i, j);
            down(i, j);
        }
    down(0, -1);
    down(-1, 0);
    down(1, -1);
    up(2, 0);
    down(-1, 1);
    up(0, 2);
    up(2, 1);
    up(1, 2);
    detect_bonds(lattice);
    settle(lattice);
    return lattice;
}

std::vector<int> place_unit_for_docking(LatticeState& lattice, ModuleSpecPtr spec,
                                        const Vec3& edge_a, const Vec3& edge_b,
                                        const Vec3& outward, double gap, double offset_deg,
                                        const std::string& id_prefix) {
    Vec2 a(edge_a.x(), edge_a.y()), b(edge_b.x(), edge_b.y());
    Vec2 along = (b - a).normalized();
    Vec2 n(outward.x(), outward.y());
    n -= along * n.dot(along);  // outward must be perpendicular to the edge
    if (n.norm() < 1e-9) throw Error("invariant", "outward direction lies along the edge");
    n.normalize();

    // Unit frame: centre at the origin, leading rim edge centred on (r, 0)
    // with r the rim circumradius; docked, that edge coincides with (a, b).
    const double r_mid = kSide * std::sqrt(3.0) / 2.0;
    double yaw = std::atan2(-n.y(), -n.x()) + offset_deg * M_PI / 180.0;
    Vec2 mid = (a + b) / 2.0 + n * gap;
    RigidTransform pose = RigidTransform::yaw_translate(yaw, Vec3::Zero());
    Vec3 m_local(r_mid, 0, 0);
    Vec3 shifted = pose.rotation * m_local;
    pose.translation = Vec3(mid.x() - shifted.x(), mid.y() - shifted.y(), 0.0);

    LatticeState unit = build_unit(spec, pose, id_prefix);
    std::vector<int> indices;
    int base = static_cast<int>(lattice.modules.size());
    for (auto& st : unit.modules) {
        indices.push_back(static_cast<int>(lattice.modules.size()));
        lattice.modules.push_back(std::move(st));
    }
    for (auto& bond : unit.bonds) {
        bond.a.module += base;
        bond.b.module += base;
        lattice.bonds.push_back(bond);
    }
    refresh_bond_states(lattice);
    return indices;
}

// ---------------------------------------------------------------------------
// Attachment protocols

std::string serialize_attachment_report(const AttachmentReport& report) {
    nlohmann::ordered_json j;
    j["success"] = report.success;
    j["approaches"] = report.approaches;
    j["cycles"] = report.cycles;
    j["detail"] = report.detail;
    j["bonds"] = nlohmann::ordered_json::array();
    for (const auto& b : report.bond_sequence)
        j["bonds"].push_back({{"a", {b.a.module, b.a.node}},
                              {"b", {b.b.module, b.b.node}},
                              {"time", b.formation_time},
                              {"full", b.state == BondState::full}});
    return j.dump(2) + "\n";
}

AttachmentReport run_attachment_protocol(LatticeState& lattice, int active_index,
                                         int passive_index, double alignment_angle_deg,
                                         std::uint32_t seed, const AttachmentParams& params) {
    if (active_index < 0 || active_index >= static_cast<int>(lattice.modules.size()) ||
        passive_index < 0 || passive_index >= static_cast<int>(lattice.modules.size()) ||
        active_index == passive_index)
        throw Error("invariant", "attachment needs two distinct modules of the lattice");

    const std::string active_id = lattice.modules[static_cast<size_t>(active_index)].module_id;
    const std::string passive_id = lattice.modules[static_cast<size_t>(passive_index)].module_id;

    AttachmentReport rep;
    std::ostringstream detail;
    detail << "alignment " << alignment_angle_deg << " deg;";

    ProtocolDriver drv(lattice);
    drv.mu = params.mu;
    drv.capture_radius = params.capture_radius;
    drv.report = &rep;
    drv.register_module(lattice.modules[static_cast<size_t>(active_index)]);
    drv.register_module(lattice.modules[static_cast<size_t>(passive_index)]);

    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> unit_noise(-1.0, 1.0);

    // The passive module leans away from the approach by holding its trailing
    // vertical contracted: bottom magnets lead, top magnets stay out of reach.
    const ChannelKey lean{passive_id, "va"};
    auto blocked = [&]() {
        return drv.level.at(lean) >= params.lean_block_threshold
                   ? arm_sites_of(lattice, passive_index)
                   : std::vector<NodeRef>{};
    };
    auto pair_bonded = [&]() {
        for (const auto& b : lattice.bonds) {
            std::pair<int, int> mods{std::min(b.a.module, b.b.module),
                                     std::max(b.a.module, b.b.module)};
            if (mods == std::pair<int, int>{std::min(active_index, passive_index),
                                            std::max(active_index, passive_index)})
                return true;
        }
        return false;
    };
    auto full_bond = [&]() {
        return shared_clusters_between(lattice, active_index, passive_index) >= 4;
    };

    GaitSchedule approach_gait = builtin_gait("combined");
    auto heated_for = [&](const GaitPhase& phase) {
        std::set<ChannelKey> heated{lean};
        for (int c : phase.on_channels) {
            const auto& ref = approach_gait.channels[static_cast<size_t>(c)];
            heated.insert({ref.module_scope.empty() ? active_id : ref.module_scope,
                           lower(ref.label)});
        }
        return heated;
    };

    // Rigid in-plane adjustment of the active module about its foot centroid.
    auto adjust_active = [&](double dyaw, double dx, double dy) {
        auto& st = lattice.modules[static_cast<size_t>(active_index)];
        Vec3 centre = Vec3::Zero();
        int feet = 0;
        for (size_t n = 0; n < st.node_positions.size(); ++n)
            if (st.spec->node_templates[n].role == NodeRole::foot) {
                centre += st.node_positions[n];
                ++feet;
            }
        centre /= static_cast<double>(feet);
        centre.z() = 0;
        Eigen::Matrix3d rot = Eigen::AngleAxisd(dyaw, Vec3::UnitZ()).toRotationMatrix();
        for (auto& p : st.node_positions) p = rot * (p - centre) + centre + Vec3(dx, dy, 0);
        return centre;
    };

    // Pivot alignment: with one magnet pair holding, hardware magnets torque
    // the modules face-to-face. Modeled as rigid yaw steps of the active
    // module about the bonded contact until the next compatible pair captures.
    auto pivot_align = [&]() {
        const double step_rad = 0.05;
        double previous_best = 1e300;
        for (int step = 0; step < 80; ++step) {
            if (full_bond()) return true;
            SiteIndex si = site_index(lattice);
            UnionFind uf = bond_clusters(lattice, si);
            // Bonded contact(s) between the pair, lowest first (feet).
            std::vector<Vec3> contacts;
            for (const auto& b : lattice.bonds) {
                if (std::min(b.a.module, b.b.module) != std::min(active_index, passive_index) ||
                    std::max(b.a.module, b.b.module) != std::max(active_index, passive_index))
                    continue;
                Vec3 p = node_position(lattice, b.a);
                bool fresh = true;
                for (const auto& q : contacts)
                    if ((Vec2(q.x(), q.y()) - Vec2(p.x(), p.y())).norm() < 1e-3) fresh = false;
                if (fresh) contacts.push_back(p);
            }
            if (contacts.empty()) return false;
            if (contacts.size() > 1) {  // two separate contacts: just settle in
                settle(lattice, drv.actuation());
                DetectBondsOptions d{params.capture_radius, drv.t, blocked()};
                detect_bonds(lattice, d);
                return full_bond();
            }
            std::sort(contacts.begin(), contacts.end(),
                      [](const Vec3& a, const Vec3& b) { return a.z() < b.z(); });
            Vec2 pivot(contacts.front().x(), contacts.front().y());

            // Nearest free compatible foot pair whose pivot radii can meet.
            double best = 1e300;
            Vec3 site_a = Vec3::Zero(), site_p = Vec3::Zero();
            for (size_t i = 0; i < si.sites.size(); ++i)
                for (size_t j = 0; j < si.sites.size(); ++j) {
                    if (si.sites[i].node.module != active_index ||
                        si.sites[j].node.module != passive_index)
                        continue;
                    if (uf.find(static_cast<int>(i)) == uf.find(static_cast<int>(j))) continue;
                    Vec3 pa = node_position(lattice, si.sites[i].node);
                    Vec3 pp = node_position(lattice, si.sites[j].node);
                    double ra = (Vec2(pa.x(), pa.y()) - pivot).norm();
                    double rp = (Vec2(pp.x(), pp.y()) - pivot).norm();
                    if (std::abs(ra - rp) > 2.0 * params.capture_radius) continue;
                    double d = (pa - pp).norm();
                    if (d < best) {
                        best = d;
                        site_a = pa;
                        site_p = pp;
                    }
                }
            if (best > 1e299) return false;
            if (best >= previous_best - 1e-9) return false;  // not closing: give up
            previous_best = best;

            auto rotated_distance = [&](double ang) {
                Eigen::Matrix3d rot = Eigen::AngleAxisd(ang, Vec3::UnitZ()).toRotationMatrix();
                Vec3 centre(pivot.x(), pivot.y(), 0);
                return (rot * (site_a - centre) + centre - site_p).norm();
            };
            double ang = rotated_distance(step_rad) <= rotated_distance(-step_rad) ? step_rad
                                                                                   : -step_rad;
            Eigen::Matrix3d rot = Eigen::AngleAxisd(ang, Vec3::UnitZ()).toRotationMatrix();
            Vec3 centre(pivot.x(), pivot.y(), 0);
            auto& st = lattice.modules[static_cast<size_t>(active_index)];
            for (auto& p : st.node_positions) p = rot * (p - centre) + centre;
            drv.t += 0.4;
            DetectBondsOptions d{params.capture_radius, drv.t, blocked()};
            std::vector<Bond> nb = detect_bonds(lattice, d);
            if (!nb.empty()) {
                rep.bond_sequence.insert(rep.bond_sequence.end(), nb.begin(), nb.end());
                settle(lattice, drv.actuation());
                DetectBondsOptions d2{params.capture_radius, drv.t, blocked()};
                nb = detect_bonds(lattice, d2);
                rep.bond_sequence.insert(rep.bond_sequence.end(), nb.begin(), nb.end());
                previous_best = 1e300;
            }
        }
        return full_bond();
    };

    for (int approach = 0; approach < params.max_approaches && !rep.success; ++approach) {
        ++rep.approaches;
        try {
            bool captured = pair_bonded();
            for (int cycle = 0; cycle < params.max_cycles_per_approach && !captured; ++cycle) {
                ++rep.cycles;
                // Placement noise models hand-positioning scatter; drawn every
                // cycle so the random stream is independent of the trajectory,
                // applied only while the pair is still free.
                double dx = unit_noise(rng) * params.noise_position;
                double dy = unit_noise(rng) * params.noise_position;
                double dyaw = unit_noise(rng) * params.noise_heading_deg * M_PI / 180.0;
                if (!pair_bonded()) {
                    // Steer toward the passive module (the operator drives the
                    // active module at its target), then apply the noise.
                    const auto& act_st = lattice.modules[static_cast<size_t>(active_index)];
                    const auto& pas_st = lattice.modules[static_cast<size_t>(passive_index)];
                    auto foot_centroid = [](const ModuleState& st) {
                        Vec3 c = Vec3::Zero();
                        int feet = 0;
                        for (size_t n = 0; n < st.node_positions.size(); ++n)
                            if (st.spec->node_templates[n].role == NodeRole::foot) {
                                c += st.node_positions[n];
                                ++feet;
                            }
                        return Vec3(c / static_cast<double>(feet));
                    };
                    Vec3 from = foot_centroid(act_st);
                    Vec3 target = foot_centroid(pas_st);
                    double desired = std::atan2(target.y() - from.y(), target.x() - from.x());
                    double heading = module_heading(act_st);
                    double steer = desired - heading;
                    while (steer > M_PI) steer -= 2 * M_PI;
                    while (steer < -M_PI) steer += 2 * M_PI;
                    steer = std::clamp(steer, -0.3, 0.3);
                    adjust_active(steer + dyaw, dx, dy);
                }
                for (const auto& phase : approach_gait.phases) {
                    int substeps = phase.duration <= 2.0 ? 2 : 3;
                    std::set<ChannelKey> heated = heated_for(phase);
                    for (int s = 0; s < substeps && !captured; ++s) {
                        drv.step(phase.duration / substeps, heated, blocked());
                        captured = pair_bonded();
                    }
                    if (captured) break;
                }
            }
            if (!captured) {
                detail << " approach " << approach + 1 << ": no capture;";
                break;
            }
            detail << " approach " << approach + 1 << ": capture at t=" << drv.t << "s;";

            // Release everything; the lean decays, the top magnets unblock and the
            // upper pair can follow the bottom bond home.
            if (drv.march(12.0, 1.5, {}, blocked, full_bond)) {
                detail << " full bond during release;";
                rep.success = true;
                break;
            }

            // Corrective routine: pivot the modules into face alignment about the
            // held magnet, then contract the verticals and facing horizontals to
            // squeeze the remaining pairs home, then release.
            if (pivot_align()) {
                detail << " full bond after pivot alignment;";
                rep.success = true;
                break;
            }
            std::set<ChannelKey> verticals{{active_id, "vb"}, {active_id, "vc"},
                                           {passive_id, "vb"}, {passive_id, "vc"}};
            std::set<ChannelKey> pinch = verticals;
            pinch.insert({active_id, "hbc"});
            pinch.insert({passive_id, "hbc"});
            bool full = drv.march(4.0, 0.5, verticals, blocked, full_bond) ||
                        drv.march(4.0, 0.5, pinch, blocked, full_bond) ||
                        drv.march(8.0, 1.5, {}, blocked, full_bond);
            if (full) {
                detail << " full bond after corrective;";
                rep.success = true;
            } else {
                detail << " corrective incomplete;";
            }
        } catch (const Error& e) {
            // An unresolvable wedged pose counts as a failed attempt, not a
            // caller-visible fault: the hardware analogue is picking the
            // module up and trying again.
            detail << " approach " << approach + 1 << ": aborted (" << e.what() << ");";
            break;
        }
    }

    if (rep.success) settle(lattice, drv.actuation());
    rep.detail = detail.str();
    for (auto& b : rep.bond_sequence)
        for (const auto& cur : lattice.bonds)
            if (cur.a == b.a && cur.b == b.b) b.state = cur.state;
    return rep;
}

AttachmentReport run_attachment_protocol(double alignment_angle_deg, std::uint32_t seed,
                                         const AttachmentParams& params) {
    AttachmentParams p = params;
    if (!p.spec) p.spec = make_module_spec(150.0, 60.0, 0.004);
    double angle = alignment_angle_deg * M_PI / 180.0;

    LatticeState lattice;
    lattice.modules.push_back(
        build_module(p.spec, RigidTransform::yaw_translate(M_PI + angle, Vec3::Zero()), "passive"));
    double front_x = p.spec->node("foot_b").position.x();
    double tx = -(p.approach_gap + 2.0 * front_x);
    lattice.modules.push_back(
        build_module(p.spec, RigidTransform::translate(Vec3(tx, 0, 0)), "active"));
    return run_attachment_protocol(lattice, 1, 0, alignment_angle_deg, seed, p);
}

AttachmentReport run_unit_attachment(LatticeState& lattice, const std::vector<int>& unit_modules,
                                     std::uint32_t seed, const UnitAttachmentParams& params) {
    (void)seed;  // placement scatter is the caller's business for unit docking
    if (unit_modules.size() != 3)
        throw Error("invariant", "unit attachment drives exactly three modules");
    std::set<int> unit_set(unit_modules.begin(), unit_modules.end());
    for (int idx : unit_modules)
        if (idx < 0 || idx >= static_cast<int>(lattice.modules.size()))
            throw Error("invariant", "unit module index outside the lattice");
    if (static_cast<int>(lattice.modules.size()) < 4)
        throw Error("invariant", "nothing to attach the unit to");

    AttachmentReport rep;
    std::ostringstream detail;

    // Bind the walking gait's L/M/R scopes to the actual module ids.
    std::map<std::string, std::string> scope_to_id;
    for (int idx : unit_modules) {
        const std::string& id = lattice.modules[static_cast<size_t>(idx)].module_id;
        if (id.empty()) throw Error("invariant", "unit module has no id");
        scope_to_id[id.substr(id.size() - 1)] = id;
    }
    for (const char* scope : {"L", "M", "R"})
        if (!scope_to_id.count(scope))
            throw Error("invariant", std::string("unit is missing its '") + scope + "' module");

    ProtocolDriver drv(lattice);
    drv.mu = params.mu;
    drv.capture_radius = params.capture_radius;
    drv.report = &rep;
    for (int idx : unit_modules) drv.register_module(lattice.modules[static_cast<size_t>(idx)]);

    auto cross_bonded = [&]() {
        for (const auto& b : lattice.bonds)
            if (unit_set.count(b.a.module) != unit_set.count(b.b.module)) return true;
        return false;
    };
    auto full_bond = [&]() {
        SiteIndex si = site_index(lattice);
        UnionFind uf = bond_clusters(lattice, si);
        auto counts = shared_cluster_counts(lattice, si, uf);
        for (const auto& [pair, count] : counts)
            if (count >= 4 && unit_set.count(pair.first) != unit_set.count(pair.second))
                return true;
        return false;
    };

    GaitSchedule gait = builtin_gait("three_legged_race");
    auto heated_for = [&](const GaitPhase& phase) {
        std::set<ChannelKey> heated;
        for (int c : phase.on_channels) {
            const auto& ref = gait.channels[static_cast<size_t>(c)];
            heated.insert({scope_to_id.at(ref.module_scope), lower(ref.label)});
        }
        return heated;
    };

    // Feet lead: the unit's top magnets are blocked during the approach so the
    // first cross bond forms at ground level. Once the unit cools upright the
    // arms sit directly above the bonded feet and capture on their own.
    std::vector<NodeRef> blocked_arms;
    for (int idx : unit_modules)
        for (const auto& site : arm_sites_of(lattice, idx)) blocked_arms.push_back(site);

    bool captured = cross_bonded();
    for (int cycle = 0; cycle < params.max_cycles && !captured; ++cycle) {
        ++rep.cycles;
        for (const auto& phase : gait.phases) {
            int substeps = phase.duration <= 2.0 ? 2 : 3;
            std::set<ChannelKey> heated = heated_for(phase);
            for (int s = 0; s < substeps && !captured; ++s) {
                drv.step(phase.duration / substeps, heated, blocked_arms);
                captured = cross_bonded();
            }
            if (captured) break;
        }
    }
    if (!captured) {
        rep.detail = "no capture";
        return rep;
    }
    detail << "capture at t=" << drv.t << "s;";

    // Cool down; remaining pairs often follow the first bond in directly.
    rep.success = drv.march(10.0, 1.0, {}, nullptr, full_bond);
    if (rep.success) detail << " docked during release;";

    // Pivot recovery: rotate the unit rigidly about the bonded contact until
    // the nearest free magnet pair comes into capture range.
    for (int step = 0; step < params.max_pivot_steps && !rep.success; ++step) {
        SiteIndex si = site_index(lattice);
        UnionFind uf = bond_clusters(lattice, si);

        // Contact clusters joining the unit to the rest of the structure.
        std::map<int, std::pair<bool, bool>> cross;  // root -> (has unit, has other)
        for (size_t i = 0; i < si.sites.size(); ++i) {
            auto& flags = cross[uf.find(static_cast<int>(i))];
            (unit_set.count(si.sites[i].node.module) ? flags.first : flags.second) = true;
        }
        std::vector<Vec2> pivots;
        Vec3 pivot3 = Vec3::Zero();
        for (size_t i = 0; i < si.sites.size(); ++i) {
            int root = uf.find(static_cast<int>(i));
            if (!(cross[root].first && cross[root].second)) continue;
            if (root != static_cast<int>(i)) continue;  // one representative per cluster
            Vec3 p = node_position(lattice, si.sites[i].node);
            Vec2 xy(p.x(), p.y());
            bool fresh = true;
            for (const auto& q : pivots)
                if ((q - xy).norm() < 1e-3) fresh = false;
            if (fresh) {
                pivots.push_back(xy);
                pivot3 = p;
            }
        }
        if (pivots.size() != 1) break;  // nothing bonded, or already seated on two contacts
        Vec2 pivot = pivots.front();
        (void)pivot3;

        // Closest free compatible pair across the interface.
        double best = 1e300;
        Vec3 unit_site = Vec3::Zero(), other_site = Vec3::Zero();
        for (size_t i = 0; i < si.sites.size(); ++i)
            for (size_t j = i + 1; j < si.sites.size(); ++j) {
                if (unit_set.count(si.sites[i].node.module) ==
                    unit_set.count(si.sites[j].node.module))
                    continue;
                if (uf.find(static_cast<int>(i)) == uf.find(static_cast<int>(j))) continue;
                if (!bond_compatible(si.sites[i], si.sites[j])) continue;
                Vec3 pi = node_position(lattice, si.sites[i].node);
                Vec3 pj = node_position(lattice, si.sites[j].node);
                double d = (pi - pj).norm();
                if (d < best) {
                    best = d;
                    unit_site = unit_set.count(si.sites[i].node.module) ? pi : pj;
                    other_site = unit_set.count(si.sites[i].node.module) ? pj : pi;
                }
            }
        if (best > 1e299) break;

        auto rotated_distance = [&](double ang) {
            Eigen::Matrix3d rot = Eigen::AngleAxisd(ang, Vec3::UnitZ()).toRotationMatrix();
            Vec3 centre(pivot.x(), pivot.y(), 0);
            return (rot * (unit_site - centre) + centre - other_site).norm();
        };
        double ang = rotated_distance(params.pivot_step_rad) <=
                             rotated_distance(-params.pivot_step_rad)
                         ? params.pivot_step_rad
                         : -params.pivot_step_rad;
        Eigen::Matrix3d rot = Eigen::AngleAxisd(ang, Vec3::UnitZ()).toRotationMatrix();
        Vec3 centre(pivot.x(), pivot.y(), 0);
        for (int idx : unit_modules)
            for (auto& p : lattice.modules[static_cast<size_t>(idx)].node_positions)
                p = rot * (p - centre) + centre;

        DetectBondsOptions d;
        d.capture_radius = params.capture_radius;
        d.time = drv.t;
        if (!detect_bonds(lattice, d).empty()) {
            settle(lattice, drv.actuation());
            DetectBondsOptions d2 = d;
            detect_bonds(lattice, d2);
        }
        if (full_bond()) {
            rep.success = true;
            detail << " docked after pivot recovery (" << step + 1 << " steps);";
        }
    }

    if (rep.success) settle(lattice, drv.actuation());
    rep.detail = detail.str();
    return rep;
}

}  // namespace softlat
