#include "softlat/contact.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace softlat {

namespace {

struct Foot {
    NodeRef node;
    std::string label;
};

std::vector<Foot> collect_feet(const std::vector<ModuleState>& states) {
    std::vector<Foot> feet;
    for (size_t m = 0; m < states.size(); ++m) {
        const auto& spec = *states[m].spec;
        for (size_t n = 0; n < spec.node_templates.size(); ++n)
            if (spec.node_templates[n].role == NodeRole::foot)
                feet.push_back({{static_cast<int>(m), static_cast<int>(n)},
                                states[m].module_id + "/" + spec.node_templates[n].label});
    }
    std::sort(feet.begin(), feet.end(), [](const Foot& a, const Foot& b) { return a.label < b.label; });
    return feet;
}

Vec3 system_com(const std::vector<ModuleState>& states, double& total_mass) {
    Vec3 com = Vec3::Zero();
    total_mass = 0;
    for (const auto& st : states) {
        double m = st.spec->total_mass();
        com += m * st.center_of_mass();
        total_mass += m;
    }
    return com / total_mass;
}

Vec2 xy_of(const std::vector<ModuleState>& states, const NodeRef& r) {
    const Vec3& p = states[static_cast<size_t>(r.module)].node_positions[static_cast<size_t>(r.node)];
    return Vec2(p.x(), p.y());
}

double z_of(const std::vector<ModuleState>& states, const NodeRef& r) {
    return states[static_cast<size_t>(r.module)].node_positions[static_cast<size_t>(r.node)].z();
}

}  // namespace

ContactState support_forces(const std::vector<ModuleState>& states, double contact_z_tol) {
    auto feet = collect_feet(states);
    double mass = 0;
    Vec3 com = system_com(states, mass);
    double weight = mass * kGravity;

    ContactState out;
    std::vector<size_t> contact;  // indices into feet
    for (size_t i = 0; i < feet.size(); ++i) {
        FootContact fc;
        fc.node = feet[i].node;
        fc.label = feet[i].label;
        if (z_of(states, feet[i].node) <= contact_z_tol) {
            fc.mode = ContactMode::stuck;
            contact.push_back(i);
        } else {
            fc.mode = ContactMode::lifted;
        }
        out.feet.push_back(std::move(fc));
    }
    if (contact.empty()) throw Error("contact", "no feet in ground contact");

    // Minimum-norm normal forces subject to force balance and moment balance
    // about the center of mass; negative entries peeled off as lifted.
    std::vector<size_t> active = contact;
    Eigen::VectorXd sol;
    while (true) {
        int n = static_cast<int>(active.size());
        Eigen::MatrixXd A(3, n);
        for (int j = 0; j < n; ++j) {
            Vec2 p = xy_of(states, feet[active[static_cast<size_t>(j)]].node);
            A(0, j) = 1.0;
            A(1, j) = p.x() - com.x();
            A(2, j) = p.y() - com.y();
        }
        Eigen::Vector3d b(weight, 0, 0);
        sol = A.transpose() *
              (A * A.transpose()).completeOrthogonalDecomposition().pseudoInverse() * b;
        int worst = -1;
        double worst_val = -1e-12;
        for (int j = 0; j < n; ++j)
            if (sol[j] < worst_val) {
                worst_val = sol[j];
                worst = j;
            }
        if (worst < 0 || n <= 1) break;
        active.erase(active.begin() + worst);
    }
    double residual = 0;
    {
        double sum = 0;
        Vec2 moment = Vec2::Zero();
        for (size_t j = 0; j < active.size(); ++j) {
            double nf = std::max(0.0, sol[static_cast<int>(j)]);
            Vec2 p = xy_of(states, feet[active[j]].node);
            sum += nf;
            moment += nf * (p - Vec2(com.x(), com.y()));
            out.feet[active[j]].normal = nf;
        }
        residual = std::max(std::abs(sum - weight), moment.norm() / std::max(1e-9, weight));
    }
    for (auto& fc : out.feet)
        if (fc.normal <= 0 && fc.mode == ContactMode::stuck && z_of(states, fc.node) <= contact_z_tol) {
            bool was_active = false;
            for (size_t j : active)
                if (out.feet[j].label == fc.label) was_active = true;
            if (!was_active) fc.mode = ContactMode::lifted;
        }
    // CoM outside the support polygon: the clamped system cannot balance moments.
    out.tip_over = residual > 1e-6;
    return out;
}

std::pair<ContactState, StepMetrics> stick_slip_step(std::vector<ModuleState>& states,
                                                     const ActuationState& act_before,
                                                     const ActuationState& act_after,
                                                     const StickSlipOptions& opts) {
    act_before.validate(states);
    auto feet = collect_feet(states);
    size_t nf = feet.size();

    Vec2 fwd(opts.forward.x(), opts.forward.y());
    if (fwd.norm() < 1e-12) throw Error("invariant", "forward direction must have an xy component");
    fwd.normalize();

    std::vector<Vec2> start_xy(nf), anchor_xy(nf);
    std::vector<ContactMode> mode(nf);
    std::vector<double> normal(nf, 0.0);

    // Initial normals from the incoming equilibrium.
    ContactState initial = support_forces(states, opts.contact_z_tol);
    // With zero friction an anchor can never hold, and anchored intermediate
    // solves would drift the center of mass; go straight to free sliding.
    ContactMode contact_mode = opts.mu > 1e-12 ? ContactMode::stuck : ContactMode::sliding;
    for (size_t i = 0; i < nf; ++i) {
        start_xy[i] = anchor_xy[i] = xy_of(states, feet[i].node);
        mode[i] = z_of(states, feet[i].node) <= opts.contact_z_tol ? contact_mode
                                                                   : ContactMode::lifted;
        for (const auto& fc : initial.feet)
            if (fc.label == feet[i].label) normal[i] = fc.normal;
    }

    // Feet held coincident by bond constraints act as one physical contact:
    // their individual normal split is statically indeterminate (any split is
    // an equilibrium), so normals and friction limits are aggregated over the
    // coincidence cluster, where the bond-internal forces cancel.
    std::vector<int> parent(nf);
    for (size_t i = 0; i < nf; ++i) parent[i] = static_cast<int>(i);
    std::function<int(int)> find = [&](int x) {
        while (parent[static_cast<size_t>(x)] != x) {
            parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            x = parent[static_cast<size_t>(x)];
        }
        return x;
    };
    {
        std::map<NodeRef, int> foot_of;
        for (size_t i = 0; i < nf; ++i) foot_of[feet[i].node] = static_cast<int>(i);
        for (const auto& b : opts.extra_constraints.bonds) {
            auto ia = foot_of.find(b.a);
            auto ib = foot_of.find(b.b);
            if (ia == foot_of.end() || ib == foot_of.end()) continue;
            int ra = find(ia->second), rb = find(ib->second);
            if (ra != rb) parent[static_cast<size_t>(std::max(ra, rb))] = std::min(ra, rb);
        }

        // A freshly captured magnet pair enters with an open gap; anchoring
        // its feet would contradict the coincidence constraint (the snap
        // overcomes static friction), so the whole cluster starts sliding.
        for (const auto& b : opts.extra_constraints.bonds) {
            const Vec3& pa = states[static_cast<size_t>(b.a.module)]
                                 .node_positions[static_cast<size_t>(b.a.node)];
            const Vec3& pb = states[static_cast<size_t>(b.b.module)]
                                 .node_positions[static_cast<size_t>(b.b.node)];
            if ((pa - pb).norm() <= opts.contact_z_tol) continue;
            for (const NodeRef& end : {b.a, b.b}) {
                auto it = foot_of.find(end);
                if (it == foot_of.end()) continue;
                int root = find(it->second);
                for (size_t i = 0; i < nf; ++i)
                    if (find(static_cast<int>(i)) == root && mode[i] == ContactMode::stuck)
                        mode[i] = ContactMode::sliding;
            }
        }
    }

    // Ground applies to every node; bonds and other caller constraints ride along.
    ConstraintSet base = opts.extra_constraints;
    for (size_t m = 0; m < states.size(); ++m)
        for (size_t n = 0; n < states[m].node_positions.size(); ++n)
            base.ground.push_back({{static_cast<int>(m), static_cast<int>(n)}});

    SolveReport report;
    std::vector<ModuleState> solved;
    auto resolve = [&]() {
        ConstraintSet cs = base;
        SolveOptions so = opts.solver;
        for (size_t i = 0; i < nf; ++i) {
            if (mode[i] == ContactMode::stuck)
                cs.anchors.push_back({feet[i].node, anchor_xy[i]});
            else if (mode[i] == ContactMode::sliding)
                so.friction.push_back(
                    {feet[i].node, start_xy[i], opts.mu * normal[i] * opts.kinetic_friction_factor});
        }
        so.warm_bond_multipliers = report.bond_multipliers;
        report = solve_equilibrium_inplace(states, act_after, cs, so);
        if (!report.converged)
            throw Error("contact", "equilibrium solve failed to converge during stick-slip step "
                                       "(iterations " +
                                       std::to_string(report.iterations) + ", violation " +
                                       std::to_string(report.max_violation) + ")");
    };

    // Physical gradient plus bond reactions: what the anchor/ground must absorb.
    auto reaction_gradient = [&]() {
        std::vector<Vec3> g = energy_gradient(states, act_after);
        auto offset = [&](const NodeRef& r) {
            size_t o = 0;
            for (int m = 0; m < r.module; ++m) o += states[static_cast<size_t>(m)].node_positions.size();
            return o + static_cast<size_t>(r.node);
        };
        for (size_t b = 0; b < base.bonds.size() && b < report.bond_multipliers.size(); ++b) {
            g[offset(base.bonds[b].a)] += report.bond_multipliers[b];
            g[offset(base.bonds[b].b)] -= report.bond_multipliers[b];
        }
        return std::pair(std::move(g), offset);
    };

    // Mode assignments can cycle (a foot pulled upward by a bond alternately
    // lands and lifts); revisiting a mode vector means no fixed point exists,
    // so the solution of the revisited assignment is accepted as-is.
    std::set<std::vector<char>> visited;
    auto mode_key = [&]() {
        std::vector<char> key(nf);
        for (size_t i = 0; i < nf; ++i) key[i] = static_cast<char>(mode[i]);
        return key;
    };

    int iter = 0;
    for (;; ++iter) {
        bool revisit = !visited.insert(mode_key()).second;
        if (iter >= opts.max_mode_iterations)
            throw Error("contact", "stick-slip mode iteration did not reach a fixed point after " +
                                       std::to_string(opts.max_mode_iterations) + " sweeps");
        resolve();
        if (revisit) break;
        auto [grad, offset] = reaction_gradient();

        // Updated normals at the solved configuration, aggregated per
        // coincidence cluster and split evenly over its contacting members
        // (the members share one xy position, so only the sum matters).
        std::vector<double> cluster_sum(nf, 0.0);
        std::vector<Vec2> cluster_tangent(nf, Vec2::Zero());
        std::vector<int> cluster_count(nf, 0);
        for (size_t i = 0; i < nf; ++i)
            if (z_of(states, feet[i].node) <= opts.contact_z_tol) {
                int root = find(static_cast<int>(i));
                Vec3 g = grad[offset(feet[i].node)];
                cluster_sum[static_cast<size_t>(root)] += g.z();
                cluster_tangent[static_cast<size_t>(root)] += Vec2(g.x(), g.y());
                ++cluster_count[static_cast<size_t>(root)];
            }
        std::vector<double> new_normal(nf, 0.0);
        for (size_t i = 0; i < nf; ++i)
            if (z_of(states, feet[i].node) <= opts.contact_z_tol) {
                size_t root = static_cast<size_t>(find(static_cast<int>(i)));
                new_normal[i] = std::max(0.0, cluster_sum[root]) /
                                static_cast<double>(cluster_count[root]);
            }

        // All violators flip in one sweep (checked in ascending label order);
        // flipping them together keeps mirror-symmetric inputs on
        // mirror-symmetric trajectories. Lift/land is per foot; the
        // stick-or-slip decision is per cluster, from the aggregate forces.
        bool flipped = false;
        for (size_t i = 0; i < nf; ++i) {
            double z = z_of(states, feet[i].node);
            switch (mode[i]) {
                case ContactMode::stuck: {
                    if (z > opts.contact_z_tol) {  // anchor only holds xy; foot can rise
                        mode[i] = ContactMode::lifted;
                        flipped = true;
                        break;
                    }
                    size_t root = static_cast<size_t>(find(static_cast<int>(i)));
                    double limit = opts.mu * std::max(0.0, cluster_sum[root]);
                    if (cluster_tangent[root].norm() > limit + 1e-9) {
                        mode[i] = ContactMode::sliding;
                        flipped = true;
                    }
                    break;
                }
                case ContactMode::sliding:
                    if (z > opts.contact_z_tol) {
                        mode[i] = ContactMode::lifted;
                        flipped = true;
                    }
                    break;
                case ContactMode::lifted:
                    if (z <= opts.contact_z_tol) {
                        // Join an already-sliding cluster in its mode.
                        ContactMode landing = contact_mode;
                        int root = find(static_cast<int>(i));
                        for (size_t j = 0; j < nf; ++j)
                            if (j != i && find(static_cast<int>(j)) == root &&
                                mode[j] == ContactMode::sliding)
                                landing = ContactMode::sliding;
                        mode[i] = landing;
                        anchor_xy[i] = xy_of(states, feet[i].node);
                        flipped = true;
                    }
                    break;
            }
        }
        if (flipped) {
            for (size_t i = 0; i < nf; ++i)
                if (new_normal[i] > 0) normal[i] = new_normal[i];
            continue;
        }

        // Friction magnitudes must be consistent with the final normals.
        bool stale = false;
        for (size_t i = 0; i < nf; ++i) {
            if (mode[i] == ContactMode::sliding &&
                std::abs(new_normal[i] - normal[i]) > 0.05 * std::max(normal[i], 1e-3))
                stale = true;
            if (new_normal[i] > 0 || mode[i] != ContactMode::sliding) normal[i] = new_normal[i];
        }
        if (!stale) break;
    }

    ContactState cs;
    cs.mu = opts.mu;
    StepMetrics metrics;
    for (size_t i = 0; i < nf; ++i) {
        FootContact fc;
        fc.node = feet[i].node;
        fc.label = feet[i].label;
        fc.mode = mode[i];
        fc.normal = mode[i] == ContactMode::lifted ? 0.0 : normal[i];
        Vec2 d = xy_of(states, feet[i].node) - start_xy[i];
        fc.tangential_displacement = d.norm();
        double along = d.dot(fwd);
        if (along > 0)
            metrics.h1 += along / static_cast<double>(nf);
        else
            metrics.h2 -= along / static_cast<double>(nf);
        cs.feet.push_back(std::move(fc));
    }
    metrics.h3 = metrics.h1 - metrics.h2;
    cs.tip_over = support_forces(states, opts.contact_z_tol).tip_over;
    return {std::move(cs), metrics};
}

GaitRunResult run_gait(std::vector<ModuleState>& states, const GaitSchedule& schedule,
                       const ThermalParams& thermal, const GaitRunOptions& opts) {
    schedule.validate();
    thermal.validate();
    GaitSchedule sched = schedule;
    sched.repeat = std::max(sched.repeat, opts.cycles);

    double mass = 0;
    Vec3 com0 = system_com(states, mass);
    double heading0 = module_heading(states.front());

    GaitRunResult result;
    ActuationState act_prev = activation_at(sched, thermal, 0.0);
    double cycle_len = sched.cycle_duration();
    bool stopped = false;
    for (int cycle = 0; cycle < opts.cycles && !stopped; ++cycle) {
        double t = cycle * cycle_len;
        for (const auto& phase : sched.phases) {
            for (int s = 1; s <= opts.substeps_per_phase; ++s) {
                double t_next = t + phase.duration * s / opts.substeps_per_phase;
                ActuationState act_next = activation_at(sched, thermal, t_next);
                StickSlipOptions so;
                so.mu = opts.mu;
                so.forward = opts.forward;
                so.contact_z_tol = opts.contact_z_tol;
                so.extra_constraints = opts.extra_constraints;
                so.solver = opts.solver;
                if (sched.overlay && phase.slide_phase)
                    so.kinetic_friction_factor = sched.overlay->friction_factor;
                auto [contact, metrics] = stick_slip_step(states, act_prev, act_next, so);
                (void)contact;
                result.steps.push_back(metrics);
                result.cycle_metrics.h1 += metrics.h1;
                result.cycle_metrics.h2 += metrics.h2;
                act_prev = std::move(act_next);
                if (opts.on_substep) opts.on_substep(t_next, states);
                if (opts.stop_when && opts.stop_when(t_next, states)) {
                    stopped = true;
                    break;
                }
            }
            t += phase.duration;
            if (stopped) break;
        }
    }
    result.cycle_metrics.h3 = result.cycle_metrics.h1 - result.cycle_metrics.h2;

    Vec3 com1 = system_com(states, mass);
    Vec2 fwd(opts.forward.x(), opts.forward.y());
    fwd.normalize();
    Vec2 left(-fwd.y(), fwd.x());
    Vec2 d(com1.x() - com0.x(), com1.y() - com0.y());
    result.net_forward = d.dot(fwd);
    result.net_lateral = d.dot(left);
    double dyaw = module_heading(states.front()) - heading0;
    while (dyaw > M_PI) dyaw -= 2 * M_PI;
    while (dyaw < -M_PI) dyaw += 2 * M_PI;
    result.yaw_change = dyaw;
    result.per_cycle_forward = result.net_forward / std::max(1, opts.cycles);
    return result;
}

double asymmetric_turn(std::vector<ModuleState>& states, double left_contract_time,
                       double right_contract_time, double mu, int cycles) {
    if (!(left_contract_time > 0) || !(right_contract_time > 0))
        throw Error("invariant", "contraction times must be positive");
    // Builds a shuffling cycle whose first half drags the `first`-side feet
    // (contraction time t1) and whose second half drags the other side (t2).
    auto make_schedule = [cycles](const char* first, double t1, const char* second, double t2) {
        GaitSchedule g;
        g.name = "shuffling_asymmetric";
        int va = g.add_channel("", "VA"), vb = g.add_channel("", "VB"), vc = g.add_channel("", "VC");
        int hab = g.add_channel("", "HAB"), hac = g.add_channel("", "HAC");
        auto side = [&](const char* label) { return std::string(label) == "left" ? hab : hac; };
        g.phases.push_back({first, t1, {side(first), vb, vc}, false});
        g.phases.push_back({"release", 1.6, {va}, false});
        g.phases.push_back({"cool", 20.9, {}, true});
        g.phases.push_back({second, t2, {side(second), vb, vc}, false});
        g.phases.push_back({"release", 1.6, {va}, false});
        g.phases.push_back({"cool", 20.9, {}, true});
        g.repeat = cycles;
        return g;
    };

    GaitRunOptions opts;
    opts.mu = mu;
    opts.cycles = cycles;

    // The raw heading change mixes the turning effect with a startup
    // transient (the first half-cycle always swings the heading one way from
    // rest). A reference run with the two contraction times exchanged carries
    // the same transient with the turning effect reversed, so the half
    // difference isolates the contraction-time effect. Equal times make the
    // two runs identical and the result is exactly zero.
    std::vector<ModuleState> swapped_states = states;
    GaitSchedule primary =
        make_schedule("left", left_contract_time, "right", right_contract_time);
    GaitSchedule swapped =
        make_schedule("left", right_contract_time, "right", left_contract_time);
    GaitRunResult r = run_gait(states, primary, ThermalParams{}, opts);
    GaitRunResult rm = run_gait(swapped_states, swapped, ThermalParams{}, opts);
    // Positive return = turn toward the right (clockwise looking down), the
    // direction the robot veers when the left side is contracted longer.
    return -(r.yaw_change - rm.yaw_change) / 2.0;
}

double module_heading(const ModuleState& state) {
    const auto& spec = *state.spec;
    Vec3 trailing = Vec3::Zero(), lead = Vec3::Zero();
    int seen = 0;
    for (size_t n = 0; n < spec.node_templates.size(); ++n) {
        if (spec.node_templates[n].role != NodeRole::foot) continue;
        if (seen == 0)
            trailing = state.node_positions[n];
        else
            lead += state.node_positions[n];
        ++seen;
    }
    if (seen < 3) throw Error("invariant", "module has fewer than three feet");
    lead /= static_cast<double>(seen - 1);
    return std::atan2(lead.y() - trailing.y(), lead.x() - trailing.x());
}

}  // namespace softlat
