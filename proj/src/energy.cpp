#include "softlat/energy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace softlat {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

struct Spring {
    int ia = 0, ib = 0;
    double k = 0, rest = 0;
    bool one_way = false;
};

struct Compiled {
    int n_nodes = 0;
    std::vector<int> offsets;       // node offset per module
    std::vector<Spring> springs;
    std::vector<double> node_mass;  // kg
};

Compiled compile(const std::vector<ModuleState>& states, const ActuationState& act) {
    Compiled sys;
    sys.offsets.reserve(states.size());
    for (const auto& st : states) {
        sys.offsets.push_back(sys.n_nodes);
        sys.n_nodes += static_cast<int>(st.node_positions.size());
        for (size_t i = 0; i < st.node_positions.size(); ++i)
            sys.node_mass.push_back(st.spec->node_mass);
    }
    for (size_t m = 0; m < states.size(); ++m) {
        const auto& spec = *states[m].spec;
        int off = sys.offsets[m];
        for (const auto& e : spec.skeleton_edges) {
            sys.springs.push_back({off + spec.node_index(e.node_a), off + spec.node_index(e.node_b),
                                   e.stiffness, e.rest_length, false});
        }
        for (const auto& c : spec.sma_channels) {
            double a = act.get(states[m].module_id, c.label);
            sys.springs.push_back({off + spec.node_index(c.node_a), off + spec.node_index(c.node_b),
                                   c.stiffness, c.rest_length(a), true});
        }
    }
    return sys;
}

Eigen::VectorXd flatten(const std::vector<ModuleState>& states) {
    int n = 0;
    for (const auto& st : states) n += static_cast<int>(st.node_positions.size());
    Eigen::VectorXd x(3 * n);
    int j = 0;
    for (const auto& st : states)
        for (const auto& p : st.node_positions) {
            x.segment<3>(3 * j) = p;
            ++j;
        }
    return x;
}

void unflatten(const Eigen::VectorXd& x, std::vector<ModuleState>& states) {
    int j = 0;
    for (auto& st : states)
        for (auto& p : st.node_positions) {
            p = x.segment<3>(3 * j);
            ++j;
        }
}

double spring_gravity_energy(const Compiled& sys, const Eigen::VectorXd& x) {
    double e = 0;
    for (const auto& s : sys.springs) {
        double d = (x.segment<3>(3 * s.ia) - x.segment<3>(3 * s.ib)).norm();
        double stretch = d - s.rest;
        if (s.one_way && stretch < 0) continue;
        e += 0.5 * s.k * stretch * stretch;
    }
    for (int i = 0; i < sys.n_nodes; ++i) e += sys.node_mass[i] * kGravity * x[3 * i + 2];
    return e;
}

void add_spring_gravity_gradient(const Compiled& sys, const Eigen::VectorXd& x,
                                 Eigen::VectorXd& g) {
    for (const auto& s : sys.springs) {
        Vec3 delta = x.segment<3>(3 * s.ia) - x.segment<3>(3 * s.ib);
        double d = delta.norm();
        double stretch = d - s.rest;
        if (s.one_way && stretch < 0) continue;
        if (d < 1e-15) continue;  // coincident endpoints: direction undefined, force zero
        Vec3 f = s.k * stretch / d * delta;
        g.segment<3>(3 * s.ia) += f;
        g.segment<3>(3 * s.ib) -= f;
    }
    for (int i = 0; i < sys.n_nodes; ++i) g[3 * i + 2] += sys.node_mass[i] * kGravity;
}

struct NodeIndexer {
    std::vector<int> offsets;
    int operator()(const NodeRef& r) const { return offsets[static_cast<size_t>(r.module)] + r.node; }
};

}  // namespace

void ActuationState::set(const std::string& module_key, const std::string& label, double a) {
    levels[module_key][lower(label)] = a;
}

double ActuationState::get(const std::string& module_id, const std::string& label) const {
    std::string key = lower(label);
    auto it = levels.find(module_id);
    if (it != levels.end()) {
        auto jt = it->second.find(key);
        if (jt != it->second.end()) return jt->second;
    }
    it = levels.find("");
    if (it != levels.end()) {
        auto jt = it->second.find(key);
        if (jt != it->second.end()) return jt->second;
    }
    return 0.0;
}

void ActuationState::validate(const std::vector<ModuleState>& states) const {
    for (const auto& [mod, chans] : levels) {
        for (const auto& [label, a] : chans) {
            if (a < 0.0 || a > 1.0)
                throw Error("invariant", "activation level for '" + label + "' outside [0,1]");
            bool known = false;
            for (const auto& st : states) {
                if (!mod.empty() && st.module_id != mod) continue;
                if (st.spec->channel_index(label) >= 0) known = true;
            }
            if (!known)
                throw Error("unknown-label",
                            "activation references unknown channel '" + label + "' on '" + mod + "'");
        }
    }
}

void ConstraintSet::validate(const std::vector<ModuleState>& states) const {
    auto check = [&](const NodeRef& r, const char* what) {
        if (r.module < 0 || r.module >= static_cast<int>(states.size()) || r.node < 0 ||
            r.node >= static_cast<int>(states[static_cast<size_t>(r.module)].node_positions.size()))
            throw Error("invariant", std::string(what) + " constraint references nonexistent node");
    };
    for (const auto& g : ground) check(g.node, "ground");
    for (const auto& a : anchors) check(a.node, "anchor");
    for (const auto& p : pins) check(p.node, "pin");
    for (const auto& b : bonds) {
        check(b.a, "bond");
        check(b.b, "bond");
        if (b.a.module == b.b.module)
            throw Error("invariant", "bond endpoints must belong to different modules");
    }
    for (const auto& a : anchors)
        for (const auto& p : pins)
            if (a.node == p.node && (Vec2(p.position.x(), p.position.y()) - a.xy).norm() > 1e-12)
                throw Error("infeasible", "node both anchored and pinned at conflicting positions");
    for (const auto& b : bonds) {
        const PinConstraint* pa = nullptr;
        const PinConstraint* pb = nullptr;
        for (const auto& p : pins) {
            if (p.node == b.a) pa = &p;
            if (p.node == b.b) pb = &p;
        }
        if (pa && pb && (pa->position - pb->position).norm() > 1e-9)
            throw Error("infeasible", "bonded nodes pinned at conflicting positions");
    }
}

double potential_energy(const std::vector<ModuleState>& states, const ActuationState& act) {
    Compiled sys = compile(states, act);
    return spring_gravity_energy(sys, flatten(states));
}

std::vector<Vec3> energy_gradient(const std::vector<ModuleState>& states,
                                  const ActuationState& act) {
    Compiled sys = compile(states, act);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(3 * sys.n_nodes);
    add_spring_gravity_gradient(sys, flatten(states), g);
    std::vector<Vec3> out(static_cast<size_t>(sys.n_nodes));
    for (int i = 0; i < sys.n_nodes; ++i) out[static_cast<size_t>(i)] = g.segment<3>(3 * i);
    return out;
}

SolveReport solve_equilibrium_inplace(std::vector<ModuleState>& states, const ActuationState& act,
                                      const ConstraintSet& constraints, const SolveOptions& opts) {
    act.validate(states);
    constraints.validate(states);
    Compiled sys = compile(states, act);
    NodeIndexer idx{sys.offsets};

    Eigen::VectorXd x = flatten(states);

    std::vector<Vec3> lambda(constraints.bonds.size(), Vec3::Zero());
    for (size_t i = 0; i < opts.warm_bond_multipliers.size() && i < lambda.size(); ++i)
        lambda[i] = opts.warm_bond_multipliers[i];
    double rho = opts.penalty_rho;

    auto project = [&](Eigen::VectorXd& v) {
        for (const auto& g : constraints.ground) {
            int i = idx(g.node);
            if (v[3 * i + 2] < 0) v[3 * i + 2] = 0;
        }
        for (const auto& a : constraints.anchors) {
            int i = idx(a.node);
            v[3 * i] = a.xy.x();
            v[3 * i + 1] = a.xy.y();
        }
        for (const auto& p : constraints.pins) {
            int i = idx(p.node);
            v.segment<3>(3 * i) = p.position;
        }
    };

    auto friction_energy = [&](const Eigen::VectorXd& v) {
        double e = 0;
        for (const auto& f : opts.friction) {
            int i = idx(f.node);
            e += f.force * (Vec2(v[3 * i], v[3 * i + 1]) - f.origin).norm();
        }
        return e;
    };

    // The friction term F*||xy - origin|| is nonsmooth at the origin; it is
    // handled proximally (soft shrinkage toward the origin by step*F), never
    // differentiated, so a foot can sit exactly at the kink.
    auto friction_prox = [&](Eigen::VectorXd& v, double step) {
        for (const auto& f : opts.friction) {
            int i = idx(f.node);
            Vec2 d = Vec2(v[3 * i], v[3 * i + 1]) - f.origin;
            double n = d.norm();
            double scale = n > step * f.force ? (n - step * f.force) / n : 0.0;
            v[3 * i] = f.origin.x() + scale * d.x();
            v[3 * i + 1] = f.origin.y() + scale * d.y();
        }
    };

    auto augmented = [&](const Eigen::VectorXd& v) {
        double e = spring_gravity_energy(sys, v) + friction_energy(v);
        for (size_t b = 0; b < constraints.bonds.size(); ++b) {
            int ia = idx(constraints.bonds[b].a);
            int ib = idx(constraints.bonds[b].b);
            Vec3 c = v.segment<3>(3 * ia) - v.segment<3>(3 * ib);
            e += lambda[b].dot(c) + 0.5 * rho * c.squaredNorm();
        }
        return e;
    };

    // Gradient of the smooth part only (friction handled by its prox).
    auto augmented_gradient = [&](const Eigen::VectorXd& v, Eigen::VectorXd& g) {
        g.setZero();
        add_spring_gravity_gradient(sys, v, g);
        for (size_t b = 0; b < constraints.bonds.size(); ++b) {
            int ia = idx(constraints.bonds[b].a);
            int ib = idx(constraints.bonds[b].b);
            Vec3 c = v.segment<3>(3 * ia) - v.segment<3>(3 * ib);
            Vec3 gc = lambda[b] + rho * c;
            g.segment<3>(3 * ia) += gc;
            g.segment<3>(3 * ib) -= gc;
        }
    };

    // Bond-coincident nodes act as one body: at a constrained equilibrium the
    // forces on a cluster sum to zero while the internal split is carried by
    // the multipliers, so only the cluster totals count toward stationarity.
    std::vector<int> cluster_of(sys.n_nodes, -1);
    std::vector<std::vector<int>> clusters;
    {
        std::vector<int> root(sys.n_nodes);
        for (int i = 0; i < sys.n_nodes; ++i) root[i] = i;
        auto find = [&](int i) {
            while (root[i] != i) i = root[i] = root[root[i]];
            return i;
        };
        for (const auto& b : constraints.bonds) root[find(idx(b.a))] = find(idx(b.b));
        std::map<int, int> seen;
        for (int i = 0; i < sys.n_nodes; ++i) {
            int r = find(i);
            if (r == i) continue;
            auto [it, fresh] = seen.emplace(r, (int)clusters.size());
            if (fresh) {
                clusters.emplace_back();
                clusters.back().push_back(r);
                cluster_of[r] = it->second;
            }
            clusters[it->second].push_back(i);
            cluster_of[i] = it->second;
        }
    }

    // Gradient components that projection can absorb do not count toward the
    // stationarity test.
    auto free_gradient_norm = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& g) {
        Eigen::VectorXd gp = g;
        for (const auto& f : opts.friction) {
            int i = idx(f.node);
            Vec2 d = Vec2(v[3 * i], v[3 * i + 1]) - f.origin;
            double n = d.norm();
            if (n > 1e-12) {
                gp[3 * i] += f.force * d.x() / n;
                gp[3 * i + 1] += f.force * d.y() / n;
            } else {
                // At the kink the subdifferential absorbs up to f.force.
                Vec2 gxy(gp[3 * i], gp[3 * i + 1]);
                double m = gxy.norm();
                double scale = m > f.force ? (m - f.force) / m : 0.0;
                gp[3 * i] = scale * gxy.x();
                gp[3 * i + 1] = scale * gxy.y();
            }
        }
        for (const auto& members : clusters) {
            Vec3 mean = Vec3::Zero();
            for (int i : members) mean += gp.segment<3>(3 * i);
            mean /= (double)members.size();
            for (int i : members) gp.segment<3>(3 * i) = mean;
        }
        for (const auto& gc : constraints.ground) {
            int i = idx(gc.node);
            if (v[3 * i + 2] <= 1e-12 && gp[3 * i + 2] > 0) gp[3 * i + 2] = 0;
        }
        for (const auto& a : constraints.anchors) {
            int i = idx(a.node);
            gp[3 * i] = 0;
            gp[3 * i + 1] = 0;
        }
        for (const auto& p : constraints.pins) {
            int i = idx(p.node);
            gp.segment<3>(3 * i).setZero();
        }
        return gp.lpNorm<Eigen::Infinity>();
    };

    auto bond_violation = [&](const Eigen::VectorXd& v) {
        double worst = 0;
        for (const auto& b : constraints.bonds) {
            Vec3 c = v.segment<3>(3 * idx(b.a)) - v.segment<3>(3 * idx(b.b));
            worst = std::max(worst, c.norm());
        }
        return worst;
    };

    std::ofstream trace;
    if (!opts.trace_csv.empty()) {
        trace.open(opts.trace_csv);
        trace << "iteration,energy,violation\n";
    }

    project(x);
    SolveReport report;
    int total_iters = 0;
    bool stationary = false;
    double prev_violation = 1e300;

    Eigen::VectorXd g(x.size()), xn(x.size());
    for (int outer = 0; outer < opts.max_outer_iterations; ++outer) {
        double step = opts.initial_step;
        double f = augmented(x);
        stationary = false;
        Eigen::VectorXd x_prev, g_prev;
        bool have_prev = false;
        int stalled = 0;
        int soft_hits = 0;
        Eigen::VectorXd x_anchor = x;
        int since_anchor = 0;
        while (total_iters < opts.max_inner_iterations) {
            // Periodic extrapolation along the recent net movement direction:
            // sliding-foot valleys are nearly straight and nearly flat, where
            // plain gradient steps creep; doubling jumps cross them quickly
            // while the energy check keeps the iteration monotone.
            if (++since_anchor >= 50) {
                Eigen::VectorXd d = x - x_anchor;
                if (d.lpNorm<Eigen::Infinity>() > 1e-14) {
                    double f_cur = augmented(x);
                    bool improved = false;
                    for (double t = 2.0; t <= 65536.0; t *= 2.0) {
                        xn = x + t * d;
                        project(xn);
                        double fc = augmented(xn);
                        if (fc < f_cur - 1e-15) {
                            x = xn;
                            f_cur = fc;
                            improved = true;
                        } else {
                            break;
                        }
                    }
                    if (improved) {
                        f = f_cur;
                        have_prev = false;
                    }
                }
                x_anchor = x;
                since_anchor = 0;
            }
            augmented_gradient(x, g);
            double gnorm = free_gradient_norm(x, g);
            if (gnorm <= opts.grad_tol) {
                stationary = true;
                break;
            }
            soft_hits = gnorm <= opts.grad_tol_soft ? soft_hits + 1 : 0;
            if (soft_hits >= 50) {
                stationary = true;
                break;
            }
            // Barzilai-Borwein trial step, safeguarded by the Armijo backtrack below.
            if (have_prev) {
                Eigen::VectorXd sx = x - x_prev;
                Eigen::VectorXd sg = g - g_prev;
                double denom = sx.dot(sg);
                if (denom > 1e-30) {
                    double bb = sx.squaredNorm() / denom;
                    if (bb > 1e-12 && bb < opts.max_step) step = bb;
                }
            }
            x_prev = x;
            g_prev = g;
            have_prev = true;
            ++total_iters;
            double fn = 0;
            bool accepted = false;
            while (step > 1e-15) {
                xn = x - step * g;
                friction_prox(xn, step);
                project(xn);
                fn = augmented(xn);
                double decrease = g.dot(x - xn);
                if (fn <= f - opts.armijo_c * std::max(decrease, 0.0) && fn <= f) {
                    accepted = true;
                    break;
                }
                step *= opts.backtrack_shrink;
            }
            if (!accepted) {
                stationary = true;  // no descent direction left (kink or minimum)
                break;
            }
            if (trace.is_open() && total_iters % 10 == 0)
                trace << total_iters << ',' << fn << ',' << bond_violation(xn) << ','
                      << free_gradient_norm(xn, g) << ',' << step << '\n';
            double moved = (x - xn).lpNorm<Eigen::Infinity>();
            double gained = f - fn;
            x.swap(xn);
            f = fn;
            step = std::min(step * 1.5, opts.max_step);
            if (moved < 1e-15) {
                stationary = true;
                break;
            }
            // Energy-stall exit: once per-step progress sits at the resolution
            // of double-precision energy differences, the residual force is
            // the numerical floor and further iterations cannot reduce it.
            stalled = gained > 1e-13 * std::max(1.0, std::abs(f)) ? 0 : stalled + 1;
            if (stalled >= 300) {
                stationary = true;
                break;
            }
        }

        double viol = bond_violation(x);
        if (constraints.bonds.empty() || (viol <= opts.constraint_tol && stationary)) break;
        for (size_t b = 0; b < constraints.bonds.size(); ++b) {
            Vec3 c = x.segment<3>(3 * idx(constraints.bonds[b].a)) -
                     x.segment<3>(3 * idx(constraints.bonds[b].b));
            lambda[b] += rho * c;
        }
        if (viol > 0.25 * prev_violation) rho = std::min(rho * 10.0, 1e9);
        prev_violation = viol;
        if (total_iters >= opts.max_inner_iterations) break;
    }

    // Physical diagnostics at the solution.
    Eigen::VectorXd phys_g = Eigen::VectorXd::Zero(x.size());
    add_spring_gravity_gradient(sys, x, phys_g);
    report.ground_normals.assign(constraints.ground.size(), 0.0);
    double max_penetration = 0;
    for (size_t i = 0; i < constraints.ground.size(); ++i) {
        int n = idx(constraints.ground[i].node);
        max_penetration = std::max(max_penetration, -x[3 * n + 2]);
        if (x[3 * n + 2] <= opts.constraint_tol)
            report.ground_normals[i] = std::max(0.0, phys_g[3 * n + 2]);
    }
    report.bond_multipliers = lambda;
    report.max_violation = std::max(max_penetration, bond_violation(x));
    report.final_energy = spring_gravity_energy(sys, x);
    report.iterations = total_iters;
    report.converged = stationary && report.max_violation <= opts.constraint_tol;

    unflatten(x, states);
    return report;
}

std::pair<std::vector<ModuleState>, SolveReport> solve_equilibrium(
    const std::vector<ModuleState>& states, const ActuationState& act,
    const ConstraintSet& constraints, const SolveOptions& opts) {
    std::vector<ModuleState> out = states;
    SolveReport report = solve_equilibrium_inplace(out, act, constraints, opts);
    return {std::move(out), report};
}

}  // namespace softlat
