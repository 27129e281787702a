#pragma once

#include "softlat/module_model.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace softlat {

/// Per-channel activation levels, keyed by module id (or "" as a wildcard
/// matching every module, convenient for single-module work).
struct ActuationState {
    // module key -> (lower-case channel label -> level in [0,1])
    std::map<std::string, std::map<std::string, double>> levels;

    void set(const std::string& module_key, const std::string& label, double a);
    double get(const std::string& module_id, const std::string& label) const;
    void clear() { levels.clear(); }

    /// Throws if any referenced label is unknown or any level is outside [0,1].
    void validate(const std::vector<ModuleState>& states) const;
};

struct GroundConstraint {
    NodeRef node;  // z >= 0
};

struct AnchorConstraint {
    NodeRef node;
    Vec2 xy;  // stick constraint: node held at this horizontal position
};

struct PinConstraint {
    NodeRef node;
    Vec3 position;  // fully fixed
};

struct BondConstraint {
    NodeRef a;  // nodes of different modules, held coincident
    NodeRef b;
};

struct ConstraintSet {
    std::vector<GroundConstraint> ground;
    std::vector<AnchorConstraint> anchors;
    std::vector<PinConstraint> pins;
    std::vector<BondConstraint> bonds;

    void validate(const std::vector<ModuleState>& states) const;
};

/// Kinetic-friction dissipation pseudo-energy: force * ||xy - origin||.
struct FrictionTerm {
    NodeRef node;
    Vec2 origin;
    double force = 0;  // mu * N, newtons
};

struct SolveOptions {
    double constraint_tol = 1e-6;   // m
    double grad_tol = 1e-8;         // N
    // Accepted as stationary after 50 consecutive iterations under this bound;
    // residual forces at this level are orders below any contact-force scale.
    double grad_tol_soft = 1e-5;    // N
    int max_inner_iterations = 60000;
    int max_outer_iterations = 40;
    double armijo_c = 1e-4;
    double backtrack_shrink = 0.5;
    double initial_step = 1e-3;     // m per N
    double max_step = 2e-2;
    double penalty_rho = 1e4;
    std::vector<FrictionTerm> friction;
    std::vector<Vec3> warm_bond_multipliers;  // one per bond, optional
    std::string trace_csv;  // per-iteration (iteration, energy, violation) when non-empty
};

struct SolveReport {
    double final_energy = 0;          // J, physical potential (no penalty terms)
    int iterations = 0;               // inner iterations across all outer rounds
    double max_violation = 0;         // m, worst ground penetration / bond gap
    bool converged = false;
    std::vector<double> ground_normals;   // N, aligned with constraints.ground
    std::vector<Vec3> bond_multipliers;   // aligned with constraints.bonds
};

/// Total potential: spring energy (SMA springs one-way) plus gravity.
double potential_energy(const std::vector<ModuleState>& states, const ActuationState& act);

/// Analytic gradient of potential_energy, one Vec3 per node in system order.
std::vector<Vec3> energy_gradient(const std::vector<ModuleState>& states,
                                  const ActuationState& act);

/// Projected-gradient / augmented-Lagrangian local minimization.
SolveReport solve_equilibrium_inplace(std::vector<ModuleState>& states, const ActuationState& act,
                                      const ConstraintSet& constraints,
                                      const SolveOptions& opts = {});

std::pair<std::vector<ModuleState>, SolveReport> solve_equilibrium(
    const std::vector<ModuleState>& states, const ActuationState& act,
    const ConstraintSet& constraints, const SolveOptions& opts = {});

}  // namespace softlat
