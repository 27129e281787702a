#pragma once

#include "softlat/energy.hpp"
#include "softlat/gait.hpp"

#include <functional>

namespace softlat {

enum class ContactMode { stuck, sliding, lifted };

struct FootContact {
    NodeRef node;
    std::string label;            // "<module_id>/<node label>", used for deterministic ordering
    double normal = 0;            // N
    ContactMode mode = ContactMode::stuck;
    double tangential_displacement = 0;  // m, this step
};

struct ContactState {
    std::vector<FootContact> feet;
    double mu = 0.6;
    bool tip_over = false;
};

struct StickSlipOptions {
    double mu = 0.6;
    double kinetic_friction_factor = 1.0;  // vibration overlay multiplier on sliding feet
    Vec3 forward = Vec3::UnitX();
    double contact_z_tol = 1e-4;  // m, feet below this height count as contacts
    int max_mode_iterations = 64;
    ConstraintSet extra_constraints;  // bonds etc. carried through every solve
    SolveOptions solver;
};

/// Quasi-static normal force distribution over the contacting feet.
/// Sum and moment balance about the contact points; least-squares split when
/// statically indeterminate; negative solutions clamped with the foot lifted.
ContactState support_forces(const std::vector<ModuleState>& states,
                            double contact_z_tol = 1e-4);

/// One quasi-static activation transition with stick-slip contact resolution.
/// `states` must be an equilibrium of `act_before`; returns the equilibrium of
/// `act_after` with feet anchored or sliding per the Coulomb limit.
std::pair<ContactState, StepMetrics> stick_slip_step(std::vector<ModuleState>& states,
                                                     const ActuationState& act_before,
                                                     const ActuationState& act_after,
                                                     const StickSlipOptions& opts);

struct GaitRunOptions {
    double mu = 0.6;
    Vec3 forward = Vec3::UnitX();
    int cycles = 1;
    int substeps_per_phase = 2;
    ConstraintSet extra_constraints;
    SolveOptions solver;
    double contact_z_tol = 1e-4;
    // Called after every substep: (time, states).
    std::function<void(double, const std::vector<ModuleState>&)> on_substep;
    // Optional early exit, polled after every substep; returning true ends
    // the run (used by attachment protocols to stop on magnet capture).
    std::function<bool(double, const std::vector<ModuleState>&)> stop_when;
};

struct GaitRunResult {
    double net_forward = 0;       // m, displacement of the system centroid along `forward`
    double net_lateral = 0;       // m
    double yaw_change = 0;        // rad, CCW positive (about +z)
    double per_cycle_forward = 0; // net_forward / cycles
    std::vector<StepMetrics> steps;
    StepMetrics cycle_metrics;    // accumulated h1/h2 over the run
};

/// Marches a gait schedule through stick-slip steps (piecewise quasi-static).
GaitRunResult run_gait(std::vector<ModuleState>& states, const GaitSchedule& schedule,
                       const ThermalParams& thermal, const GaitRunOptions& opts);

/// Net heading change after shuffling cycles with asymmetric left/right
/// contraction times. Positive = turning toward the right side, i.e. toward
/// the less-contracted side when the left contraction is longer.
double asymmetric_turn(std::vector<ModuleState>& states, double left_contract_time,
                       double right_contract_time, double mu, int cycles = 1);

/// Heading of a single module: direction from the trailing foot to the
/// midpoint of the two leading feet, as an angle about +z.
double module_heading(const ModuleState& state);

}  // namespace softlat
