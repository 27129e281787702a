#pragma once

#include "softlat/energy.hpp"

#include <optional>
#include <string>
#include <vector>

namespace softlat {

/// A channel on a specific module ("L", "M", "R", or an explicit module id).
/// Empty scope applies to every module in the system.
struct ChannelRef {
    std::string module_scope;
    std::string label;

    friend bool operator==(const ChannelRef& a, const ChannelRef& b) {
        return a.module_scope == b.module_scope && a.label == b.label;
    }
};

struct GaitPhase {
    std::string group;           // "left", "front", "right", "cool", ...
    double duration = 0;         // s
    std::vector<int> on_channels;  // indices into GaitSchedule::channels
    bool slide_phase = false;    // feet drag here; vibration overlay may apply
};

struct VibrationOverlay {
    double on_ms = 50;
    double off_ms = 1000;
    std::vector<int> channels;          // indices into GaitSchedule::channels
    double friction_factor = 0.8;       // kinetic friction multiplier while pulsing
};

struct GaitSchedule {
    std::string name;
    std::vector<ChannelRef> channels;
    std::vector<GaitPhase> phases;
    int repeat = 1;
    std::optional<VibrationOverlay> overlay;

    double cycle_duration() const;
    /// Time per cycle during which at least one channel is commanded on.
    double actuation_time() const;
    int channel_index(const std::string& scope, const std::string& label) const;  // -1 if absent
    int add_channel(const std::string& scope, const std::string& label);

    void validate() const;
};

/// First-order SMA activation timing: heat toward 1 with tau_heat, cool toward
/// 0 with tau_cool scaled by the cooling accelerator factors.
struct ThermalParams {
    double tau_heat = 1.5;       // s
    double tau_cool = 10.0;      // s
    double fan_factor = 1.0;     // in (0,1]
    double thin_sma_factor = 1.0;

    double effective_tau_cool() const { return tau_cool * fan_factor * thin_sma_factor; }
    void validate() const;
};

/// Closed-form piecewise-exponential activation levels at time t (seconds,
/// from schedule start; cycles repeat `schedule.repeat` times, then hold off).
ActuationState activation_at(const GaitSchedule& schedule, const ThermalParams& params, double t);

/// Activation level of a single channel at time t (same evaluation path).
double channel_activation_at(const GaitSchedule& schedule, const ThermalParams& params,
                             int channel_index, double t);

/// The paper's gait library. Known names: grab_and_pull, shuffling, combined,
/// three_legged_race.
GaitSchedule builtin_gait(const std::string& name);

/// Prefixes every channel's module scope (wildcard "" becomes the prefix
/// itself), binding a generic schedule to concrete module ids.
GaitSchedule scoped_gait(GaitSchedule schedule, const std::string& prefix);

/// Adds a pulsed-actuation overlay to slide phases of a schedule.
GaitSchedule apply_vibration_overlay(const GaitSchedule& schedule, double on_ms, double off_ms,
                                     const std::vector<ChannelRef>& channels,
                                     double friction_factor = 0.8);

/// Travel-time prediction from a per-cycle displacement (fractional cycles).
double predict_travel_time(const GaitSchedule& schedule, const ThermalParams& params,
                           double per_cycle_displacement, double target_distance);

/// Gait schedule file round-trip (JSON text).
GaitSchedule load_gait_schedule(const std::string& text);
std::string serialize_gait_schedule(const GaitSchedule& schedule);

/// channel x time activation matrix as CSV (header row = times).
std::string dump_gait_csv(const GaitSchedule& schedule, const ThermalParams& params, double dt);

/// Committed timing calibration: nominal per-cycle displacement (m) used for
/// travel-time arithmetic, chosen together with the builtin phase durations so
/// that predicted 2 cm totals land on the hardware-reported figures.
double calibrated_cycle_displacement(const std::string& gait_name);

}  // namespace softlat
