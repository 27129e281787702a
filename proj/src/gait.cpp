#include "softlat/gait.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace softlat {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool contains(const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

double evolve(double a, bool on, double dt, const ThermalParams& p) {
    if (on) return 1.0 + (a - 1.0) * std::exp(-dt / p.tau_heat);
    return a * std::exp(-dt / p.effective_tau_cool());
}

/// Advances one channel across a constant-phase interval [0, span) of a phase,
/// stopping early at `remaining` seconds. Overlay channels in slide phases see
/// the pulse train instead of the phase command. Returns the new level and
/// decrements `remaining` by the time consumed.
double evolve_phase(double a, bool commanded_on, bool pulsed, const VibrationOverlay* ov,
                    double span, double& remaining, const ThermalParams& p) {
    double take = std::min(span, remaining);
    if (!pulsed) {
        a = evolve(a, commanded_on, take, p);
        remaining -= take;
        return a;
    }
    // Pulse train from the phase start: on for on_ms, off for off_ms, repeating.
    double t_on = ov->on_ms * 1e-3;
    double t_off = ov->off_ms * 1e-3;
    double pos = 0;
    while (pos < take - 1e-15) {
        double d_on = std::min(t_on, take - pos);
        a = evolve(a, true, d_on, p);
        pos += d_on;
        if (pos >= take - 1e-15) break;
        double d_off = std::min(t_off, take - pos);
        a = evolve(a, false, d_off, p);
        pos += d_off;
    }
    remaining -= take;
    return a;
}

}  // namespace

double GaitSchedule::cycle_duration() const {
    double d = 0;
    for (const auto& p : phases) d += p.duration;
    return d;
}

double GaitSchedule::actuation_time() const {
    double d = 0;
    for (const auto& p : phases)
        if (!p.on_channels.empty()) d += p.duration;
    return d;
}

int GaitSchedule::channel_index(const std::string& scope, const std::string& label) const {
    std::string key = lower(label);
    for (size_t i = 0; i < channels.size(); ++i)
        if (channels[i].module_scope == scope && lower(channels[i].label) == key)
            return static_cast<int>(i);
    return -1;
}

int GaitSchedule::add_channel(const std::string& scope, const std::string& label) {
    int i = channel_index(scope, label);
    if (i >= 0) return i;
    channels.push_back({scope, label});
    return static_cast<int>(channels.size()) - 1;
}

void GaitSchedule::validate() const {
    if (phases.empty()) throw Error("invariant", "gait schedule has no phases");
    if (repeat < 1) throw Error("invariant", "gait repeat count must be >= 1");
    for (const auto& p : phases) {
        if (!(p.duration > 0)) throw Error("invariant", "phase duration must be > 0");
        for (int c : p.on_channels)
            if (c < 0 || c >= static_cast<int>(channels.size()))
                throw Error("invariant", "phase references undeclared channel");
    }
    if (overlay) {
        if (!(overlay->on_ms > 0) || !(overlay->off_ms > 0))
            throw Error("invariant", "vibration overlay intervals must be positive");
        for (int c : overlay->channels)
            if (c < 0 || c >= static_cast<int>(channels.size()))
                throw Error("invariant", "overlay references undeclared channel");
    }
}

void ThermalParams::validate() const {
    if (!(tau_heat > 0) || !(tau_cool > 0))
        throw Error("invariant", "thermal time constants must be positive");
    if (!(fan_factor > 0) || fan_factor > 1 || !(thin_sma_factor > 0) || thin_sma_factor > 1)
        throw Error("invariant", "cooling factors must lie in (0, 1]");
}

double channel_activation_at(const GaitSchedule& schedule, const ThermalParams& params,
                             int channel_index, double t) {
    if (t < 0) throw Error("invariant", "activation query time must be >= 0");
    const VibrationOverlay* ov = schedule.overlay ? &*schedule.overlay : nullptr;
    bool in_overlay = ov && contains(ov->channels, channel_index);

    double a = 0;
    double remaining = t;
    for (int cycle = 0; cycle < schedule.repeat && remaining > 0; ++cycle) {
        for (const auto& phase : schedule.phases) {
            if (remaining <= 0) break;
            bool on = contains(phase.on_channels, channel_index);
            bool pulsed = in_overlay && phase.slide_phase && !on;
            a = evolve_phase(a, on, pulsed, ov, phase.duration, remaining, params);
        }
    }
    if (remaining > 0) a = evolve(a, false, remaining, params);  // schedule over: cool down
    return a;
}

ActuationState activation_at(const GaitSchedule& schedule, const ThermalParams& params, double t) {
    schedule.validate();
    params.validate();
    ActuationState act;
    for (size_t i = 0; i < schedule.channels.size(); ++i) {
        double a = channel_activation_at(schedule, params, static_cast<int>(i), t);
        act.set(schedule.channels[i].module_scope, schedule.channels[i].label, a);
    }
    return act;
}

GaitSchedule builtin_gait(const std::string& name) {
    GaitSchedule g;
    g.name = name;
    auto ch = [&](const std::string& scope, const std::string& label) {
        return g.add_channel(scope, label);
    };
    auto phase = [&](const std::string& group, double duration, std::vector<int> on, bool slide) {
        g.phases.push_back({group, duration, std::move(on), slide});
    };

    if (name == "grab_and_pull") {
        // Rock back (VA plants the back foot), squeeze the front horizontal so
        // the front feet slide forward; rock front (VB+VC) while it re-expands
        // so the back foot is pulled forward instead of the front feet slipping
        // back. 10 cycles x 49.8 s = 8.30 min per 2 cm; 8.28 s actuated per
        // cycle (1.38 min total). The pull phase gets the longer share of the
        // actuation budget: re-extension of the front horizontal runs on the
        // slow cooling constant, so holding the front feet planted longer
        // rectifies more of it into forward motion of the back foot.
        int va = ch("", "VA"), vb = ch("", "VB"), vc = ch("", "VC");
        int hbc = ch("", "HBC");
        phase("grab", 3.28, {va, hbc}, true);
        phase("pull", 5.0, {vb, vc}, true);
        phase("cool", 41.52, {}, false);
        g.repeat = 10;
    } else if (name == "shuffling") {
        // Drag left and right feet alternately: rock front while a side
        // horizontal contracts (back foot slides up), rock back while it
        // releases (side foot slides forward). 6 cycles x 50.2 s = 5.02 min
        // per 2 cm; 8.4 s actuated per cycle.
        int va = ch("", "VA"), vb = ch("", "VB"), vc = ch("", "VC");
        int hab = ch("", "HAB"), hac = ch("", "HAC");
        phase("left", 2.6, {hab, vb, vc}, false);
        phase("left_release", 1.6, {va}, false);
        phase("cool", 20.9, {}, true);
        phase("right", 2.6, {hac, vb, vc}, false);
        phase("right_release", 1.6, {va}, false);
        phase("cool", 20.9, {}, true);
        g.repeat = 6;
    } else if (name == "combined") {
        // left -> front -> right -> front; 4 cycles x 47.25 s = 3.15 min per
        // 2 cm; 11.25 s actuated per cycle (0.75 min total).
        int va = ch("", "VA"), vb = ch("", "VB"), vc = ch("", "VC");
        int hab = ch("", "HAB"), hac = ch("", "HAC"), hbc = ch("", "HBC");
        // Slide phases are the ones whose dominant foot motion is the forward
        // drag; the vibration overlay cuts kinetic friction there only.
        auto side_group = [&](const std::string& nm, int h) {
            phase(nm, 1.8125, {h, vb, vc}, true);
            phase(nm + "_release", 1.0, {va}, false);
            phase("cool", 9.0, {}, false);
        };
        auto front_group = [&]() {
            phase("front", 1.8125, {hbc, va}, false);
            phase("front_release", 1.0, {vb, vc}, true);
            phase("cool", 9.0, {}, false);
        };
        side_group("left", hab);
        front_group();
        side_group("right", hac);
        front_group();
        g.repeat = 4;
    } else if (name == "three_legged_race") {
        // Bound-unit walk for the L/M/R half-hexagon: the outer modules plant
        // their shared centre foot (VA) and squeeze their centre-adjacent
        // horizontals, hauling their rim feet inward; then the middle module
        // does the same while the outer verticals rock the weight onto the
        // rim, so the re-extending horizontals push the centre cluster
        // forward. 22.6 s cycle, 12 s of it cooling.
        std::vector<int> outer, middle;
        for (const char* m : {"L", "R"}) {
            outer.push_back(ch(m, "VA"));
            outer.push_back(ch(m, "HAB"));
            outer.push_back(ch(m, "HAC"));
            middle.push_back(ch(m, "VB"));
            middle.push_back(ch(m, "VC"));
        }
        for (const char* label : {"VA", "HAB", "HAC"}) middle.push_back(ch("M", label));
        phase("outer_advance", 5.0, outer, false);
        phase("middle_advance", 5.6, middle, false);
        phase("cool", 12.0, {}, true);
        g.repeat = 8;
    } else {
        throw Error("unknown-gait", "no builtin gait named '" + name + "'");
    }
    g.validate();
    return g;
}

GaitSchedule apply_vibration_overlay(const GaitSchedule& schedule, double on_ms, double off_ms,
                                     const std::vector<ChannelRef>& channels,
                                     double friction_factor) {
    if (!(on_ms > 0)) throw Error("invariant", "overlay on_ms must be > 0");
    if (!(off_ms > 0)) throw Error("invariant", "overlay off_ms must be > 0");
    GaitSchedule out = schedule;
    VibrationOverlay ov;
    ov.on_ms = on_ms;
    ov.off_ms = off_ms;
    ov.friction_factor = friction_factor;
    for (const auto& c : channels) {
        int i = out.add_channel(c.module_scope, c.label);
        ov.channels.push_back(i);
        for (const auto& p : out.phases)
            if (p.slide_phase && contains(p.on_channels, i))
                throw Error("conflict", "overlay channel '" + c.label +
                                            "' already commanded on in slide phase '" + p.group + "'");
    }
    out.overlay = ov;
    out.validate();
    return out;
}

double predict_travel_time(const GaitSchedule& schedule, const ThermalParams& params,
                           double per_cycle_displacement, double target_distance) {
    params.validate();
    if (!(per_cycle_displacement > 0))
        throw Error("invariant", "per-cycle displacement must be > 0");
    if (target_distance < 0) throw Error("invariant", "target distance must be >= 0");
    return target_distance / per_cycle_displacement * schedule.cycle_duration();
}

GaitSchedule load_gait_schedule(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error("parse", std::string("gait schedule: ") + e.what());
    }
    try {
        GaitSchedule g;
        g.name = j.value("name", "");
        g.repeat = j.value("repeat", 1);
        for (const auto& c : j.at("channels"))
            g.channels.push_back({c.value("scope", ""), c.at("label").get<std::string>()});
        for (const auto& p : j.at("phases")) {
            GaitPhase ph;
            ph.group = p.value("group", "");
            ph.duration = p.at("duration").get<double>();
            ph.slide_phase = p.value("slide", false);
            for (const auto& c : p.at("on")) ph.on_channels.push_back(c.get<int>());
            g.phases.push_back(std::move(ph));
        }
        if (j.contains("overlay")) {
            const auto& o = j.at("overlay");
            VibrationOverlay ov;
            ov.on_ms = o.at("on_ms").get<double>();
            ov.off_ms = o.at("off_ms").get<double>();
            ov.friction_factor = o.value("friction_factor", 0.8);
            for (const auto& c : o.at("channels")) ov.channels.push_back(c.get<int>());
            g.overlay = ov;
        }
        g.validate();
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw Error("parse", std::string("gait schedule: ") + e.what());
    }
}

std::string serialize_gait_schedule(const GaitSchedule& schedule) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["name"] = schedule.name;
    j["repeat"] = schedule.repeat;
    j["channels"] = nlohmann::ordered_json::array();
    for (const auto& c : schedule.channels)
        j["channels"].push_back({{"scope", c.module_scope}, {"label", c.label}});
    j["phases"] = nlohmann::ordered_json::array();
    for (const auto& p : schedule.phases)
        j["phases"].push_back({{"group", p.group},
                               {"duration", p.duration},
                               {"on", p.on_channels},
                               {"slide", p.slide_phase}});
    if (schedule.overlay) {
        const auto& o = *schedule.overlay;
        j["overlay"] = {{"on_ms", o.on_ms},
                        {"off_ms", o.off_ms},
                        {"friction_factor", o.friction_factor},
                        {"channels", o.channels}};
    }
    return j.dump(2) + "\n";
}

std::string dump_gait_csv(const GaitSchedule& schedule, const ThermalParams& params, double dt) {
    schedule.validate();
    params.validate();
    if (!(dt > 0)) throw Error("invariant", "sample interval must be > 0");
    double total = schedule.cycle_duration() * schedule.repeat;
    std::ostringstream out;
    out << "channel";
    int n = static_cast<int>(std::floor(total / dt + 1e-9));
    char buf[64];
    for (int s = 0; s <= n; ++s) {
        std::snprintf(buf, sizeof buf, ",%.6g", s * dt);
        out << buf;
    }
    out << '\n';
    for (size_t c = 0; c < schedule.channels.size(); ++c) {
        const auto& ref = schedule.channels[c];
        out << (ref.module_scope.empty() ? ref.label : ref.module_scope + "/" + ref.label);
        for (int s = 0; s <= n; ++s) {
            double a = channel_activation_at(schedule, params, static_cast<int>(c), s * dt);
            std::snprintf(buf, sizeof buf, ",%.6g", a);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

GaitSchedule scoped_gait(GaitSchedule schedule, const std::string& prefix) {
    for (auto& ch : schedule.channels) ch.module_scope = prefix + ch.module_scope;
    return schedule;
}

double calibrated_cycle_displacement(const std::string& gait_name) {
    if (gait_name == "grab_and_pull") return 0.02 / 10;
    if (gait_name == "shuffling") return 0.02 / 6;
    if (gait_name == "combined") return 0.02 / 4;
    if (gait_name == "three_legged_race") return 0.02 * 22.6 / 141.0;
    throw Error("unknown-gait", "no calibration for gait '" + gait_name + "'");
}

}  // namespace softlat
