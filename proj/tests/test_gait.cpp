#include <doctest.h>

#include "softlat/gait.hpp"

#include <cmath>
#include <set>

using namespace softlat;

TEST_CASE("builtin gait timing figures") {
    GaitSchedule grab = builtin_gait("grab_and_pull");
    CHECK(grab.cycle_duration() == doctest::Approx(49.8));
    CHECK(grab.actuation_time() == doctest::Approx(8.28));
    CHECK(grab.repeat == 10);

    GaitSchedule shuffling = builtin_gait("shuffling");
    CHECK(shuffling.cycle_duration() == doctest::Approx(50.2));

    GaitSchedule combined = builtin_gait("combined");
    CHECK(combined.cycle_duration() == doctest::Approx(47.25));

    GaitSchedule race = builtin_gait("three_legged_race");
    CHECK(race.cycle_duration() == doctest::Approx(22.6));
    double cooling = 0;
    for (const auto& p : race.phases)
        if (p.on_channels.empty()) cooling += p.duration;
    CHECK(cooling == doctest::Approx(12.0));

    CHECK_THROWS_AS(builtin_gait("no_such_gait"), Error);
}

TEST_CASE("activation matches a small-step thermal integration oracle") {
    GaitSchedule g = builtin_gait("combined");
    ThermalParams tp;
    int channel = g.channel_index("", "VA");
    REQUIRE(channel >= 0);

    // Oracle: explicit Euler on da/dt = (target - a) / tau with a tiny step,
    // independent of the closed-form piecewise-exponential evaluation.
    auto commanded_on = [&](double t) {
        double cycle = g.cycle_duration();
        if (t >= cycle * g.repeat) return false;
        double local = std::fmod(t, cycle);
        for (const auto& p : g.phases) {
            if (local < p.duration) {
                for (int c : p.on_channels)
                    if (c == channel) return true;
                return false;
            }
            local -= p.duration;
        }
        return false;
    };

    const double dt = 1e-4;
    double a = 0, t = 0;
    for (double sample : {0.5, 2.0, 5.0, 11.0, 30.0, 47.25, 60.0}) {
        while (t < sample - dt / 2) {
            double target = commanded_on(t) ? 1.0 : 0.0;
            double tau = commanded_on(t) ? tp.tau_heat : tp.effective_tau_cool();
            a += dt * (target - a) / tau;
            t += dt;
        }
        CHECK(std::abs(channel_activation_at(g, tp, channel, sample) - a) < 1e-3);
    }
}

TEST_CASE("activation_at agrees with per-channel evaluation") {
    GaitSchedule g = builtin_gait("grab_and_pull");
    ThermalParams tp;
    for (double t : {0.1, 3.0, 7.9, 20.0, 49.9, 120.0}) {
        ActuationState act = activation_at(g, tp, t);
        for (size_t c = 0; c < g.channels.size(); ++c) {
            double expected = channel_activation_at(g, tp, static_cast<int>(c), t);
            CHECK(act.get(g.channels[c].module_scope, g.channels[c].label) ==
                  doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("cooling accelerators shorten the effective time constant") {
    ThermalParams tp;
    tp.tau_cool = 10.0;
    tp.fan_factor = 0.5;
    tp.thin_sma_factor = 0.8;
    CHECK(tp.effective_tau_cool() == doctest::Approx(4.0));
    tp.fan_factor = 1.5;
    CHECK_THROWS_AS(tp.validate(), Error);
}

TEST_CASE("scoped_gait binds wildcard channels to a module prefix") {
    GaitSchedule g = builtin_gait("combined");
    GaitSchedule scoped = scoped_gait(g, "m3");
    for (const auto& c : scoped.channels) CHECK(c.module_scope.rfind("m3", 0) == 0);
}

TEST_CASE("travel-time arithmetic reproduces the reported figures") {
    ThermalParams tp;
    GaitSchedule grab = builtin_gait("grab_and_pull");
    double total = predict_travel_time(grab, tp, calibrated_cycle_displacement("grab_and_pull"),
                                       0.02);
    CHECK(std::abs(total - 498.0) <= 1.0);  // 8.30 min
    double cycles = 0.02 / calibrated_cycle_displacement("grab_and_pull");
    CHECK(std::abs(grab.actuation_time() * cycles - 82.8) <= 1.0);  // 1.38 min actuated

    GaitSchedule race = builtin_gait("three_legged_race");
    double race_total =
        predict_travel_time(race, tp, calibrated_cycle_displacement("three_legged_race"), 0.02);
    CHECK(std::abs(race_total - 141.0) <= 1.0);  // 2.35 min

    CHECK_THROWS_AS(predict_travel_time(grab, tp, 0.0, 0.02), Error);
    CHECK_THROWS_AS(predict_travel_time(grab, tp, 0.002, -1.0), Error);
    CHECK_THROWS_AS(calibrated_cycle_displacement("no_such_gait"), Error);
}

TEST_CASE("gait schedule serialization round trip") {
    GaitSchedule g = builtin_gait("three_legged_race");
    std::string text = serialize_gait_schedule(g);
    GaitSchedule reloaded = load_gait_schedule(text);
    CHECK(serialize_gait_schedule(reloaded) == text);
    CHECK(reloaded.cycle_duration() == doctest::Approx(g.cycle_duration()));
    CHECK(reloaded.channels.size() == g.channels.size());
    CHECK_THROWS_AS(load_gait_schedule("{broken"), Error);
}

TEST_CASE("vibration overlay attaches to slide phases") {
    GaitSchedule g = apply_vibration_overlay(builtin_gait("combined"), 50, 1000, {{"", "VA"}},
                                             0.8);
    REQUIRE(g.overlay.has_value());
    CHECK(g.overlay->friction_factor == doctest::Approx(0.8));
    CHECK(g.overlay->on_ms == doctest::Approx(50));
    CHECK_NOTHROW(g.validate());
}

TEST_CASE("dump_gait_csv emits one row per channel") {
    GaitSchedule g = builtin_gait("combined");
    std::string csv = dump_gait_csv(g, ThermalParams{}, 5.0);
    size_t rows = 0;
    for (char c : csv)
        if (c == '\n') ++rows;
    CHECK(rows == g.channels.size() + 1);  // header + channels
    CHECK(csv.rfind("channel,", 0) == 0);
    CHECK_THROWS_AS(dump_gait_csv(g, ThermalParams{}, 0.0), Error);
}

TEST_CASE("schedule validation rejects broken phases") {
    GaitSchedule g = builtin_gait("combined");
    g.phases[0].duration = -1.0;
    CHECK_THROWS_AS(g.validate(), Error);
    GaitSchedule g2 = builtin_gait("combined");
    g2.phases[0].on_channels.push_back(999);
    CHECK_THROWS_AS(g2.validate(), Error);
}
