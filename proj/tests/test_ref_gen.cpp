#include <doctest.h>

#include <cmath>
#include <random>

#include "koopnav/errors.hpp"
#include "koopnav/ref_gen.hpp"

using namespace koopnav;

TEST_CASE("free-space straight step") {
    const Waypoint w = next_waypoint({0, 0, 1.0}, {1, 0}, {}, 0, 0.05, {});
    CHECK(w.reference.x == doctest::Approx(0.3));
    CHECK(w.reference.y == doctest::Approx(0.0));
    CHECK(w.reference.theta == doctest::Approx(0.0));
    CHECK_FALSE(w.slid);
    CHECK(w.feasible);
}

TEST_CASE("terminal snap to the goal") {
    const Waypoint w = next_waypoint({0.9, 0, 0}, {1, 0}, {}, 0, 0.05, {});
    CHECK(w.reference.x == 1.0);
    CHECK(w.reference.y == 0.0);
}

TEST_CASE("obstacle on the line: slide sideways, keep moving forward") {
    const std::vector<ObstacleSpec> obs{{0, 0.2, StaticMotion{{0.5, 0.0}}}};
    const double delta = 0.05;
    RefGenConfig cfg;  // bonus 0.05, step 0.3
    const Waypoint w = next_waypoint({0, 0, 0}, {1, 0}, obs, 0, delta, cfg);
    CHECK(w.slid);
    CHECK(w.tie_break);  // goal direction anti-parallel to the normal
    CHECK(w.feasible);
    // Hand geometry: h(q) = 0.3 - q_x, level 0.1, so the step of length 0.3 ends
    // at x = 0.2 with |y| = sqrt(0.3^2 - 0.2^2). The counterclockwise rotation of the
    // normal (-1, 0) is (0, -1), hence y < 0.
    CHECK(w.reference.x == doctest::Approx(0.2));
    CHECK(w.reference.y == doctest::Approx(-std::sqrt(0.05)));
    CHECK(w.reference.x > 0.0);
    CHECK(w.reference.theta == doctest::Approx(std::atan2(-std::sqrt(0.05), 0.2)));
    // deterministic, including the tie-break
    const Waypoint again = next_waypoint({0, 0, 0}, {1, 0}, obs, 0, delta, cfg);
    CHECK(again.reference == w.reference);
}

TEST_CASE("agent inside an obstacle passes the goal through") {
    const std::vector<ObstacleSpec> obs{{0, 0.3, StaticMotion{{0.1, 0.0}}}};
    const Waypoint w = next_waypoint({0, 0, 0}, {2, 1}, obs, 0, 0.05, {});
    CHECK(w.pass_through);
    CHECK(w.reference.x == 2.0);
    CHECK(w.reference.y == 1.0);
}

TEST_CASE("goal test uses a closed ball") {
    CHECK(goal_reached({1, 1, 0}, {1, 1}, 0.1));
    CHECK(goal_reached({1.0, 0.0, 0}, {0.75, 0.0}, 0.25));  // distance == tolerance, exactly representable
    CHECK_FALSE(goal_reached({1.0 + 1e-9, 0.0, 0}, {0.75, 0.0}, 0.25));
}

TEST_CASE("free-space progress is exactly min(step, distance)") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int t = 0; t < 200; ++t) {
        const State x{u(rng), u(rng), 0};
        const Vec2 g{u(rng), u(rng)};
        const double before = (x.position() - g).norm();
        const Waypoint w = next_waypoint(x, g, {}, 0, 0.0, {});
        const double after = (w.reference.position() - g).norm();
        CHECK(before - after == doctest::Approx(std::min(0.3, before)).epsilon(1e-9));
    }
}

TEST_CASE("emitted waypoints satisfy every tightened half-space") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-2, 2);
    int checked = 0;
    for (int t = 0; t < 300; ++t) {
        std::vector<ObstacleSpec> obs;
        for (int i = 0; i < 3; ++i) obs.push_back({i, 0.2, StaticMotion{{u(rng), u(rng)}}});
        const State x{u(rng), u(rng), 0};
        const double delta = 0.05;
        const Waypoint w = next_waypoint(x, {u(rng), u(rng)}, obs, 0, delta, {});
        if (w.pass_through) continue;
        const ConstraintSet set = build_constraint_set(obs, 0, x.position(), delta);
        if (set.min_slack(x.position()) < 0.0) continue;  // agent already inside the tightened band
        CHECK(set.min_slack(w.reference.position()) >= -1e-9);
        CHECK(w.feasible);
        ++checked;
    }
    CHECK(checked > 100);
}
