#include <doctest.h>

#include <cmath>
#include <random>

#include "koopnav/errors.hpp"
#include "koopnav/safe_sets.hpp"

using namespace koopnav;

TEST_CASE("half-space from a circle") {
    const HalfSpace h = halfspace_from_circle({1, 0}, 0.5, {0, 0}, 3);
    CHECK(h.normal.x() == doctest::Approx(-1.0));
    CHECK(h.normal.y() == doctest::Approx(0.0));
    CHECK(h.evaluate({0, 0}) == doctest::Approx(0.5));
    CHECK(h.evaluate({0.5, 0}) == doctest::Approx(0.0));  // nearest point of the disk
    CHECK(h.evaluate({-1, 7}) == doctest::Approx(-(-1 - 1.0) - 0.5));
    CHECK(h.obstacle_id == 3);

    const HalfSpace axis = halfspace_from_circle({0, 0}, 1.0, {0, 2});
    CHECK(axis.normal.x() == doctest::Approx(0.0));
    CHECK(axis.normal.y() == doctest::Approx(1.0));
    CHECK(axis.evaluate({5, 3}) == doctest::Approx(2.0));

    const HalfSpace boundary = halfspace_from_circle({0, 0}, 1.0, {0.6, 0.8});
    CHECK(std::abs(boundary.evaluate({0.6, 0.8})) < 1e-15);
}

TEST_CASE("degenerate normal") {
    try {
        (void)halfspace_from_circle({1, 1}, 0.2, {1, 1}, 7);
        FAIL("expected DegenerateNormal");
    } catch (const DegenerateNormal& e) {
        CHECK(e.obstacle_id() == 7);
    }
    const std::vector<ObstacleSpec> obs{{4, 0.2, StaticMotion{{1, 1}}}};
    CHECK_THROWS_AS(build_constraint_set(obs, 0, {1, 1}, 0.0), DegenerateNormal);
}

TEST_CASE("tightening") {
    const HalfSpace h = halfspace_from_circle({1, 0}, 0.5, {0, 0});
    const TightenedHalfSpace t0 = tighten(h, 0.0);
    CHECK(t0.slack({0, 0}) == doctest::Approx(0.5));
    const TightenedHalfSpace t = tighten(h, 0.06);
    CHECK(t.slack({0, 0}) == doctest::Approx(0.44));
    CHECK(t.base.offset == h.offset);
    CHECK(t.contains({0, 0}));
    CHECK_FALSE(tighten(h, 0.6).contains({0, 0}));
}

TEST_CASE("constraint sets") {
    CHECK(build_constraint_set({}, 0, {0, 0}, 0.1).empty());
    CHECK(std::isinf(build_constraint_set({}, 0, {0, 0}, 0.1).min_slack({0, 0})));

    const std::vector<ObstacleSpec> obs{{5, 0.3, StaticMotion{{2, 0}}}, {1, 0.2, StaticMotion{{0, -1}}}};
    const ConstraintSet c = build_constraint_set(obs, 0, {0, 0}, 0.05);
    REQUIRE(c.rows() == 2);
    CHECK(c.obstacle_ids == std::vector<int>{1, 5});
    for (int i = 0; i < 2; ++i) CHECK(std::abs(c.H.row(i).norm() - 1.0) < 1e-12);
    CHECK(c.margin == 0.05);
    CHECK(c.min_slack({0, 0}) == doctest::Approx(0.8 - 0.05));
    CHECK(c.row(0).base.obstacle_id == 1);
}

TEST_CASE("moving obstacle shifts the constraint by the center displacement") {
    const std::vector<ObstacleSpec> obs{{0, 0.3, LinearMotion{{1, 0.5}, {0.05, -0.02}}}};
    const Vec2 agent{-1, 0.2};
    const ConstraintSet a = build_constraint_set(obs, 10, agent, 0.1);
    const ConstraintSet b = build_constraint_set(obs, 11, agent, 0.1);
    const Vec2 shift = obstacle_center(obs[0], 11) - obstacle_center(obs[0], 10);
    // independent recomputation of both tangent planes
    for (long k : {10L, 11L}) {
        const Vec2 c = obstacle_center(obs[0], k);
        const Vec2 n = (agent - c).normalized();
        const ConstraintSet& s = k == 10 ? a : b;
        CHECK((s.H.row(0).transpose() - n).norm() < 1e-14);
        CHECK(s.b(0) == doctest::Approx(-n.dot(c) - 0.3));
    }
    // a point translated with the obstacle keeps its value up to the normal change
    const HalfSpace ha = a.row(0).base;
    const HalfSpace hb = b.row(0).base;
    const Vec2 q = obstacle_center(obs[0], 10) + Vec2(-0.4, 0.0);
    CHECK(std::abs(hb.evaluate(q + shift) - ha.evaluate(q)) < 0.05);
}

TEST_CASE("conservatism and re-linearization consistency") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-2, 2);
    const Vec2 c{0.3, -0.2};
    const double r = 0.4;
    const std::vector<ObstacleSpec> obs{{0, r, StaticMotion{c}}};
    for (int t = 0; t < 500; ++t) {
        const Vec2 agent{u(rng), u(rng)};
        const HalfSpace h = halfspace_from_circle(c, r, agent);
        CHECK(h.evaluate(agent) == doctest::Approx(min_obstacle_distance({agent.x(), agent.y(), 0}, obs, 0)));
        const Vec2 q{u(rng), u(rng)};
        if (h.evaluate(q) >= 0.0) CHECK((q - c).norm() >= r - 1e-12);
    }
}
