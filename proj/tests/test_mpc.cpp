#include <doctest.h>

#include <cmath>
#include <random>

#include "koopnav/errors.hpp"
#include "koopnav/mpc.hpp"

using namespace koopnav;

namespace {

const KoopmanModel& unicycle_model() {
    static const KoopmanModel model = [] {
        CollectionConfig cfg;
        cfg.episodes = 60;
        cfg.steps = 50;
        return fit_edmdc(collect_dataset(cfg).transitions, Dictionary::default11(), {1e-8, true});
    }();
    return model;
}

KoopmanModel small_linear_model() {
    KoopmanModel m{Dictionary::identity(3), MatrixXd::Identity(3, 3), MatrixXd(3, 2), {}, {}};
    m.A(0, 2) = 0.05;
    m.B << 0.1, 0.0, 0.02, 0.03, 0.0, 0.1;
    return m;
}

MpcConfig quiet_config() {
    MpcConfig cfg;
    cfg.solver.kkt_tolerance = 1e-7;
    return cfg;
}

}  // namespace

TEST_CASE("horizon one matches the normal-equations tracking control") {
    const KoopmanModel m = small_linear_model();
    MpcConfig cfg = quiet_config();
    cfg.horizon = 1;
    cfg.Q = MatrixXd::Identity(3, 3);
    cfg.R = MatrixXd::Identity(2, 2);
    const State x{0.1, -0.2, 0.3};
    const State ref{0.15, -0.1, 0.4};
    const MpcQp mq = build_mpc_qp(m, x, ref, ConstraintSet{}, cfg);
    const QpSolution s = solve(mq.problem);
    REQUIRE(s.status == QpStatus::Optimal);

    // min |A z0 + B u - zr|^2 + |u|^2
    const VectorXd z0 = x.vector(), zr = ref.vector();
    const VectorXd u = -(m.B.transpose() * m.B + MatrixXd::Identity(2, 2)).ldlt().solve(m.B.transpose() * (m.A * z0 - zr));
    CHECK((s.w.segment(mq.layout.u(0), 2) - u).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((s.w.segment(mq.layout.z(1), 3) - (m.A * z0 + m.B * u)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("layout and shape checks") {
    const KoopmanModel& m = unicycle_model();
    MpcConfig cfg;
    cfg.horizon = 4;
    const MpcQp mq = build_mpc_qp(m, {0, 0, 0}, {1, 0, 0}, ConstraintSet{}, cfg);
    CHECK(mq.layout.dim() == 4 * (11 + 2) + 4 + 1);
    CHECK(mq.problem.A_in.rows() == 0);  // only bounds without obstacles
    CHECK(mq.problem.A_eq.rows() == 4 * 11);

    cfg.slack_norm = SlackNorm::Inf;
    CHECK(build_mpc_qp(m, {0, 0, 0}, {1, 0, 0}, ConstraintSet{}, cfg).layout.dim() == 4 * 13 + 2 * 5);

    MpcConfig bad;
    bad.Q = MatrixXd::Identity(5, 5);
    CHECK_THROWS_AS(build_mpc_qp(m, {0, 0, 0}, {1, 0, 0}, ConstraintSet{}, bad), ConfigError);
    MpcConfig bad_r;
    bad_r.R = MatrixXd::Identity(3, 3);
    CHECK_THROWS_AS(build_mpc_qp(m, {0, 0, 0}, {1, 0, 0}, ConstraintSet{}, bad_r), ConfigError);
    MpcConfig bad_rho;
    bad_rho.rho1 = 0.0;
    CHECK_THROWS_AS(build_mpc_qp(m, {0, 0, 0}, {1, 0, 0}, ConstraintSet{}, bad_rho), ConfigError);
}

TEST_CASE("no obstacles: zero slack, forward motion toward a reference ahead") {
    MpcController ctl(quiet_config());
    const auto r = ctl.step(unicycle_model(), {0, 0, 0}, {0.3, 0, 0}, {}, 0, 0.05);
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK_FALSE(r.fallback);
    CHECK(r.max_slack() <= 1e-8);
    CHECK(r.control.v > 0.1);
    CHECK(r.lifted_trajectory.size() == 11);
}

TEST_CASE("tracking the current state commands almost nothing") {
    MpcController ctl(quiet_config());
    const State x{0.4, -0.7, 1.1};
    const auto r = ctl.step(unicycle_model(), x, x, {}, 0, 0.05);
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK(std::abs(r.control.v) < 0.05);
    CHECK(std::abs(r.control.omega) < 0.1);
}

TEST_CASE("start state violating the tightened constraint stays feasible through slack") {
    const std::vector<ObstacleSpec> obs{{0, 0.2, StaticMotion{{0.35, 0.0}}}};
    MpcController ctl(quiet_config());
    // clearance 0.15 < Delta 0.3
    const auto r = ctl.step(unicycle_model(), {0, 0, 0}, {1, 0, 0}, obs, 0, 0.3);
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK_FALSE(r.fallback);
    CHECK(r.max_slack() > 0.0);
    for (std::size_t i = 0; i < r.slacks.size(); ++i) {
        CHECK(r.slacks[i] + r.slack_shared <= 0.5 + 1e-6);
    }
}

TEST_CASE("obstacle ahead: the controller backs off instead of closing in") {
    const std::vector<ObstacleSpec> obs{{0, 0.2, StaticMotion{{0.35, 0.05}}}};
    MpcConfig cfg = quiet_config();
    MpcController free_ctl(cfg), obs_ctl(cfg);
    const auto free_r = free_ctl.step(unicycle_model(), {0, 0, 0}, {1, 0, 0}, {}, 0, 0.3);
    const auto r = obs_ctl.step(unicycle_model(), {0, 0, 0}, {1, 0, 0}, obs, 0, 0.3);
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK(r.control.v < free_r.control.v);
    // the commanded step does not move toward the violated side of the half-space
    const HalfSpace h = halfspace_from_circle({0.35, 0.05}, 0.2, {0, 0});
    const State next = unicycle_step({0, 0, 0}, r.control, 0.1);
    CHECK(h.evaluate(next.position()) >= h.evaluate({0, 0}) - 1e-9);
}

TEST_CASE("obstacle ahead with a sideways heading: the first turn opens clearance") {
    // Agent heading up-right toward an obstacle sitting slightly above its path.
    const std::vector<ObstacleSpec> obs{{0, 0.2, StaticMotion{{0.4, 0.25}}}};
    const State x{0, 0, 0.6};
    MpcController ctl(quiet_config());
    const auto r = ctl.step(unicycle_model(), x, {1, 0, 0}, obs, 0, 0.15);
    REQUIRE(r.status == QpStatus::Optimal);
    // the normal of the violated side points from the obstacle to the agent (down-left);
    // the heading must rotate clockwise, away from the obstacle
    CHECK(r.control.omega < 0.0);
}

TEST_CASE("raising rho1 never increases total slack") {
    const std::vector<ObstacleSpec> obs{{0, 0.25, StaticMotion{{0.3, 0.0}}}, {1, 0.2, StaticMotion{{0.0, 0.4}}}};
    double prev = std::numeric_limits<double>::infinity();
    for (double rho : {1.0, 10.0, 100.0, 1000.0}) {
        MpcConfig cfg = quiet_config();
        cfg.rho1 = rho;
        cfg.warm_start = false;
        MpcController ctl(cfg);
        const auto r = ctl.step(unicycle_model(), {0, 0, 0.2}, {1, 0.3, 0}, obs, 0, 0.2);
        REQUIRE(r.status == QpStatus::Optimal);
        double total = r.slack_shared;
        for (double e : r.slacks) total += e;
        CHECK(total <= prev + 1e-6);
        prev = total;
    }
}

TEST_CASE("softening is exact when inactive") {
    const std::vector<ObstacleSpec> obs{{0, 0.2, StaticMotion{{1.0, 1.0}}}};
    const State x{0, 0, 0};
    const State ref{0.3, 0.1, 0};
    const auto sets = horizon_constraints(obs, 0, x.position(), 0.05, 10, false);
    MpcConfig soft = quiet_config();
    const MpcQp sq = build_mpc_qp(unicycle_model(), x, ref, sets, soft);
    const QpSolution ss = solve(sq.problem, soft.solver);
    REQUIRE(ss.status == QpStatus::Optimal);
    for (int i = 0; i <= 10; ++i) {
        CHECK(ss.w(i < 10 ? sq.layout.eps(i) : sq.layout.eps_shared()) <= 1e-8);
    }
    // lifted dynamics rows hold along the plan: z_{i+1} = A z_i + B(z_0) u_i
    const MatrixXd B0 = unicycle_model().input_matrix(sq.z0);
    VectorXd zi = sq.z0;
    for (int i = 0; i < 10; ++i) {
        const VectorXd zn = ss.w.segment(sq.layout.z(i + 1), 11);
        CHECK((zn - unicycle_model().A * zi - B0 * ss.w.segment(sq.layout.u(i), 2)).cwiseAbs().maxCoeff() < 1e-6);
        zi = zn;
    }
    MpcConfig hard = soft;
    hard.soft_constraints = false;
    const MpcQp hq = build_mpc_qp(unicycle_model(), x, ref, sets, hard);
    const QpSolution hs = solve(hq.problem, hard.solver);
    REQUIRE(hs.status == QpStatus::Optimal);
    CHECK(std::abs(ss.objective - hs.objective) <= 1e-5 * std::max(1.0, std::abs(hs.objective)));
}

TEST_CASE("zero slack implies the predicted positions keep the margin") {
    const std::vector<ObstacleSpec> obs{{0, 0.2, StaticMotion{{0.8, 0.1}}}, {1, 0.3, LinearMotion{{0.2, -0.9}, {0.0, 0.02}}}};
    MpcConfig cfg = quiet_config();
    cfg.predict_obstacles = true;
    MpcController ctl(cfg);
    State x{-0.5, 0.0, 0.0};
    Plant plant({}, 1);
    const double delta = 0.08;
    for (long k = 0; k < 25; ++k) {
        const auto r = ctl.step(unicycle_model(), x, {1.5, 0, 0}, obs, k, delta);
        REQUIRE(r.status == QpStatus::Optimal);
        const auto sets = horizon_constraints(obs, k, x.position(), delta, cfg.horizon, true);
        if (r.max_slack() <= 1e-9) {
            for (int i = 1; i <= cfg.horizon; ++i) {
                const Vec2 pos = r.lifted_trajectory[static_cast<std::size_t>(i)].head<2>();
                CHECK(sets[static_cast<std::size_t>(i - 1)].min_slack(pos) >= -1e-6);
            }
        }
        x = plant.step(x, r.control);
    }
}

TEST_CASE("identical inputs give identical controls without warm start") {
    const std::vector<ObstacleSpec> obs{{0, 0.2, StaticMotion{{0.5, 0.2}}}};
    MpcConfig cfg = quiet_config();
    cfg.warm_start = false;
    MpcController a(cfg);
    const auto r1 = a.step(unicycle_model(), {0, 0, 0.1}, {1, 0, 0}, obs, 3, 0.1);
    const auto r2 = a.step(unicycle_model(), {0, 0, 0.1}, {1, 0, 0}, obs, 3, 0.1);
    CHECK(r1.control == r2.control);
    CHECK(r1.iterations == r2.iterations);
}

TEST_CASE("degenerate constraint brakes") {
    const std::vector<ObstacleSpec> obs{{0, 0.2, StaticMotion{{0.0, 0.0}}}};
    MpcController ctl(quiet_config());
    const auto r = ctl.step(unicycle_model(), {0, 0, 0}, {1, 0, 0}, obs, 0, 0.1);
    CHECK(r.fallback);
    CHECK(r.control == Control{0.0, 0.0});
}

TEST_CASE("infinity-norm slack variant solves") {
    const std::vector<ObstacleSpec> obs{{0, 0.2, StaticMotion{{0.35, 0.0}}}};
    MpcConfig cfg = quiet_config();
    cfg.slack_norm = SlackNorm::Inf;
    MpcController ctl(cfg);
    const auto r = ctl.step(unicycle_model(), {0, 0, 0}, {1, 0, 0}, obs, 0, 0.3);
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK(r.max_slack() > 0.0);
}
