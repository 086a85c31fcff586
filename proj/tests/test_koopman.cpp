#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "koopnav/errors.hpp"
#include "koopnav/koopman.hpp"
#include "oracles.hpp"

using namespace koopnav;

namespace {

// Entry-wise evaluation of the 11 observables, kept separate from the library.
VectorXd reference_lift(double x, double y, double th) {
    const double c = std::cos(th), s = std::sin(th);
    VectorXd z(11);
    z << x, y, c, s, s * c, c * c, x * c, x * s, y * c, y * s, 1.0;
    return z;
}

struct LinearData {
    MatrixXd A0, B0;
    std::vector<VectorXd> x, u, xn;
};

LinearData linear_data(std::uint64_t seed, int n, int m, int M) {
    std::mt19937_64 rng(seed);
    auto [A0, B0] = oracle::random_stable_system(rng, n, m);
    std::normal_distribution<double> g(0.0, 1.0);
    LinearData d{A0, B0, {}, {}, {}};
    for (int k = 0; k < M; ++k) {
        VectorXd x(n), u(m);
        for (int i = 0; i < n; ++i) x(i) = g(rng);
        for (int i = 0; i < m; ++i) u(i) = g(rng);
        d.x.push_back(x);
        d.u.push_back(u);
        d.xn.push_back(A0 * x + B0 * u);
    }
    return d;
}

std::vector<Transition> unicycle_data() {
    CollectionConfig cfg;
    cfg.episodes = 40;
    cfg.steps = 50;
    return collect_dataset(cfg).transitions;
}

}  // namespace

TEST_CASE("lift: default dictionary examples") {
    const Dictionary d = Dictionary::default11();
    CHECK(d.dim() == 11);
    VectorXd e0(11);
    e0 << 0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 1;
    CHECK((lift(d, {0, 0, 0}) - e0).cwiseAbs().maxCoeff() == 0.0);

    VectorXd e1(11);
    e1 << 1, 2, 0, 1, 0, 0, 0, 1, 0, 2, 1;
    CHECK((lift(d, {1, 2, std::numbers::pi / 2}) - e1).cwiseAbs().maxCoeff() < 1e-15);

    CHECK((lift(d, {0.3, -0.4, 0.7}) - reference_lift(0.3, -0.4, 0.7)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("decode examples") {
    KoopmanModel m{Dictionary::default11(), MatrixXd::Zero(11, 11), MatrixXd::Zero(11, 2), {}, {}};
    VectorXd z = VectorXd::Zero(11);
    z(0) = 1;
    z(1) = 2;
    z(2) = 0.6;
    z(3) = 0.8;
    const State s = decode(m, z);
    CHECK(s.x == 1.0);
    CHECK(s.y == 2.0);
    CHECK(s.theta == doctest::Approx(std::atan2(0.8, 0.6)).epsilon(1e-15));

    z(2) = 2;
    z(3) = 0;
    CHECK(decode(m, z).theta == 0.0);

    z(2) = 0;
    CHECK_THROWS_AS(decode(m, z), DegenerateHeading);

    // zero model: the one-step prediction decodes the zero vector
    CHECK_THROWS_AS(predict_one_step(m, State{0.1, 0.2, 0.3}, Control{0.5, 0.5}), DegenerateHeading);
}

TEST_CASE("decode inverts lift on the workspace") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> pos(-3, 3), ang(-std::numbers::pi, std::numbers::pi);
    for (const auto& dict : {Dictionary::default11(), Dictionary::pose5()}) {
        KoopmanModel m{dict, MatrixXd::Zero(dict.dim(), dict.dim()), MatrixXd::Zero(dict.dim(), 2), {}, {}};
        for (int i = 0; i < 200; ++i) {
            const State s{pos(rng), pos(rng), ang(rng)};
            const State r = decode(m, lift(dict, s));
            CHECK(r.x == s.x);
            CHECK(r.y == s.y);
            CHECK(std::abs(wrap_angle(r.theta - s.theta)) < 1e-12);
        }
    }
}

TEST_CASE("dictionary lookup by name") {
    CHECK(Dictionary::from_name("default11").dim() == 11);
    CHECK(Dictionary::from_name("pose5").dim() == 5);
    CHECK(Dictionary::from_name("identity4").dim() == 4);
    CHECK_THROWS_AS(Dictionary::from_name("nope"), ConfigError);
}

TEST_CASE("EDMDc recovers a linear system exactly") {
    const auto d = linear_data(11, 3, 2, 300);
    const KoopmanModel m = fit_edmdc(d.x, d.u, d.xn, Dictionary::identity(3), {0.0, false});
    CHECK((m.A - d.A0).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((m.B - d.B0).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(m.diagnostics.samples == 300);

    const VectorXd x = VectorXd::Constant(3, 0.4);
    const VectorXd u = VectorXd::Constant(2, -0.2);
    CHECK((predict_one_step(m, x, u) - (d.A0 * x + d.B0 * u)).norm() < 1e-8);
}

TEST_CASE("EDMDc rejects underdetermined fits") {
    const auto d = linear_data(5, 3, 2, 4);
    CHECK_THROWS_AS(fit_edmdc(d.x, d.u, d.xn, Dictionary::identity(3), {0.0, false}), InvalidInput);

    const auto all = unicycle_data();
    std::vector<Transition> few(all.begin(), all.begin() + 10);
    CHECK_THROWS_AS(fit_edmdc(few, Dictionary::default11()), InvalidInput);
}

TEST_CASE("EDMDc names the rank-deficient block") {
    auto d = linear_data(5, 3, 2, 100);
    for (auto& u : d.u) u(1) = 0.0;  // one input never excited
    try {
        fit_edmdc(d.x, d.u, d.xn, Dictionary::identity(3), {0.0, false});
        FAIL("expected IllConditioned");
    } catch (const IllConditioned& e) {
        CHECK(e.block() == "input");
    }
    // ridge makes the same problem solvable
    CHECK_NOTHROW(fit_edmdc(d.x, d.u, d.xn, Dictionary::identity(3), {1e-6, false}));
}

TEST_CASE("unicycle fit has a strictly positive residual") {
    const auto data = unicycle_data();
    const KoopmanModel lin = fit_edmdc(data, Dictionary::default11());
    CHECK(lin.lifted_dim() == 11);
    CHECK(lin.input_dim() == 2);
    CHECK(lin.diagnostics.residual_norm > 0.0);
    CHECK(std::isfinite(lin.diagnostics.condition_number));

    const KoopmanModel bil = fit_edmdc(data, Dictionary::default11(), {1e-8, true});
    CHECK(bil.bilinear());
    CHECK(bil.N.size() == 2);
    CHECK(bil.diagnostics.residual_norm > 0.0);
    CHECK(bil.diagnostics.residual_norm < lin.diagnostics.residual_norm);
}

TEST_CASE("fit residual is non-decreasing in the ridge weight") {
    const auto data = unicycle_data();
    double prev = -1.0;
    for (double ridge : {0.0, 1e-8, 1e-4, 1e-2, 1.0, 10.0, 1000.0}) {
        const double r = fit_edmdc(data, Dictionary::default11(), {ridge, false}).diagnostics.residual_norm;
        CHECK(r >= prev * (1.0 - 1e-12));
        prev = r;
    }
}

TEST_CASE("fitted unicycle model regression pin") {
    const auto data = unicycle_data();
    const KoopmanModel m = fit_edmdc(data, Dictionary::default11(), {1e-8, true});
    const State s = predict_one_step(m, State{0.5, -0.3, 0.4}, Control{0.6, 0.8});
    const State truth = unicycle_step({0.5, -0.3, 0.4}, {0.6, 0.8}, 0.1);
    // the model is approximate but must be close on a typical in-distribution step
    CHECK(std::hypot(s.x - truth.x, s.y - truth.y) < 0.02);
    CHECK(std::abs(wrap_angle(s.theta - truth.theta)) < 0.05);
    // same data, same fit, same numbers
    const State again = predict_one_step(fit_edmdc(data, Dictionary::default11(), {1e-8, true}),
                                         State{0.5, -0.3, 0.4}, Control{0.6, 0.8});
    CHECK(again == s);
}

TEST_CASE("rollout") {
    const auto data = unicycle_data();
    const KoopmanModel m = fit_edmdc(data, Dictionary::default11(), {1e-8, true});
    const State s0{0.1, 0.2, -0.5};
    CHECK(rollout(m, s0, {}).empty());

    const auto one = rollout(m, s0, {Control{0.4, 0.3}});
    REQUIRE(one.size() == 1);
    CHECK(one[0] == predict_one_step(m, s0, Control{0.4, 0.3}));

    // lifted identity z+ = A z + B(z) u holds to machine precision
    std::vector<VectorXd> us;
    for (int i = 0; i < 15; ++i) us.push_back(Eigen::Vector2d(0.5, 0.1 * i - 0.7));
    const auto zs = rollout_lifted(m, lift(m.dictionary, s0), us);
    REQUIRE(zs.size() == us.size() + 1);
    for (std::size_t i = 0; i + 1 < zs.size(); ++i) {
        const VectorXd r = zs[i + 1] - m.A * zs[i] - m.input_matrix(zs[i]) * us[i];
        CHECK(r.cwiseAbs().maxCoeff() < 1e-13);
    }

    // linear-system model, ten steps against brute-force simulation
    const auto d = linear_data(21, 2, 1, 200);
    const KoopmanModel lm = fit_edmdc(d.x, d.u, d.xn, Dictionary::identity(2), {0.0, false});
    VectorXd x = VectorXd::Constant(2, 0.7);
    std::vector<VectorXd> lu;
    for (int i = 0; i < 10; ++i) lu.push_back(VectorXd::Constant(1, std::sin(i)));
    const auto lz = rollout_lifted(lm, x, lu);
    for (int i = 0; i < 10; ++i) {
        x = d.A0 * x + d.B0 * lu[static_cast<std::size_t>(i)];
        CHECK((lz[static_cast<std::size_t>(i) + 1] - x).norm() < 1e-6);
    }
}
