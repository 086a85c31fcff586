#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "koopnav/errors.hpp"
#include "koopnav/harness.hpp"
#include "koopnav/io.hpp"

using namespace koopnav;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "koopnav_test_io";
    fs::create_directories(dir);
    return dir / name;
}

KoopmanModel fitted() {
    CollectionConfig cfg;
    cfg.episodes = 30;
    cfg.steps = 50;
    return fit_edmdc(collect_dataset(cfg).transitions, Dictionary::default11(), {1e-8, true});
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("model JSON round trip is bit exact") {
    const KoopmanModel m = fitted();
    const fs::path p = scratch("model.json");
    io::save_model(p, m);
    const KoopmanModel r = io::load_model(p);
    CHECK(r.dictionary.name() == "default11");
    CHECK(r.A == m.A);
    CHECK(r.B == m.B);
    REQUIRE(r.N.size() == m.N.size());
    for (std::size_t j = 0; j < m.N.size(); ++j) CHECK(r.N[j] == m.N[j]);
    CHECK(r.diagnostics.residual_norm == m.diagnostics.residual_norm);
    CHECK(predict_one_step(r, State{0.1, 0.2, 0.3}, Control{0.4, 0.5}) ==
          predict_one_step(m, State{0.1, 0.2, 0.3}, Control{0.4, 0.5}));
}

TEST_CASE("model JSON schema errors") {
    auto doc = io::model_to_json(fitted());
    doc["format_version"] = 99;
    CHECK_THROWS_AS(io::model_from_json(doc), ConfigError);
    doc = io::model_to_json(fitted());
    doc["dictionary"] = "pose5";
    CHECK_THROWS_AS(io::model_from_json(doc), ConfigError);
    CHECK_THROWS_AS(io::load_model(scratch("does_not_exist.json")), IoError);
}

TEST_CASE("calibration JSON round trip, including the infinite atom") {
    ScoreSet s;
    for (int i = 1; i <= 50; ++i) s.scores.push_back(0.001 * i);
    const CalibrationResult c = calibrate(s, 0.1);
    const CalibrationResult r = io::calibration_from_json(io::calibration_to_json(c));
    CHECK(r.quantile == c.quantile);
    CHECK(r.delta == c.delta);
    CHECK(r.sorted_scores == c.sorted_scores);

    const CalibrationResult inf = calibrate(s, 0.01);
    const CalibrationResult ri = io::calibration_from_json(io::calibration_to_json(inf));
    CHECK(ri.quantile.is_infinite());
    CHECK_FALSE(ri.delta.has_value());
}

TEST_CASE("scenario files load and round trip") {
    for (const char* name : {"fig2.scenario", "fig3.scenario", "fig4.scenario"}) {
        const Scenario s = io::load_scenario(fs::path(KOOPNAV_SCENARIO_DIR) / name);
        CHECK_FALSE(s.targets.empty());
        const Scenario r = io::scenario_from_json(io::scenario_to_json(s));
        CHECK(io::scenario_to_json(r) == io::scenario_to_json(s));
    }
    const Scenario fig2 = io::load_scenario(fs::path(KOOPNAV_SCENARIO_DIR) / "fig2.scenario");
    CHECK(fig2.start == State{-2, -2, 0});
    CHECK(fig2.targets.back() == Vec2(2, 0));
    CHECK(fig2.alpha == 0.02);
    CHECK(fig2.horizon == 10);

    auto bad = io::scenario_to_json(fig2);
    bad["targets"] = io::json::array();
    CHECK_THROWS_AS(io::scenario_from_json(bad), ConfigError);
    bad = io::scenario_to_json(fig2);
    bad["obstacles"][0]["motion"]["type"] = "teleport";
    CHECK_THROWS_AS(io::scenario_from_json(bad), ConfigError);
}

TEST_CASE("QP dump round trip") {
    QpProblem p = QpProblem::unconstrained(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Ones(2));
    p.lb = Eigen::VectorXd::Constant(2, -std::numeric_limits<double>::infinity());
    p.ub = Eigen::VectorXd::Constant(2, 0.5);
    const QpProblem r = io::qp_from_json(io::qp_to_json(p));
    CHECK(r.P == p.P);
    CHECK(r.q == p.q);
    CHECK(r.lb == p.lb);
    CHECK(r.ub == p.ub);
}

TEST_CASE("transition and calibration CSVs") {
    CollectionConfig cfg;
    cfg.episodes = 2;
    cfg.steps = 5;
    const auto t = collect_dataset(cfg).transitions;
    const fs::path p = scratch("data.csv");
    io::write_transitions_csv(p, t, "config_hash=abc");
    const auto r = io::read_transitions_csv(p);
    REQUIRE(r.size() == t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(r[i].state == t[i].state);
        CHECK(r[i].control == t[i].control);
        CHECK(r[i].next_state == t[i].next_state);
    }
    io::write_transitions_csv(p, {});
    CHECK(count_lines(io::read_text(p)) == 1);

    std::vector<CalibrationPair> pairs{{{1, 2, 0.1}, {1.1, 2, 0.2}, {3, 4}}};
    const fs::path cp = scratch("pairs.csv");
    io::write_calibration_csv(cp, pairs);
    const auto rp = io::read_calibration_csv(cp);
    REQUIRE(rp.size() == 1);
    CHECK(rp[0].truth == pairs[0].truth);
    CHECK(rp[0].provenance.step == 4);
    CHECK(io::read_text(cp).find("score") != std::string::npos);

    io::write_text(p, "x,y,theta,v,omega,x_next,y_next,theta_next\n1,2,3\n");
    CHECK_THROWS_AS(io::read_transitions_csv(p), IoError);
}

TEST_CASE("trajectory CSV: header-only for an empty log, round trip with aggregates") {
    TrajectoryLog empty;
    empty.scenario = "s";
    empty.arm = "rg";
    const std::string text = io::trajectory_csv(empty);
    CHECK(count_lines(text) == 2);  // metadata comment + header
    CHECK(text.find("k,x,y,theta") != std::string::npos);

    Scenario sc;
    sc.name = "roundtrip";
    sc.start = {-1, 0, 0};
    sc.targets = {{0.2, 0.1}};
    sc.obstacles = {{3, 0.15, SinusoidalMotion{{-0.4, 0.1}, {0, 0.1}, 30, 0.5}}};
    sc.max_steps = 60;
    sc.horizon = 5;
    sc.disturbance = {0.2, 0.2};
    const auto rep = experiment_repeat(sc, fitted(), 0.05, 1, scenario_mpc_config(sc), {});
    const TrajectoryLog& log = rep.runs[0].log;
    const fs::path p = scratch("traj.csv");
    io::write_trajectory(p, log);
    const TrajectoryLog back = io::read_trajectory(p);
    CHECK(back.records.size() == log.records.size());
    CHECK(back.delta == log.delta);
    CHECK(back.alpha == log.alpha);
    CHECK(back.config_hash == log.config_hash);
    CHECK(back.final_state == log.final_state);
    CHECK(back.records[3].obstacles.size() == 1);
    CHECK(back.records[3].obstacles[0].id == 3);
    const RunAggregates a = compute_aggregates(log, sc.max_steps);
    const RunAggregates b = compute_aggregates(back, sc.max_steps);
    CHECK(io::aggregates_to_json(a) == io::aggregates_to_json(b));

    // bodies are byte-identical across identical runs (timing lives in the sidecar)
    const auto rep2 = experiment_repeat(sc, fitted(), 0.05, 1, scenario_mpc_config(sc), {});
    CHECK(io::trajectory_csv(rep2.runs[0].log) == io::trajectory_csv(log));
}

TEST_CASE("trajectory CSV schema errors") {
    CHECK_THROWS_AS(io::parse_trajectory_csv("k,x\n1,2\n"), IoError);
    CHECK_THROWS_AS(io::parse_trajectory_csv("# schema=other-v9 final=0;0;0\n"), IoError);
    TrajectoryLog log;
    log.records.emplace_back();
    std::string text = io::trajectory_csv(log);
    text += "1,2,3\n";
    CHECK_THROWS_AS(io::parse_trajectory_csv(text), IoError);
}

TEST_CASE("report emission") {
    Scenario sc;
    sc.name = "emit";
    sc.targets = {{0.5, 0}};
    sc.max_steps = 30;
    sc.horizon = 4;
    const auto rep = experiment_repeat(sc, fitted(), 0.05, 2, scenario_mpc_config(sc), {});
    const fs::path dir = scratch("report");
    fs::remove_all(dir);
    io::emit_report(rep, dir);
    CHECK(fs::exists(dir / "report.json"));
    CHECK(fs::exists(dir / "trajectory_emit_rg_1.csv"));
    CHECK(fs::exists(dir / "trajectory_emit_rg_2_timing.csv"));
    const auto doc = io::read_json(dir / "report.json");
    CHECK(doc["runs"].size() == 2);
    CHECK(doc["trajectory_schema"] == io::kTrajectorySchema);
}

TEST_CASE("hash helper") {
    CHECK(io::fnv1a_hex("") == "cbf29ce484222325");
    CHECK(io::fnv1a_hex("a") == "af63dc4c8601ec8c");
}
