#include "koopnav/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "koopnav/errors.hpp"
#include "koopnav/io.hpp"

namespace koopnav {

namespace {

constexpr double kSlackActive = 1e-6;

}  // namespace

void Scenario::validate() const {
    if (targets.empty()) throw ConfigError("scenario '" + name + "' has no targets");
    if (max_steps <= 0) throw ConfigError("scenario '" + name + "' needs max_steps > 0");
    if (alpha && !(*alpha > 0.0 && *alpha < 1.0)) throw ConfigError("scenario alpha must lie in (0, 1)");
    if (!(dt > 0.0)) throw ConfigError("scenario dt must be positive");
    if (horizon < 1) throw ConfigError("scenario horizon must be at least 1");
    if (!(goal_tolerance > 0.0)) throw ConfigError("goal tolerance must be positive");
    for (const auto& o : obstacles) {
        if (!(o.radius > 0.0)) throw ConfigError("obstacle radius must be positive");
    }
}

RunAggregates compute_aggregates(const TrajectoryLog& log, int max_steps) {
    RunAggregates a;
    a.completed = log.completed;
    a.steps = static_cast<int>(log.records.size());
    a.time_to_completion = log.completed ? a.steps : max_steps;
    a.min_clearance = std::numeric_limits<double>::infinity();
    std::vector<double> times;
    times.reserve(log.records.size());
    for (std::size_t i = 0; i < log.records.size(); ++i) {
        const auto& r = log.records[i];
        if (i == 0) a.min_clearance = std::min(a.min_clearance, r.clearance);
        a.min_clearance = std::min(a.min_clearance, r.next_clearance);
        if (r.next_clearance < 0.0) ++a.collision_steps;
        if (r.slack_max > kSlackActive) ++a.slack_activations;
        if (r.fallback) ++a.fallbacks;
        times.push_back(r.solve_time_ms);
        const State& next = i + 1 < log.records.size() ? log.records[i + 1].state : log.final_state;
        a.path_length += (next.position() - r.state.position()).norm();
        a.heading_change += std::abs(wrap_angle(next.theta - r.state.theta));
    }
    if (!times.empty()) {
        double sum = 0.0;
        for (double t : times) sum += t;
        a.mean_solve_ms = sum / static_cast<double>(times.size());
        std::sort(times.begin(), times.end());
        const std::size_t n = times.size();
        a.median_solve_ms = n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
        const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
        a.p95_solve_ms = times[std::clamp<std::size_t>(rank, 1, n) - 1];
    }
    return a;
}

std::vector<const RunSummary*> ExperimentReport::arm(const std::string& label) const {
    std::vector<const RunSummary*> out;
    for (const auto& r : runs) {
        if (r.arm == label) out.push_back(&r);
    }
    return out;
}

OfflineResult calibrate_model(const KoopmanModel& model, const OfflineConfig& config) {
    OfflineResult out{model, {}, {}, {}, {}};
    out.pairs = collect_calibration_pairs(model, config.calibration);
    out.scores = nonconformity_scores(out.pairs);
    out.calibration = calibrate(out.scores, config.alpha, config.lipschitz, config.epsilon);
    if (out.calibration.quantile.is_infinite()) {
        throw InfiniteQuantile("calibration with n = " + std::to_string(out.scores.size()) +
                               " pairs cannot support alpha = " + std::to_string(config.alpha) +
                               ": collect more calibration data or raise alpha");
    }
    if (config.calibration.horizon_steps > 1) {
        const auto per_lag = collect_horizon_scores(model, config.calibration);
        for (const auto& s : per_lag) {
            out.calibration.step_margins.push_back(
                tightening_margin(conformal_quantile(s, config.alpha), config.lipschitz, config.epsilon));
        }
    }
    return out;
}

OfflineResult offline_phase(const OfflineConfig& config) {
    const Dataset data = collect_dataset(config.collection);
    const Dictionary dict = Dictionary::from_name(config.dictionary);
    KoopmanModel model = fit_edmdc(data.transitions, dict, config.fit);
    OfflineResult out = calibrate_model(model, config);
    out.warnings = data.warnings;
    return out;
}

double scenario_delta(const Scenario& scenario, const ScoreSet& scores, double epsilon, double lipschitz) {
    if (!scenario.alpha) return 0.0;
    return tightening_margin(conformal_quantile(scores, *scenario.alpha), lipschitz, epsilon);
}

MpcConfig scenario_mpc_config(const Scenario& scenario, MpcConfig base) {
    base.horizon = scenario.horizon;
    base.predict_obstacles = scenario.predict_obstacles;
    return base;
}

std::string config_hash(const Scenario& scenario, const MpcConfig& mpc, const RefGenConfig& rg,
                        double delta) {
    io::json doc;
    doc["scenario"] = io::scenario_to_json(scenario);
    doc["mpc"] = {{"horizon", mpc.horizon},
                  {"S", mpc.S},
                  {"rho1", mpc.rho1},
                  {"eps_max", mpc.eps_max},
                  {"slack_norm", mpc.slack_norm == SlackNorm::L1 ? "l1" : "inf"},
                  {"soft", mpc.soft_constraints},
                  {"predict_obstacles", mpc.predict_obstacles},
                  {"warm_start", mpc.warm_start}};
    if (mpc.Q.size() > 0) doc["mpc"]["Q_diag"] = std::vector<double>(mpc.Q.diagonal().data(),
                                                                       mpc.Q.diagonal().data() + mpc.Q.rows());
    doc["rg"] = {{"step", rg.step}, {"clearance_bonus", rg.clearance_bonus}, {"goal_tolerance", rg.goal_tolerance}};
    doc["delta"] = delta;
    return io::fnv1a_hex(doc.dump());
}

TrajectoryLog run_closed_loop(const Scenario& scenario, const KoopmanModel& model, double delta,
                              MpcConfig mpc, const RefGenConfig& rg, const ClosedLoopOptions& options) {
    scenario.validate();
    if (!(delta >= 0.0)) throw ConfigError("tightening margin must be non-negative");
    mpc = scenario_mpc_config(scenario, std::move(mpc));

    TrajectoryLog log;
    log.scenario = scenario.name;
    log.arm = options.arm;
    log.alpha = scenario.alpha;
    log.delta = delta;
    log.seed = scenario.seed;
    log.config_hash = config_hash(scenario, mpc, rg, delta);

    Plant plant(scenario.disturbance, scenario.seed, scenario.dt);
    MpcController controller(mpc);
    State x = scenario.start;
    std::size_t target = 0;
    const auto n_targets = scenario.targets.size();

    // Constant reference of the soft-only arm: the goal with the heading of the leg.
    auto leg_reference = [&](std::size_t t) {
        const Vec2 from = t == 0 ? scenario.start.position() : scenario.targets[t - 1];
        const Vec2 d = scenario.targets[t] - from;
        const double heading = d.norm() > 1e-12 ? std::atan2(d.y(), d.x()) : scenario.start.theta;
        return State{scenario.targets[t].x(), scenario.targets[t].y(), heading};
    };

    auto advance_targets = [&] {
        while (target < n_targets && goal_reached(x, scenario.targets[target], scenario.goal_tolerance)) {
            ++target;
        }
    };

    for (long k = 0; k < scenario.max_steps; ++k) {
        advance_targets();
        if (target == n_targets) break;
        const Vec2 goal = scenario.targets[target];

        TrajectoryRecord rec;
        rec.k = k;
        rec.state = x;
        rec.target_index = static_cast<int>(target);
        rec.clearance = min_obstacle_distance(x, scenario.obstacles, k);

        for (const auto& o : scenario.obstacles) rec.obstacles.push_back({o.id, obstacle_center(o, k), o.radius});

        const int nearest = nearest_obstacle(x.position(), scenario.obstacles, k);
        if (nearest >= 0) {
            const auto& o = scenario.obstacles[static_cast<std::size_t>(nearest)];
            try {
                const HalfSpace hs = halfspace_from_circle(obstacle_center(o, k), o.radius, x.position(), o.id);
                rec.hs_obstacle = o.id;
                rec.hs_a = hs.normal.x();
                rec.hs_b = hs.normal.y();
                rec.hs_c = hs.offset;
            } catch (const DegenerateNormal&) {
                rec.hs_obstacle = o.id;
            }
        }

        if (options.reference_generator) {
            const Waypoint wp = next_waypoint(x, goal, scenario.obstacles, k, delta, rg);
            rec.reference = wp.reference;
            rec.rg_pass_through = wp.pass_through;
        } else {
            rec.reference = leg_reference(target);
        }

        const MpcStepResult step = controller.step(model, x, rec.reference, scenario.obstacles, k, delta);
        rec.control = step.control;
        rec.status = step.fallback && step.status == QpStatus::Optimal ? "fallback" : to_string(step.status);
        rec.iterations = step.iterations;
        rec.solve_time_ms = step.solve_time_ms;
        rec.fallback = step.fallback;
        rec.slack_shared = step.slack_shared;
        rec.slack_max = step.max_slack();
        try {
            rec.predicted_next = predict_one_step(model, x, step.control);
        } catch (const DegenerateHeading&) {
            const double nan = std::numeric_limits<double>::quiet_NaN();
            rec.predicted_next = State{nan, nan, nan};
        }

        x = plant.step(x, step.control);
        rec.next_clearance = min_obstacle_distance(x, scenario.obstacles, k + 1);
        log.records.push_back(rec);
    }
    advance_targets();
    log.completed = target == n_targets;
    log.final_state = x;
    return log;
}

std::vector<ConfidenceLevel> default_confidence_levels() {
    return {{"98%", 0.02}, {"50%", 0.5}, {"10%", 0.9}, {"0", std::nullopt}};
}

namespace {

RunSummary run_one(const Scenario& scenario, const KoopmanModel& model, double delta, const MpcConfig& mpc,
                   const RefGenConfig& rg, const ClosedLoopOptions& options) {
    RunSummary s;
    s.arm = options.arm;
    s.seed = scenario.seed;
    s.log = run_closed_loop(scenario, model, delta, mpc, rg, options);
    s.aggregates = compute_aggregates(s.log, scenario.max_steps);
    return s;
}

}  // namespace

ExperimentReport experiment_confidence_sweep(const Scenario& base, const KoopmanModel& model,
                                             const ScoreSet& scores, double epsilon,
                                             const std::vector<ConfidenceLevel>& levels, int seeds,
                                             const MpcConfig& mpc, const RefGenConfig& rg) {
    ExperimentReport report;
    report.name = "confidence-sweep";
    report.max_steps = base.max_steps;
    report.config_hash = config_hash(base, scenario_mpc_config(base, mpc), rg, 0.0);
    for (const auto& level : levels) {
        Scenario sc = base;
        sc.alpha = level.alpha;
        const double delta = scenario_delta(sc, scores, epsilon);
        for (int i = 0; i < seeds; ++i) {
            sc.seed = base.seed + static_cast<std::uint64_t>(i);
            report.runs.push_back(run_one(sc, model, delta, mpc, rg, {true, level.label}));
        }
    }
    return report;
}

ExperimentReport experiment_rg_vs_soft(const Scenario& scenario, const KoopmanModel& model, double delta,
                                       int seeds, const MpcConfig& mpc, const RefGenConfig& rg) {
    ExperimentReport report;
    report.name = "rg-vs-soft";
    report.max_steps = scenario.max_steps;
    report.config_hash = config_hash(scenario, scenario_mpc_config(scenario, mpc), rg, delta);
    for (const bool use_rg : {true, false}) {
        for (int i = 0; i < seeds; ++i) {
            Scenario sc = scenario;
            sc.seed = scenario.seed + static_cast<std::uint64_t>(i);
            report.runs.push_back(run_one(sc, model, delta, mpc, rg, {use_rg, use_rg ? "rg" : "soft-only"}));
        }
    }
    return report;
}

ExperimentReport experiment_repeat(const Scenario& scenario, const KoopmanModel& model, double delta,
                                   int seeds, const MpcConfig& mpc, const RefGenConfig& rg) {
    ExperimentReport report;
    report.name = scenario.name;
    report.max_steps = scenario.max_steps;
    report.config_hash = config_hash(scenario, scenario_mpc_config(scenario, mpc), rg, delta);
    for (int i = 0; i < seeds; ++i) {
        Scenario sc = scenario;
        sc.seed = scenario.seed + static_cast<std::uint64_t>(i);
        report.runs.push_back(run_one(sc, model, delta, mpc, rg, {true, "rg"}));
    }
    return report;
}

}  // namespace koopnav
