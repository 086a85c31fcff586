// koopnav command-line entry point.
//
// Exit codes: 0 success, 2 usage error, 3 missing upstream artifact, 4 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "koopnav/errors.hpp"
#include "koopnav/harness.hpp"
#include "koopnav/io.hpp"

namespace fs = std::filesystem;
using namespace koopnav;
using io::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitMissing = 3;
constexpr int kExitRuntime = 4;

struct MissingDependency : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) {
        throw MissingDependency("missing " + what + ": " + path.string() + " does not exist");
    }
}

std::string default_out_root() {
    const char* env = std::getenv("KOOPNAV_OUT");
    return env && *env ? env : "runs";
}

/// Stamps a config object and its hash into an artifact document.
json with_config(json doc, const json& config) {
    doc["config"] = config;
    doc["config_hash"] = io::fnv1a_hex(config.dump());
    return doc;
}

struct CollectArgs {
    std::string policy{"uniform"};
    int episodes{100};
    int steps{50};
    std::uint64_t seed{7};
    double dt{kDefaultDt};
    std::string output;
};

struct FitArgs {
    std::string data;
    std::string dictionary{"default11"};
    double ridge{1e-8};
    bool linear{false};
    std::string output;
};

struct CalibrateArgs {
    std::string model;
    double alpha{0.02};
    double epsilon{0.01};
    double lipschitz{1.0};
    int scenarios{20};
    int steps{100};
    std::uint64_t seed{11};
    double dist_v{0.3};
    double dist_omega{0.3};
    int horizon_steps{1};
    std::string pairs;
    std::string output;
};

struct RunArgs {
    std::string scenario;
    std::string model;
    std::string calibration;
    std::optional<std::uint64_t> seed;
    bool no_rg{false};
    std::string out_dir;
};

struct ExperimentArgs {
    std::string scenario;
    std::string model;
    std::string calibration;
    int seeds{10};
    double epsilon{0.01};
    std::string out_dir;
};

struct ControllerArgs {
    int horizon{0};
    double S{1e3};
    double rho1{1e3};
    double eps_max{0.5};
    std::string slack_norm{"1"};
    bool cold{false};
    double rg_step{0.3};
    double rg_bonus{0.05};
};

void add_controller_flags(CLI::App* cmd, ControllerArgs& c) {
    cmd->add_option("--horizon", c.horizon, "MPC horizon N (0 = scenario value)");
    cmd->add_option("--slack-weight", c.S, "quadratic weight S on every slack");
    cmd->add_option("--slack-penalty", c.rho1, "penalty rho1 on the per-step slack norm");
    cmd->add_option("--slack-max", c.eps_max, "upper bound on every slack");
    cmd->add_option("--slack-norm", c.slack_norm, "per-step slack norm")->check(CLI::IsMember({"1", "inf"}));
    cmd->add_flag("--cold", c.cold, "disable QP warm starting");
    cmd->add_option("--rg-step", c.rg_step, "reference generator step length [m]");
    cmd->add_option("--rg-bonus", c.rg_bonus, "extra clearance added when the waypoint slides");
}

MpcConfig mpc_config(const ControllerArgs& c) {
    MpcConfig m;
    if (c.horizon > 0) m.horizon = c.horizon;
    m.S = c.S;
    m.rho1 = c.rho1;
    m.eps_max = c.eps_max;
    m.slack_norm = c.slack_norm == "1" ? SlackNorm::L1 : SlackNorm::Inf;
    m.warm_start = !c.cold;
    return m;
}

Scenario apply_controller(Scenario s, const ControllerArgs& c) {
    if (c.horizon > 0) s.horizon = c.horizon;
    return s;
}

RefGenConfig rg_config(const ControllerArgs& c, const Scenario& s) {
    return RefGenConfig{c.rg_step, c.rg_bonus, s.goal_tolerance};
}

int cmd_collect(const CollectArgs& a) {
    CollectionConfig cfg;
    cfg.policy = excitation_policy_from_string(a.policy);
    cfg.episodes = a.episodes;
    cfg.steps = a.steps;
    cfg.seed = a.seed;
    cfg.dt = a.dt;
    const Dataset data = collect_dataset(cfg);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";
    const json config{{"policy", a.policy}, {"episodes", a.episodes}, {"steps", a.steps},
                      {"seed", a.seed},     {"dt", a.dt}};
    io::write_transitions_csv(a.output, data.transitions, "config_hash=" + io::fnv1a_hex(config.dump()));
    std::cout << "wrote " << data.transitions.size() << " transitions to " << a.output << "\n";
    return 0;
}

int cmd_fit(const FitArgs& a) {
    require_file(a.data, "training data (run `collect` first)");
    const auto transitions = io::read_transitions_csv(a.data);
    const Dictionary dict = Dictionary::from_name(a.dictionary);
    const KoopmanModel model = fit_edmdc(transitions, dict, FitOptions{a.ridge, !a.linear});
    const json config{{"data", a.data}, {"dictionary", a.dictionary}, {"ridge", a.ridge}, {"bilinear", !a.linear}};
    io::write_json(a.output, with_config(io::model_to_json(model), config));
    std::cout << "fitted " << dict.name() << " (p = " << dict.dim() << ") on " << transitions.size()
              << " transitions; residual " << model.diagnostics.residual_norm << ", condition "
              << model.diagnostics.condition_number << "\n";
    return 0;
}

CalibrationConfig calibration_config(const CalibrateArgs& a) {
    CalibrationConfig c;
    c.scenarios = a.scenarios;
    c.steps = a.steps;
    c.seed = a.seed;
    c.disturbance = {a.dist_v, a.dist_omega};
    c.horizon_steps = a.horizon_steps;
    return c;
}

int cmd_calibrate(const CalibrateArgs& a) {
    require_file(a.model, "model (run `fit` first)");
    const KoopmanModel model = io::load_model(a.model);
    OfflineConfig oc;
    oc.calibration = calibration_config(a);
    oc.alpha = a.alpha;
    oc.epsilon = a.epsilon;
    oc.lipschitz = a.lipschitz;
    const OfflineResult r = calibrate_model(model, oc);
    if (!a.pairs.empty()) io::write_calibration_csv(a.pairs, r.pairs);
    const json config{{"model", a.model},           {"alpha", a.alpha},         {"epsilon", a.epsilon},
                      {"lipschitz", a.lipschitz},   {"scenarios", a.scenarios}, {"steps", a.steps},
                      {"seed", a.seed},             {"disturbance", {a.dist_v, a.dist_omega}},
                      {"horizon_steps", a.horizon_steps}};
    io::write_json(a.output, with_config(io::calibration_to_json(r.calibration), config));
    std::cout << "n = " << r.calibration.n << ", Q = " << r.calibration.quantile.value()
              << ", Delta = " << *r.calibration.delta << "\n";
    return 0;
}

/// Delta for a scenario from stored calibration scores (re-ranked at the scenario's alpha).
double delta_from_calibration(const Scenario& s, const CalibrationResult& cal) {
    ScoreSet scores{cal.sorted_scores, {}};
    return scenario_delta(s, scores, cal.epsilon, cal.lipschitz);
}

struct Artifacts {
    KoopmanModel model;
    CalibrationResult calibration;
};

/// Loads model and calibration, or runs the offline phase when neither is given.
Artifacts artifacts_for(const std::string& model_path, const std::string& calibration_path, const Scenario& s,
                        double epsilon, const fs::path& out_dir) {
    if (!model_path.empty() || !calibration_path.empty()) {
        if (model_path.empty()) throw MissingDependency("missing model: pass --model alongside --calibration");
        if (calibration_path.empty()) throw MissingDependency("missing calibration: pass --calibration");
        require_file(model_path, "model");
        require_file(calibration_path, "calibration");
        return {io::load_model(model_path), io::calibration_from_json(io::read_json(calibration_path))};
    }
    OfflineConfig oc;
    oc.calibration.disturbance = s.disturbance;
    oc.epsilon = epsilon;
    const OfflineResult r = offline_phase(oc);
    io::save_model(out_dir / "model.json", r.model);
    io::write_json(out_dir / "calibration.json", io::calibration_to_json(r.calibration));
    return {r.model, r.calibration};
}

int cmd_run(const RunArgs& a, const ControllerArgs& c, const std::string& out_root) {
    require_file(a.scenario, "scenario");
    if (a.model.empty()) throw MissingDependency("missing model: --model is required (run `fit` first)");
    if (a.calibration.empty()) {
        throw MissingDependency("missing calibration: --calibration is required (run `calibrate` first)");
    }
    require_file(a.model, "model (run `fit` first)");
    require_file(a.calibration, "calibration (run `calibrate` first)");
    Scenario s = apply_controller(io::load_scenario(a.scenario), c);
    if (a.seed) s.seed = *a.seed;
    const KoopmanModel model = io::load_model(a.model);
    const CalibrationResult cal = io::calibration_from_json(io::read_json(a.calibration));
    const double delta = delta_from_calibration(s, cal);
    const fs::path dir = a.out_dir.empty() ? fs::path(out_root) / ("run_" + s.name) : fs::path(a.out_dir);
    ExperimentReport rep = experiment_repeat(s, model, delta, 1, mpc_config(c), rg_config(c, s));
    if (a.no_rg) {
        rep.runs.front().log = run_closed_loop(s, model, delta, mpc_config(c), rg_config(c, s), {false, "soft-only"});
        rep.runs.front().arm = "soft-only";
        rep.runs.front().aggregates = compute_aggregates(rep.runs.front().log, s.max_steps);
    }
    io::emit_report(rep, dir);
    const auto& agg = rep.runs.front().aggregates;
    std::cout << s.name << ": completed=" << agg.completed << " steps=" << agg.steps
              << " collisions=" << agg.collision_steps << " min_clearance=" << agg.min_clearance
              << " -> " << dir.string() << "\n";
    return 0;
}

void print_arms(const ExperimentReport& rep) {
    const json doc = io::report_to_json(rep);
    for (const auto& arm : doc.at("arms")) {
        std::cout << "  " << arm.at("arm").get<std::string>() << ": completion "
                  << arm.at("completion_rate").get<double>() << ", runs with collisions "
                  << arm.at("collision_runs").get<int>() << ", mean steps "
                  << arm.at("mean_time_to_completion").get<double>() << "\n";
    }
}

int cmd_experiment(const std::string& kind, const ExperimentArgs& a, const ControllerArgs& c,
                   const std::string& out_root) {
    require_file(a.scenario, "scenario");
    const Scenario s = apply_controller(io::load_scenario(a.scenario), c);
    const fs::path dir = a.out_dir.empty() ? fs::path(out_root) / kind : fs::path(a.out_dir);
    const Artifacts art = artifacts_for(a.model, a.calibration, s, a.epsilon, dir);
    const MpcConfig mpc = mpc_config(c);
    const RefGenConfig rg = rg_config(c, s);
    ExperimentReport rep;
    if (kind == "confidence-sweep") {
        const ScoreSet scores{art.calibration.sorted_scores, {}};
        rep = experiment_confidence_sweep(s, art.model, scores, art.calibration.epsilon, default_confidence_levels(),
                                          a.seeds, mpc, rg);
    } else if (kind == "rg-vs-soft") {
        rep = experiment_rg_vs_soft(s, art.model, delta_from_calibration(s, art.calibration), a.seeds, mpc, rg);
    } else {
        rep = experiment_repeat(s, art.model, delta_from_calibration(s, art.calibration), a.seeds, mpc, rg);
    }
    io::emit_report(rep, dir);
    std::cout << kind << " on " << s.name << " (" << a.seeds << " seeds) -> " << dir.string() << "\n";
    print_arms(rep);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"koopnav: Koopman model + conformal tightening + MPC navigation"};
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "INI/TOML file of flag values; command-line flags override it");
    app.require_subcommand(1);
    std::string out_root = default_out_root();
    app.add_option("--out-root", out_root, "default output root (env KOOPNAV_OUT)");

    CollectArgs collect;
    auto* c_collect = app.add_subcommand("collect", "simulate excitation data and write a transitions CSV");
    c_collect->add_option("--policy", collect.policy, "excitation policy")
        ->check(CLI::IsMember({"uniform", "random-walk", "tracking"}));
    c_collect->add_option("--episodes", collect.episodes, "number of episodes")->check(CLI::NonNegativeNumber);
    c_collect->add_option("--steps", collect.steps, "steps per episode")->check(CLI::NonNegativeNumber);
    c_collect->add_option("--seed", collect.seed, "random seed");
    c_collect->add_option("--dt", collect.dt, "sampling period [s]")->check(CLI::PositiveNumber);
    c_collect->add_option("-o,--output", collect.output, "output CSV")->required();

    FitArgs fit;
    auto* c_fit = app.add_subcommand("fit", "fit an EDMDc model from a transitions CSV");
    c_fit->add_option("--data", fit.data, "transitions CSV")->required();
    c_fit->add_option("--dict", fit.dictionary, "dictionary: default11, pose5 or identity<n>");
    c_fit->add_option("--ridge", fit.ridge, "Tikhonov regularization")->check(CLI::NonNegativeNumber);
    c_fit->add_flag("--linear", fit.linear, "fit a constant input matrix (no input-state coupling)");
    c_fit->add_option("-o,--output", fit.output, "output model JSON")->required();

    CalibrateArgs cal;
    auto* c_cal = app.add_subcommand("calibrate", "conformal calibration of a fitted model");
    c_cal->add_option("--model", cal.model, "model JSON")->required();
    c_cal->add_option("--alpha", cal.alpha, "failure probability")->check(CLI::Range(0.0, 1.0));
    c_cal->add_option("--epsilon", cal.epsilon, "safety offset added to the margin")->check(CLI::PositiveNumber);
    c_cal->add_option("--lipschitz", cal.lipschitz, "Lipschitz constant of the constraint")
        ->check(CLI::PositiveNumber);
    c_cal->add_option("--scenarios", cal.scenarios, "calibration runs")->check(CLI::PositiveNumber);
    c_cal->add_option("--steps", cal.steps, "steps per calibration run")->check(CLI::PositiveNumber);
    c_cal->add_option("--seed", cal.seed, "random seed");
    c_cal->add_option("--dist-v", cal.dist_v, "plant speed disturbance amplitude [m/s]");
    c_cal->add_option("--dist-omega", cal.dist_omega, "plant turn-rate disturbance amplitude [rad/s]");
    c_cal->add_option("--horizon-steps", cal.horizon_steps, "also calibrate open-loop lags 1..k")
        ->check(CLI::PositiveNumber);
    c_cal->add_option("--pairs", cal.pairs, "optional CSV of calibration pairs");
    c_cal->add_option("-o,--output", cal.output, "output calibration JSON")->required();

    RunArgs run;
    ControllerArgs run_ctl;
    auto* c_run = app.add_subcommand("run", "closed-loop run of one scenario");
    c_run->add_option("--scenario", run.scenario, "scenario JSON")->required();
    c_run->add_option("--model", run.model, "model JSON");
    c_run->add_option("--calibration", run.calibration, "calibration JSON");
    c_run->add_option("--seed", run.seed, "override the scenario seed");
    c_run->add_flag("--no-rg", run.no_rg, "track the goal directly instead of reference waypoints");
    c_run->add_option("--out-dir", run.out_dir, "output directory (default <out-root>/run_<scenario>)");
    add_controller_flags(c_run, run_ctl);

    ExperimentArgs exp;
    ControllerArgs exp_ctl;
    std::string kind;
    auto* c_exp = app.add_subcommand("experiment", "multi-seed experiments");
    c_exp->add_option("kind", kind, "confidence-sweep | rg-vs-soft | fig2")
        ->required()
        ->check(CLI::IsMember({"confidence-sweep", "rg-vs-soft", "fig2"}));
    c_exp->add_option("--scenario", exp.scenario, "scenario JSON")->required();
    c_exp->add_option("--model", exp.model, "model JSON (default: run the offline phase)");
    c_exp->add_option("--calibration", exp.calibration, "calibration JSON (default: run the offline phase)");
    c_exp->add_option("--seeds", exp.seeds, "seeds per arm")->check(CLI::PositiveNumber);
    c_exp->add_option("--epsilon", exp.epsilon, "safety offset for the offline phase")->check(CLI::PositiveNumber);
    c_exp->add_option("--out-dir", exp.out_dir, "output directory (default <out-root>/<kind>)");
    add_controller_flags(c_exp, exp_ctl);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*c_collect) return cmd_collect(collect);
        if (*c_fit) return cmd_fit(fit);
        if (*c_cal) return cmd_calibrate(cal);
        if (*c_run) return cmd_run(run, run_ctl, out_root);
        if (*c_exp) return cmd_experiment(kind, exp, exp_ctl, out_root);
    } catch (const MissingDependency& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissing;
    } catch (const InfiniteQuantile& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
