#pragma once

// Offline (fit + calibrate) and online (closed loop) phases, plus the three
// experiment drivers and their metrics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "koopnav/conformal.hpp"
#include "koopnav/koopman.hpp"
#include "koopnav/mpc.hpp"
#include "koopnav/ref_gen.hpp"
#include "koopnav/safe_sets.hpp"
#include "koopnav/sim_env.hpp"

namespace koopnav {

struct Scenario {
    std::string name{"scenario"};
    std::vector<ObstacleSpec> obstacles;
    std::vector<Vec2> targets;
    double goal_tolerance{0.1};
    State start{};
    /// Failure probability; empty means no tightening (Delta = 0).
    std::optional<double> alpha{0.02};
    double dt{kDefaultDt};
    int horizon{10};
    int max_steps{600};
    std::uint64_t seed{1};
    Disturbance disturbance{};
    bool predict_obstacles{false};

    /// Throws ConfigError when targets are empty, max_steps <= 0 or alpha is out of range.
    void validate() const;
};

struct ObstacleSnapshot {
    int id{0};
    Vec2 center{0.0, 0.0};
    double radius{0.0};
};

/// One row per executed control.
struct TrajectoryRecord {
    long k{0};
    State state;
    Control control;
    State reference;
    State predicted_next;
    double clearance{0.0};       ///< state_k against obstacles at k
    double next_clearance{0.0};  ///< state_{k+1} against obstacles at k+1
    double slack_shared{0.0};
    double slack_max{0.0};
    std::string status;
    int iterations{0};
    double solve_time_ms{0.0};  ///< wall clock; written to the timing sidecar, not the CSV
    bool fallback{false};
    bool rg_pass_through{false};
    int target_index{0};
    int hs_obstacle{-1};  ///< nearest obstacle's half-space (a, b, c) at k
    double hs_a{0.0};
    double hs_b{0.0};
    double hs_c{0.0};
    std::vector<ObstacleSnapshot> obstacles;  ///< obstacle disks at k
};

struct TrajectoryLog {
    std::string scenario;
    std::string arm;
    std::optional<double> alpha;
    double delta{0.0};
    std::uint64_t seed{0};
    std::string config_hash;
    bool completed{false};
    State final_state;
    std::vector<TrajectoryRecord> records;
};

struct RunAggregates {
    bool completed{false};
    int steps{0};
    int time_to_completion{0};  ///< steps until the last target; max_steps when not completed
    int collision_steps{0};     ///< records with next_clearance < 0
    double min_clearance{0.0};
    double mean_solve_ms{0.0};
    double median_solve_ms{0.0};
    double p95_solve_ms{0.0};
    int slack_activations{0};
    int fallbacks{0};
    double path_length{0.0};
    double heading_change{0.0};  ///< sum of |wrapped heading increments|
};

/// Pure function of the log; `max_steps` fills time_to_completion of unfinished runs.
RunAggregates compute_aggregates(const TrajectoryLog& log, int max_steps);

struct RunSummary {
    std::string arm;
    std::uint64_t seed{0};
    TrajectoryLog log;
    RunAggregates aggregates;
};

struct ExperimentReport {
    std::string name;
    std::string config_hash;
    int max_steps{0};
    std::vector<RunSummary> runs;

    [[nodiscard]] std::vector<const RunSummary*> arm(const std::string& label) const;
};

struct OfflineConfig {
    CollectionConfig collection{};
    std::string dictionary{"default11"};
    FitOptions fit{1e-8, true};
    CalibrationConfig calibration{};
    double alpha{0.02};
    double epsilon{0.01};
    double lipschitz{1.0};
};

struct OfflineResult {
    KoopmanModel model;
    CalibrationResult calibration;
    ScoreSet scores;
    std::vector<CalibrationPair> pairs;
    std::vector<std::string> warnings;
};

/// Collects training data, fits EDMDc, collects deployment-like calibration
/// pairs and forms Delta = L Q + epsilon. Throws InfiniteQuantile when the
/// calibration set is too small for alpha.
OfflineResult offline_phase(const OfflineConfig& config);

/// Fit and calibrate on an already fitted model.
OfflineResult calibrate_model(const KoopmanModel& model, const OfflineConfig& config);

struct ClosedLoopOptions {
    bool reference_generator{true};
    std::string arm{"rg"};
};

/// Delta applied for a scenario: 0 without alpha, else the calibrated margin.
double scenario_delta(const Scenario& scenario, const ScoreSet& scores, double epsilon,
                      double lipschitz = 1.0);

/// measure -> constraints -> waypoint -> MPC -> plant step -> target bookkeeping.
/// Ends when the final target is reached or max_steps elapse (completed = false).
TrajectoryLog run_closed_loop(const Scenario& scenario, const KoopmanModel& model, double delta,
                              MpcConfig mpc, const RefGenConfig& rg, const ClosedLoopOptions& options = {});

/// MPC configuration derived from a scenario (horizon and obstacle prediction).
MpcConfig scenario_mpc_config(const Scenario& scenario, MpcConfig base = {});

struct ConfidenceLevel {
    std::string label;
    std::optional<double> alpha;  ///< empty: Delta = 0
};

std::vector<ConfidenceLevel> default_confidence_levels();

ExperimentReport experiment_confidence_sweep(const Scenario& base, const KoopmanModel& model,
                                             const ScoreSet& scores, double epsilon,
                                             const std::vector<ConfidenceLevel>& levels, int seeds,
                                             const MpcConfig& mpc, const RefGenConfig& rg);

/// Arm "rg": full stack. Arm "soft-only": constant reference lift(goal).
ExperimentReport experiment_rg_vs_soft(const Scenario& scenario, const KoopmanModel& model, double delta,
                                       int seeds, const MpcConfig& mpc, const RefGenConfig& rg);

/// Runs `seeds` consecutive seeds of one scenario at a fixed Delta.
ExperimentReport experiment_repeat(const Scenario& scenario, const KoopmanModel& model, double delta,
                                   int seeds, const MpcConfig& mpc, const RefGenConfig& rg);

/// Stable hash of a scenario plus controller settings (hex FNV-1a).
std::string config_hash(const Scenario& scenario, const MpcConfig& mpc, const RefGenConfig& rg,
                        double delta);

}  // namespace koopnav
