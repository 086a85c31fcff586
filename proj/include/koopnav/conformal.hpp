#pragma once

// Split conformal calibration of the one-step prediction error and the
// constraint-tightening margin derived from it.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "koopnav/koopman.hpp"
#include "koopnav/sim_env.hpp"

namespace koopnav {

/// Conformal quantile: a finite score or the infinite atom. The infinite
/// case is a distinct state and never carried as a floating-point infinity.
class Quantile {
public:
    static Quantile finite(double value);
    static Quantile infinite() { return Quantile(); }

    [[nodiscard]] bool is_infinite() const { return !value_.has_value(); }
    /// Throws InfiniteQuantile for the infinite atom.
    [[nodiscard]] double value() const;
    [[nodiscard]] bool covers(double score) const { return is_infinite() || score <= *value_; }

    friend bool operator==(const Quantile&, const Quantile&) = default;

private:
    Quantile() = default;
    std::optional<double> value_;
};

struct ScoreProvenance {
    int scenario{0};
    int step{0};
};

struct ScoreSet {
    std::vector<double> scores;
    std::vector<ScoreProvenance> provenance;  ///< empty or one entry per score

    [[nodiscard]] std::size_t size() const { return scores.size(); }
};

struct CalibrationPair {
    State truth;
    State predicted;
    ScoreProvenance provenance;
};

/// Position-only Euclidean distance between truth and prediction.
double nonconformity_score(const CalibrationPair& pair);
ScoreSet nonconformity_scores(std::span<const CalibrationPair> pairs);

/// Rank used by the split-conformal rule: ceil((n + 1)(1 - alpha)).
std::size_t conformal_rank(std::size_t n, double alpha);

/// k-th smallest element of scores + {inf}, k = conformal_rank(n, alpha).
Quantile conformal_quantile(std::span<const double> scores, double alpha);
Quantile conformal_quantile(const ScoreSet& scores, double alpha);

/// Smallest atom whose cumulative weight reaches 1 - alpha. `weights` holds
/// n + 1 entries summing to one; the last one is attached to the infinite atom.
Quantile weighted_quantile(std::span<const double> scores, std::span<const double> weights,
                           double alpha);

/// Delta = L Q + epsilon. Throws InfiniteQuantile for the infinite atom.
double tightening_margin(const Quantile& q, double lipschitz, double epsilon);

/// Fraction of scores not exceeding q.
double empirical_coverage(const Quantile& q, std::span<const double> scores);
double empirical_coverage(const Quantile& q, std::span<const CalibrationPair> held_out);

struct CalibrationResult {
    double alpha{0.1};
    Quantile quantile{Quantile::infinite()};
    double lipschitz{1.0};
    double epsilon{0.01};
    std::optional<double> delta;  ///< present iff the quantile is finite
    std::size_t n{0};
    std::vector<double> sorted_scores;
    /// Optional per-horizon-step margins (index i is the margin for step i + 1).
    std::vector<double> step_margins;
};

/// Quantile and margin from a score set. Does not throw on the infinite atom;
/// `delta` is left empty instead.
CalibrationResult calibrate(const ScoreSet& scores, double alpha, double lipschitz = 1.0,
                            double epsilon = 0.01);

struct CalibrationConfig {
    int scenarios{20};
    int steps{100};
    std::uint64_t seed{11};
    double dt{kDefaultDt};
    ControlBounds bounds{};
    Workspace workspace{};
    Disturbance disturbance{};
    /// Lags for which open-loop rollout scores are also collected (1 = one-step only).
    int horizon_steps{1};
};

/// Randomized reference-tracking runs on the disturbed plant; each executed step
/// yields (x_{k+1}, predict_one_step(model, x_k, u_k)).
std::vector<CalibrationPair> collect_calibration_pairs(const KoopmanModel& model,
                                                       const CalibrationConfig& config);

/// Scores of i-step open-loop rollouts, one ScoreSet per lag 1..horizon_steps.
std::vector<ScoreSet> collect_horizon_scores(const KoopmanModel& model,
                                             const CalibrationConfig& config);

}  // namespace koopnav
