#include "koopnav/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "koopnav/errors.hpp"

namespace koopnav {

namespace {

// Rank and cumulative-weight comparisons absorb rounding in (n+1)(1-alpha).
constexpr double kLevelTol = 1e-12;

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw InvalidInput("alpha must lie in (0, 1)");
    }
}

void check_scores(std::span<const double> scores) {
    if (scores.empty()) {
        throw InvalidInput("conformal quantile of an empty score set");
    }
    for (double s : scores) {
        if (!std::isfinite(s) || s < 0.0) {
            throw InvalidInput("nonconformity scores must be finite and non-negative");
        }
    }
}

}  // namespace

Quantile Quantile::finite(double value) {
    if (!std::isfinite(value)) {
        throw InvalidInput("finite quantile built from a non-finite value");
    }
    Quantile q;
    q.value_ = value;
    return q;
}

double Quantile::value() const {
    if (!value_) {
        throw InfiniteQuantile("quantile is the infinite atom: enlarge the calibration set or raise alpha");
    }
    return *value_;
}

double nonconformity_score(const CalibrationPair& pair) {
    return (pair.truth.position() - pair.predicted.position()).norm();
}

ScoreSet nonconformity_scores(std::span<const CalibrationPair> pairs) {
    ScoreSet out;
    out.scores.reserve(pairs.size());
    out.provenance.reserve(pairs.size());
    for (const auto& p : pairs) {
        out.scores.push_back(nonconformity_score(p));
        out.provenance.push_back(p.provenance);
    }
    return out;
}

std::size_t conformal_rank(std::size_t n, double alpha) {
    check_alpha(alpha);
    const double level = static_cast<double>(n + 1) * (1.0 - alpha - kLevelTol);
    const double k = std::ceil(level);
    return static_cast<std::size_t>(std::max(1.0, k));
}

Quantile conformal_quantile(std::span<const double> scores, double alpha) {
    check_alpha(alpha);
    check_scores(scores);
    const std::size_t n = scores.size();
    const std::size_t k = conformal_rank(n, alpha);
    if (k > n) {
        return Quantile::infinite();
    }
    std::vector<double> sorted(scores.begin(), scores.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
    return Quantile::finite(sorted[k - 1]);
}

Quantile conformal_quantile(const ScoreSet& scores, double alpha) {
    return conformal_quantile(std::span<const double>(scores.scores), alpha);
}

Quantile weighted_quantile(std::span<const double> scores, std::span<const double> weights,
                           double alpha) {
    check_alpha(alpha);
    check_scores(scores);
    if (weights.size() != scores.size() + 1) {
        throw InvalidInput("weighted quantile needs n + 1 weights");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw InvalidInput("weights must be finite and non-negative");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw InvalidInput("weights must be normalized to one");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    const double target = 1.0 - alpha - kLevelTol;
    double cumulative = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        cumulative += weights[order[i]];
        // Atoms sharing a score are consumed together.
        if (i + 1 < order.size() && scores[order[i + 1]] == scores[order[i]]) {
            continue;
        }
        if (cumulative >= target) {
            return Quantile::finite(scores[order[i]]);
        }
    }
    return Quantile::infinite();
}

double tightening_margin(const Quantile& q, double lipschitz, double epsilon) {
    if (q.is_infinite()) {
        throw InfiniteQuantile("cannot tighten with an infinite quantile: enlarge the calibration set or raise alpha");
    }
    const double value = q.value();
    if (value < 0.0) throw InvalidInput("quantile must be non-negative");
    if (!(lipschitz > 0.0)) throw InvalidInput("Lipschitz constant must be positive");
    if (!(epsilon > 0.0)) throw InvalidInput("strictness slack epsilon must be positive");
    return lipschitz * value + epsilon;
}

double empirical_coverage(const Quantile& q, std::span<const double> scores) {
    if (scores.empty()) return 1.0;
    const auto hit = std::count_if(scores.begin(), scores.end(), [&](double s) { return q.covers(s); });
    return static_cast<double>(hit) / static_cast<double>(scores.size());
}

double empirical_coverage(const Quantile& q, std::span<const CalibrationPair> held_out) {
    const ScoreSet s = nonconformity_scores(held_out);
    return empirical_coverage(q, std::span<const double>(s.scores));
}

CalibrationResult calibrate(const ScoreSet& scores, double alpha, double lipschitz, double epsilon) {
    CalibrationResult r;
    r.alpha = alpha;
    r.lipschitz = lipschitz;
    r.epsilon = epsilon;
    r.n = scores.size();
    r.quantile = conformal_quantile(scores, alpha);
    if (!r.quantile.is_infinite()) {
        r.delta = tightening_margin(r.quantile, lipschitz, epsilon);
    }
    r.sorted_scores = scores.scores;
    std::sort(r.sorted_scores.begin(), r.sorted_scores.end());
    return r;
}

namespace {

struct TrackingRun {
    std::vector<State> states;     // x_0..x_T
    std::vector<Control> commands;  // u_0..u_{T-1}
};

TrackingRun run_tracking(const CalibrationConfig& config, int scenario) {
    std::mt19937_64 rng(config.seed * 1000003ULL + static_cast<std::uint64_t>(scenario));
    const auto& ws = config.workspace;
    std::uniform_real_distribution<double> ux(ws.x_min, ws.x_max);
    std::uniform_real_distribution<double> uy(ws.y_min, ws.y_max);
    std::uniform_real_distribution<double> ut(-std::numbers::pi, std::numbers::pi);
    std::normal_distribution<double> gauss(0.0, 1.0);

    TrackingRun run;
    State s{ux(rng), uy(rng), 0.0};
    s.theta = wrap_angle(ut(rng));
    Vec2 goal{ux(rng), uy(rng)};
    Plant plant(config.disturbance, rng(), config.dt);
    run.states.push_back(s);
    for (int k = 0; k < config.steps; ++k) {
        if ((goal - s.position()).norm() < 0.2) {
            goal = Vec2{ux(rng), uy(rng)};
        }
        Control u = tracking_control(s, goal, config.bounds);
        u.v += 0.05 * (config.bounds.v_max - config.bounds.v_min) * gauss(rng);
        u.omega += 0.05 * (config.bounds.omega_max - config.bounds.omega_min) * gauss(rng);
        u = config.bounds.clamp(u);
        s = plant.step(s, u);
        run.commands.push_back(u);
        run.states.push_back(s);
    }
    return run;
}

}  // namespace

std::vector<CalibrationPair> collect_calibration_pairs(const KoopmanModel& model,
                                                       const CalibrationConfig& config) {
    std::vector<CalibrationPair> pairs;
    pairs.reserve(static_cast<std::size_t>(std::max(0, config.scenarios * config.steps)));
    for (int sc = 0; sc < config.scenarios; ++sc) {
        const TrackingRun run = run_tracking(config, sc);
        for (std::size_t k = 0; k < run.commands.size(); ++k) {
            CalibrationPair p;
            p.truth = run.states[k + 1];
            p.predicted = predict_one_step(model, run.states[k], run.commands[k]);
            p.provenance = ScoreProvenance{sc, static_cast<int>(k)};
            pairs.push_back(p);
        }
    }
    return pairs;
}

std::vector<ScoreSet> collect_horizon_scores(const KoopmanModel& model,
                                             const CalibrationConfig& config) {
    const int lags = std::max(1, config.horizon_steps);
    std::vector<ScoreSet> out(static_cast<std::size_t>(lags));
    for (int sc = 0; sc < config.scenarios; ++sc) {
        const TrackingRun run = run_tracking(config, sc);
        const int steps = static_cast<int>(run.commands.size());
        // Non-overlapping windows keep the per-lag samples closer to exchangeable.
        for (int k = 0; k + lags <= steps; k += lags) {
            const std::vector<Control> window(run.commands.begin() + k, run.commands.begin() + k + lags);
            const auto predicted = rollout(model, run.states[static_cast<std::size_t>(k)], window);
            for (int i = 0; i < lags; ++i) {
                const auto& truth = run.states[static_cast<std::size_t>(k + i + 1)];
                out[static_cast<std::size_t>(i)].scores.push_back(
                    (truth.position() - predicted[static_cast<std::size_t>(i)].position()).norm());
                out[static_cast<std::size_t>(i)].provenance.push_back({sc, k});
            }
        }
    }
    return out;
}

}  // namespace koopnav
