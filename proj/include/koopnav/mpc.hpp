#pragma once

// Lifted-space MPC with tightened, softened half-space safety constraints.
//
// Decision vector layout (d = N p + N m + N + 1 [+ N + 1]):
//     [ z_1 .. z_N | u_0 .. u_{N-1} | eps_0 .. eps_{N-1} | eps_s | t_0 .. t_{N-1}, t_s ]
// where the trailing epigraph block t exists only for the infinity-norm slack
// penalty. z_0 = lift(x_k) enters the first dynamics row as a constant.

#include <optional>
#include <vector>

#include "koopnav/koopman.hpp"
#include "koopnav/qp_solver.hpp"
#include "koopnav/safe_sets.hpp"
#include "koopnav/sim_env.hpp"

namespace koopnav {

enum class SlackNorm { L1, Inf };

struct MpcConfig {
    int horizon{10};
    Eigen::MatrixXd Q;  ///< p x p state penalty; empty -> default_state_weight
    Eigen::MatrixXd R;  ///< m x m input penalty; empty -> 0.1 I
    double S{1e3};      ///< quadratic slack weight
    double rho1{1e3};   ///< linear slack weight
    SlackNorm slack_norm{SlackNorm::L1};
    double eps_max{0.5};
    bool soft_constraints{true};
    /// Evaluate obstacle centers at k + i along the horizon instead of freezing them at k.
    bool predict_obstacles{false};
    bool warm_start{true};
    /// Optional margins per horizon step (index i applies to z_{i+1}); overrides the set margin.
    std::vector<double> step_margins;
    ControlBounds bounds{};
    QpSettings solver{};

    /// diag(10, 10, 1, ..., 1): position coordinates weighted heavily.
    static Eigen::MatrixXd default_state_weight(int p);
    /// Fills Q and R with defaults when empty and checks shapes and definiteness.
    void resolve(int p, int m);
};

struct MpcLayout {
    int horizon{0};
    int p{0};
    int m{0};
    int safety_rows_per_step{0};
    bool soft{true};
    bool epigraph{false};

    [[nodiscard]] int z(int i) const { return (i - 1) * p; }  ///< offset of z_i, i = 1..N
    [[nodiscard]] int u(int i) const { return horizon * p + i * m; }
    [[nodiscard]] int eps(int i) const { return horizon * (p + m) + i; }
    [[nodiscard]] int eps_shared() const { return horizon * (p + m) + horizon; }
    [[nodiscard]] int epi(int i) const { return eps_shared() + 1 + i; }  ///< i = N is t_s
    [[nodiscard]] int dim() const;
};

struct MpcQp {
    QpProblem problem;
    MpcLayout layout;
    Eigen::VectorXd z0;
    Eigen::VectorXd z_ref;
    double objective_constant{0.0};
};

/// Assembles the QP. `constraints` holds either one set (frozen over the
/// horizon) or one set per horizon step. Throws ConfigError on shape mismatch.
MpcQp build_mpc_qp(const KoopmanModel& model, const State& x_k, const State& x_ref,
                   const std::vector<ConstraintSet>& constraints, MpcConfig cfg);
MpcQp build_mpc_qp(const KoopmanModel& model, const State& x_k, const State& x_ref,
                   const ConstraintSet& constraints, const MpcConfig& cfg);

struct MpcStepResult {
    Control control;
    std::vector<Eigen::VectorXd> lifted_trajectory;  ///< z_0 .. z_N (empty on fallback)
    double slack_shared{0.0};
    std::vector<double> slacks;
    double objective{0.0};
    QpStatus status{QpStatus::MaxIterations};
    double solve_time_ms{0.0};
    int iterations{0};
    bool fallback{false};
    bool warm_started{false};
    std::string note;

    [[nodiscard]] double max_slack() const;
};

/// Receding-horizon controller; carries only the warm-start cache.
class MpcController {
public:
    explicit MpcController(MpcConfig cfg);

    /// Builds constraints at step k, solves, returns u_{k|k}. Solver failure or
    /// a degenerate constraint yields the brake control (0, 0) with fallback set.
    MpcStepResult step(const KoopmanModel& model, const State& x_k, const State& x_ref,
                       const std::vector<ObstacleSpec>& obstacles, long k, double delta);

    void reset() { previous_.reset(); }
    [[nodiscard]] const MpcConfig& config() const { return cfg_; }

private:
    struct Cache {
        MpcLayout layout;
        QpSolution solution;
    };
    MpcConfig cfg_;
    std::optional<Cache> previous_;
};

/// Constraint sets for one solve: a single frozen set, or one per horizon step.
std::vector<ConstraintSet> horizon_constraints(const std::vector<ObstacleSpec>& obstacles, long k,
                                               const Vec2& agent_pos, double delta, int horizon,
                                               bool predict_obstacles);

}  // namespace koopnav
