#pragma once

// Dense convex QP solver based on operator splitting (ADMM) with Ruiz
// equilibration, adaptive step size, active-set polishing and KKT
// certification of every reported optimum.
//
// Solves
//     min  1/2 w' P w + q' w
//     s.t. A_eq w = b_eq
//          l_in <= A_in w <= u_in
//          lb <= w <= ub
//
// Internally all three constraint groups are stacked into one system
// l <= C w <= u in the order [equalities; inequalities; finite bounds].
// Dual multipliers follow the convention P w + q + C' y = 0, with y_i > 0
// on an active upper bound and y_i < 0 on an active lower bound.

#include <optional>
#include <string>

#include <Eigen/Dense>

namespace koopnav {

struct QpProblem {
    Eigen::MatrixXd P;
    Eigen::VectorXd q;
    Eigen::MatrixXd A_eq;
    Eigen::VectorXd b_eq;
    Eigen::MatrixXd A_in;
    Eigen::VectorXd l_in;
    Eigen::VectorXd u_in;
    Eigen::VectorXd lb;  ///< empty or size d; -inf entries are unbounded
    Eigen::VectorXd ub;

    /// Problem with d variables and no constraints.
    static QpProblem unconstrained(const Eigen::MatrixXd& P, const Eigen::VectorXd& q);

    [[nodiscard]] int dim() const { return static_cast<int>(q.size()); }
    [[nodiscard]] double objective(const Eigen::VectorXd& w) const;
    /// Shape, symmetry (1e-10) and bound-order checks; throws InvalidProblem.
    void validate() const;
};

enum class QpStatus { Optimal, MaxIterations, InfeasibleDetected };

std::string to_string(QpStatus status);

struct KktResiduals {
    double stationarity{0.0};       ///< |P w + q + A_eq' nu + A_in' lambda + mu|_inf
    double equality{0.0};           ///< |A_eq w - b_eq|_inf
    double inequality{0.0};         ///< worst violation of l_in <= A_in w <= u_in and the bounds
    double dual_feasibility{0.0};   ///< worst multiplier sign violation
    double complementarity{0.0};    ///< worst |multiplier * distance to its bound|

    [[nodiscard]] double max() const;
};

struct QpSolution {
    Eigen::VectorXd w;
    Eigen::VectorXd nu;      ///< equality multipliers
    Eigen::VectorXd lambda;  ///< inequality multipliers
    Eigen::VectorXd mu;      ///< bound multipliers (size d, zero on free variables)
    QpStatus status{QpStatus::MaxIterations};
    int iterations{0};
    double solve_time_ms{0.0};
    double objective{0.0};
    bool polished{false};
    double rho{0.1};
    KktResiduals kkt;
};

KktResiduals kkt_residuals(const QpProblem& problem, const Eigen::VectorXd& w, const Eigen::VectorXd& nu,
                           const Eigen::VectorXd& lambda, const Eigen::VectorXd& mu);
KktResiduals kkt_residuals(const QpProblem& problem, const QpSolution& solution);

struct QpWarmStart {
    Eigen::VectorXd w;
    Eigen::VectorXd nu;
    Eigen::VectorXd lambda;
    Eigen::VectorXd mu;
    std::optional<double> rho;
};

struct QpSettings {
    /// ADMM stopping tolerances. A stop only counts as optimal once the
    /// (polished) point meets kkt_tolerance; otherwise they are tightened tenfold.
    double eps_abs{1e-4};
    double eps_rel{1e-4};
    int max_iterations{20000};
    double rho{0.1};
    double sigma{1e-6};
    double relaxation{1.6};
    bool adaptive_rho{true};
    int adaptive_rho_interval{25};
    int check_interval{5};
    int scaling_iterations{10};
    bool polish{true};
    double kkt_tolerance{1e-6};
    double infeasibility_tolerance{1e-6};
};

class QpSolver {
public:
    QpSolver() = default;
    explicit QpSolver(QpSettings settings) : settings_(settings) {}

    /// Throws InvalidProblem when the problem is malformed or P is not PSD.
    QpSolution solve(const QpProblem& problem, const QpWarmStart* warm_start = nullptr);

    [[nodiscard]] const QpSettings& settings() const { return settings_; }
    QpSettings& settings() { return settings_; }

private:
    QpSettings settings_;
};

/// Cold-start convenience wrapper.
QpSolution solve(const QpProblem& problem, const QpSettings& settings = {},
                 const QpWarmStart* warm_start = nullptr);

}  // namespace koopnav
