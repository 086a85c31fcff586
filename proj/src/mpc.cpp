#include "koopnav/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "koopnav/errors.hpp"

namespace koopnav {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Shifts a block-partitioned vector left by one block, repeating the last block.
void shift_blocks(VectorXd& v, Eigen::Index offset, Eigen::Index block, Eigen::Index count) {
    if (count < 2) return;
    for (Eigen::Index i = 0; i + 1 < count; ++i) {
        v.segment(offset + i * block, block) = v.segment(offset + (i + 1) * block, block);
    }
}

}  // namespace

MatrixXd MpcConfig::default_state_weight(int p) {
    VectorXd diag = VectorXd::Ones(p);
    diag.head(std::min(2, p)).setConstant(10.0);
    return diag.asDiagonal();
}

void MpcConfig::resolve(int p, int m) {
    if (horizon < 1) throw ConfigError("MPC horizon must be at least 1");
    if (Q.size() == 0) Q = default_state_weight(p);
    if (R.size() == 0) R = 0.1 * MatrixXd::Identity(m, m);
    if (Q.rows() != p || Q.cols() != p) {
        throw ConfigError("state weight Q is " + std::to_string(Q.rows()) + "x" + std::to_string(Q.cols()) +
                          " but the model has p = " + std::to_string(p));
    }
    if (R.rows() != m || R.cols() != m) throw ConfigError("input weight R does not match the model inputs");
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eq(0.5 * (Q + Q.transpose()), Eigen::EigenvaluesOnly);
    if (eq.eigenvalues().minCoeff() < -1e-10) throw ConfigError("Q must be positive semidefinite");
    const Eigen::SelfAdjointEigenSolver<MatrixXd> er(0.5 * (R + R.transpose()), Eigen::EigenvaluesOnly);
    if (er.eigenvalues().minCoeff() <= 0.0) throw ConfigError("R must be positive definite");
    if (!(S > 0.0)) throw ConfigError("slack weight S must be positive");
    if (!(rho1 > 0.0)) throw ConfigError("slack penalty rho1 must be positive");
    if (!(eps_max > 0.0)) throw ConfigError("slack cap eps_max must be positive");
    if (!step_margins.empty() && static_cast<int>(step_margins.size()) != horizon) {
        throw ConfigError("step_margins must hold one margin per horizon step");
    }
}

int MpcLayout::dim() const {
    int d = horizon * (p + m);
    if (soft) d += horizon + 1;
    if (soft && epigraph) d += horizon + 1;
    return d;
}

std::vector<ConstraintSet> horizon_constraints(const std::vector<ObstacleSpec>& obstacles, long k,
                                               const Vec2& agent_pos, double delta, int horizon,
                                               bool predict_obstacles) {
    std::vector<ConstraintSet> sets;
    if (!predict_obstacles) {
        sets.push_back(build_constraint_set(obstacles, k, agent_pos, delta));
        return sets;
    }
    sets.reserve(static_cast<std::size_t>(horizon));
    for (int i = 1; i <= horizon; ++i) {
        sets.push_back(build_constraint_set(obstacles, k + i, agent_pos, delta));
    }
    return sets;
}

MpcQp build_mpc_qp(const KoopmanModel& model, const State& x_k, const State& x_ref,
                   const ConstraintSet& constraints, const MpcConfig& cfg) {
    return build_mpc_qp(model, x_k, x_ref, std::vector<ConstraintSet>{constraints}, cfg);
}

MpcQp build_mpc_qp(const KoopmanModel& model, const State& x_k, const State& x_ref,
                   const std::vector<ConstraintSet>& constraints, MpcConfig cfg) {
    const int p = model.lifted_dim();
    const int m = model.input_dim();
    cfg.resolve(p, m);
    const int N = cfg.horizon;
    if (model.dictionary.state_dim() < 2) throw ConfigError("safety constraints need a planar position");
    if (constraints.size() != 1 && static_cast<int>(constraints.size()) != N) {
        throw ConfigError("constraint sets must be one (frozen) or one per horizon step");
    }
    const int rows_per_step = constraints.empty() ? 0 : constraints.front().rows();
    for (const auto& c : constraints) {
        if (c.rows() != rows_per_step) throw ConfigError("constraint sets differ in row count");
    }

    MpcQp out;
    auto& L = out.layout;
    L.horizon = N;
    L.p = p;
    L.m = m;
    L.safety_rows_per_step = rows_per_step;
    L.soft = cfg.soft_constraints;
    L.epigraph = cfg.soft_constraints && cfg.slack_norm == SlackNorm::Inf;
    const int d = L.dim();

    out.z0 = lift(model.dictionary, x_k);
    out.z_ref = lift(model.dictionary, x_ref);
    const MatrixXd B0 = model.input_matrix(out.z0);

    QpProblem& qp = out.problem;
    qp.P = MatrixXd::Zero(d, d);
    qp.q = VectorXd::Zero(d);
    const VectorXd Qz = cfg.Q * out.z_ref;
    for (int i = 1; i <= N; ++i) {
        qp.P.block(L.z(i), L.z(i), p, p) = 2.0 * cfg.Q;
        qp.q.segment(L.z(i), p) = -2.0 * Qz;
    }
    out.objective_constant = static_cast<double>(N) * out.z_ref.dot(Qz);
    for (int i = 0; i < N; ++i) {
        qp.P.block(L.u(i), L.u(i), m, m) = 2.0 * cfg.R;
    }
    if (L.soft) {
        for (int i = 0; i <= N; ++i) {
            const int idx = i < N ? L.eps(i) : L.eps_shared();
            // with the epigraph the whole penalty sits on t_i >= eps_i; t_i = eps_i at the optimum
            const int pen = L.epigraph ? L.epi(i) : idx;
            qp.P(pen, pen) = 2.0 * cfg.S;
            qp.q(pen) = cfg.rho1;
        }
    }

    // Lifted dynamics: z_{i+1} - A z_i - B0 u_i = 0, z_0 folded into the first row block.
    qp.A_eq = MatrixXd::Zero(N * p, d);
    qp.b_eq = VectorXd::Zero(N * p);
    for (int i = 0; i < N; ++i) {
        const auto r = i * p;
        qp.A_eq.block(r, L.z(i + 1), p, p) = MatrixXd::Identity(p, p);
        qp.A_eq.block(r, L.u(i), p, m) = -B0;
        if (i == 0) {
            qp.b_eq.segment(r, p) = model.A * out.z0;
        } else {
            qp.A_eq.block(r, L.z(i), p, p) = -model.A;
        }
    }

    // Safety rows H pos(z_i) + b >= margin_i - eps_s - eps_{i-1}, slack caps and epigraph rows.
    const int n_safety = N * rows_per_step;
    const int n_caps = (L.soft && n_safety > 0) ? N : 0;
    const int n_epi = L.epigraph ? N + 1 : 0;
    const int n_in = n_safety + n_caps + n_epi;
    qp.A_in = MatrixXd::Zero(n_in, d);
    qp.l_in = VectorXd::Constant(n_in, -kInf);
    qp.u_in = VectorXd::Constant(n_in, kInf);
    int row = 0;
    for (int i = 1; i <= N; ++i) {
        const ConstraintSet& set = constraints.size() == 1 ? constraints.front()
                                                           : constraints[static_cast<std::size_t>(i - 1)];
        const double margin = cfg.step_margins.empty() ? set.margin
                                                       : cfg.step_margins[static_cast<std::size_t>(i - 1)];
        for (int j = 0; j < rows_per_step; ++j, ++row) {
            qp.A_in(row, L.z(i)) = set.H(j, 0);
            qp.A_in(row, L.z(i) + 1) = set.H(j, 1);
            if (L.soft) {
                qp.A_in(row, L.eps(i - 1)) = 1.0;
                qp.A_in(row, L.eps_shared()) = 1.0;
            }
            qp.l_in(row) = margin - set.b(j);
        }
    }
    for (int i = 0; i < n_caps; ++i, ++row) {
        qp.A_in(row, L.eps(i)) = 1.0;
        qp.A_in(row, L.eps_shared()) = 1.0;
        qp.u_in(row) = cfg.eps_max;
    }
    for (int i = 0; i < n_epi; ++i, ++row) {
        qp.A_in(row, L.epi(i)) = 1.0;
        qp.A_in(row, i < N ? L.eps(i) : L.eps_shared()) = -1.0;
        qp.l_in(row) = 0.0;
    }

    qp.lb = VectorXd::Constant(d, -kInf);
    qp.ub = VectorXd::Constant(d, kInf);
    for (int i = 0; i < N; ++i) {
        qp.lb(L.u(i)) = cfg.bounds.v_min;
        qp.ub(L.u(i)) = cfg.bounds.v_max;
        if (m > 1) {
            qp.lb(L.u(i) + 1) = cfg.bounds.omega_min;
            qp.ub(L.u(i) + 1) = cfg.bounds.omega_max;
        }
    }
    if (L.soft) {
        for (int i = 0; i <= N; ++i) {
            const int idx = i < N ? L.eps(i) : L.eps_shared();
            qp.lb(idx) = 0.0;
            qp.ub(idx) = cfg.eps_max;
            if (L.epigraph) qp.lb(L.epi(i)) = 0.0;
        }
    }
    return out;
}

double MpcStepResult::max_slack() const {
    double s = slack_shared;
    for (double e : slacks) s = std::max(s, e);
    return s;
}

MpcController::MpcController(MpcConfig cfg) : cfg_(std::move(cfg)) {}

MpcStepResult MpcController::step(const KoopmanModel& model, const State& x_k, const State& x_ref,
                                  const std::vector<ObstacleSpec>& obstacles, long k, double delta) {
    MpcStepResult result;
    auto brake = [&](std::string why) {
        result.control = Control{0.0, 0.0};
        result.fallback = true;
        result.note = std::move(why);
        previous_.reset();
        return result;
    };

    std::vector<ConstraintSet> sets;
    try {
        sets = horizon_constraints(obstacles, k, x_k.position(), delta, cfg_.horizon, cfg_.predict_obstacles);
    } catch (const DegenerateNormal& e) {
        return brake(e.what());
    }

    const MpcQp mq = build_mpc_qp(model, x_k, x_ref, sets, cfg_);
    const MpcLayout& L = mq.layout;

    QpWarmStart warm;
    const QpWarmStart* warm_ptr = nullptr;
    if (cfg_.warm_start && previous_ && previous_->layout.dim() == L.dim() &&
        previous_->layout.safety_rows_per_step == L.safety_rows_per_step) {
        const QpSolution& prev = previous_->solution;
        warm.w = prev.w;
        warm.mu = prev.mu;
        warm.nu = prev.nu;
        warm.lambda = prev.lambda;
        warm.rho = prev.rho;
        const int N = L.horizon;
        for (VectorXd* v : {&warm.w, &warm.mu}) {
            if (v->size() != L.dim()) continue;
            shift_blocks(*v, L.z(1), L.p, N);
            shift_blocks(*v, L.u(0), L.m, N);
            if (L.soft) shift_blocks(*v, L.eps(0), 1, N);
            if (L.epigraph) shift_blocks(*v, L.epi(0), 1, N);
        }
        if (warm.nu.size() == N * L.p) shift_blocks(warm.nu, 0, L.p, N);
        if (warm.lambda.size() == mq.problem.l_in.size()) {
            shift_blocks(warm.lambda, 0, L.safety_rows_per_step, N);
        } else {
            warm.lambda.resize(0);
        }
        warm_ptr = &warm;
        result.warm_started = true;
    }

    QpSolver solver(cfg_.solver);
    const QpSolution sol = solver.solve(mq.problem, warm_ptr);
    result.status = sol.status;
    result.solve_time_ms = sol.solve_time_ms;
    result.iterations = sol.iterations;
    if (sol.status != QpStatus::Optimal) {
        return brake("qp " + to_string(sol.status));
    }

    const VectorXd& w = sol.w;
    result.control = cfg_.bounds.clamp(Control{w(L.u(0)), L.m > 1 ? w(L.u(0) + 1) : 0.0});
    result.lifted_trajectory.reserve(static_cast<std::size_t>(L.horizon + 1));
    result.lifted_trajectory.push_back(mq.z0);
    for (int i = 1; i <= L.horizon; ++i) result.lifted_trajectory.push_back(w.segment(L.z(i), L.p));
    if (L.soft) {
        for (int i = 0; i < L.horizon; ++i) result.slacks.push_back(std::max(0.0, w(L.eps(i))));
        result.slack_shared = std::max(0.0, w(L.eps_shared()));
    }
    result.objective = sol.objective + mq.objective_constant;
    if (cfg_.warm_start) {
        previous_ = Cache{L, sol};
    }
    return result;
}

}  // namespace koopnav
