#include "koopnav/qp_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "koopnav/errors.hpp"

namespace koopnav {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoEqualityScale = 1e3;

using SpMat = Eigen::SparseMatrix<double>;

double inf_norm(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

/// All constraints in one system l <= C w <= u.
struct Stacked {
    MatrixXd C;
    VectorXd l;
    VectorXd u;
    int n_eq{0};
    int n_in{0};
    std::vector<int> bound_var;
};

Stacked stack_constraints(const QpProblem& p) {
    Stacked s;
    const int d = p.dim();
    s.n_eq = static_cast<int>(p.b_eq.size());
    s.n_in = static_cast<int>(p.l_in.size());
    if (p.lb.size() == d) {
        for (int j = 0; j < d; ++j) {
            if (std::isfinite(p.lb(j)) || std::isfinite(p.ub(j))) s.bound_var.push_back(j);
        }
    }
    const int nb = static_cast<int>(s.bound_var.size());
    const int m = s.n_eq + s.n_in + nb;
    s.C = MatrixXd::Zero(m, d);
    s.l.resize(m);
    s.u.resize(m);
    if (s.n_eq > 0) {
        s.C.topRows(s.n_eq) = p.A_eq;
        s.l.head(s.n_eq) = p.b_eq;
        s.u.head(s.n_eq) = p.b_eq;
    }
    if (s.n_in > 0) {
        s.C.middleRows(s.n_eq, s.n_in) = p.A_in;
        s.l.segment(s.n_eq, s.n_in) = p.l_in;
        s.u.segment(s.n_eq, s.n_in) = p.u_in;
    }
    for (int k = 0; k < nb; ++k) {
        const int j = s.bound_var[static_cast<std::size_t>(k)];
        s.C(s.n_eq + s.n_in + k, j) = 1.0;
        s.l(s.n_eq + s.n_in + k) = p.lb(j);
        s.u(s.n_eq + s.n_in + k) = p.ub(j);
    }
    return s;
}

/// Ruiz equilibration: P~ = c D P D, q~ = c D q, C~ = E C D.
struct Scaling {
    VectorXd D;
    VectorXd E;
    double c{1.0};
};

Scaling equilibrate(SpMat& P, VectorXd& q, SpMat& C, int iterations) {
    const auto d = P.rows();
    const auto m = C.rows();
    Scaling s{VectorXd::Ones(d), VectorXd::Ones(m), 1.0};
    auto clip = [](double v) { return std::clamp(v, 1e-4, 1e4); };
    auto col_max = [](const SpMat& A, VectorXd& out) {
        for (Eigen::Index j = 0; j < A.outerSize(); ++j) {
            for (SpMat::InnerIterator it(A, j); it; ++it) out(j) = std::max(out(j), std::abs(it.value()));
        }
    };
    for (int it = 0; it < iterations; ++it) {
        VectorXd cn = VectorXd::Zero(d);
        col_max(P, cn);
        col_max(C, cn);
        VectorXd rn = VectorXd::Zero(m);
        for (Eigen::Index j = 0; j < C.outerSize(); ++j) {
            for (SpMat::InnerIterator e(C, j); e; ++e) rn(e.row()) = std::max(rn(e.row()), std::abs(e.value()));
        }
        VectorXd dcol(d), erow(m);
        for (Eigen::Index j = 0; j < d; ++j) dcol(j) = cn(j) < 1e-4 ? 1.0 : 1.0 / std::sqrt(clip(cn(j)));
        for (Eigen::Index i = 0; i < m; ++i) erow(i) = rn(i) < 1e-4 ? 1.0 : 1.0 / std::sqrt(clip(rn(i)));
        for (Eigen::Index j = 0; j < P.outerSize(); ++j) {
            for (SpMat::InnerIterator e(P, j); e; ++e) e.valueRef() *= dcol(e.row()) * dcol(j);
        }
        for (Eigen::Index j = 0; j < C.outerSize(); ++j) {
            for (SpMat::InnerIterator e(C, j); e; ++e) e.valueRef() *= erow(e.row()) * dcol(j);
        }
        q = dcol.cwiseProduct(q);
        s.D = s.D.cwiseProduct(dcol);
        s.E = s.E.cwiseProduct(erow);
    }
    VectorXd pn = VectorXd::Zero(d);
    col_max(P, pn);
    const double mean_col = d > 0 ? pn.sum() / static_cast<double>(d) : 0.0;
    double scale = std::max(mean_col, inf_norm(q));
    scale = scale < 1e-4 ? 1.0 : 1.0 / clip(scale);
    P *= scale;
    q *= scale;
    s.c = scale;
    return s;
}

void check_psd(const MatrixXd& P) {
    const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
    const auto d = P.rows();
    for (double shift : {1e-12, 1e-10, 1e-8, 1e-6}) {
        Eigen::LLT<MatrixXd> llt(P + shift * scale * MatrixXd::Identity(d, d));
        if (llt.info() == Eigen::Success) return;
    }
    throw InvalidProblem("cost matrix P is not positive semidefinite");
}

struct Split {
    VectorXd nu, lambda, mu;
};

Split split_duals(const Stacked& s, const VectorXd& y, int d) {
    Split out;
    out.nu = y.head(s.n_eq);
    out.lambda = y.segment(s.n_eq, s.n_in);
    out.mu = VectorXd::Zero(d);
    for (std::size_t k = 0; k < s.bound_var.size(); ++k) {
        out.mu(s.bound_var[k]) = y(s.n_eq + s.n_in + static_cast<Eigen::Index>(k));
    }
    return out;
}

double violation(double value, double lo, double hi) {
    return std::max({0.0, lo - value, value - hi});
}

void row_terms(double value, double lo, double hi, double mult, KktResiduals& r) {
    r.inequality = std::max(r.inequality, violation(value, lo, hi));
    if (mult > 0.0) {
        if (!std::isfinite(hi)) {
            r.dual_feasibility = std::max(r.dual_feasibility, mult);
        } else {
            r.complementarity = std::max(r.complementarity, mult * std::abs(hi - value));
        }
    } else if (mult < 0.0) {
        if (!std::isfinite(lo)) {
            r.dual_feasibility = std::max(r.dual_feasibility, -mult);
        } else {
            r.complementarity = std::max(r.complementarity, -mult * std::abs(value - lo));
        }
    }
}

}  // namespace

QpProblem QpProblem::unconstrained(const MatrixXd& P, const VectorXd& q) {
    QpProblem p;
    p.P = P;
    p.q = q;
    p.A_eq.resize(0, q.size());
    p.A_in.resize(0, q.size());
    return p;
}

double QpProblem::objective(const VectorXd& w) const { return 0.5 * w.dot(P * w) + q.dot(w); }

void QpProblem::validate() const {
    const auto d = q.size();
    if (d == 0) throw InvalidProblem("QP has no variables");
    if (P.rows() != d || P.cols() != d) throw InvalidProblem("P must be d x d");
    if (!P.allFinite() || !q.allFinite()) throw InvalidProblem("non-finite cost data");
    if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10) throw InvalidProblem("P is not symmetric");
    if (b_eq.size() > 0 && (A_eq.rows() != b_eq.size() || A_eq.cols() != d)) {
        throw InvalidProblem("equality system has inconsistent shape");
    }
    if (!A_eq.allFinite() || !b_eq.allFinite()) throw InvalidProblem("non-finite equality data");
    if (l_in.size() != u_in.size()) throw InvalidProblem("inequality bounds differ in length");
    if (l_in.size() > 0 && (A_in.rows() != l_in.size() || A_in.cols() != d)) {
        throw InvalidProblem("inequality system has inconsistent shape");
    }
    if (!A_in.allFinite()) throw InvalidProblem("non-finite inequality matrix");
    for (Eigen::Index i = 0; i < l_in.size(); ++i) {
        if (std::isnan(l_in(i)) || std::isnan(u_in(i)) || l_in(i) > u_in(i)) {
            throw InvalidProblem("inequality bounds must satisfy l <= u");
        }
    }
    if (lb.size() != ub.size() || (lb.size() != 0 && lb.size() != d)) {
        throw InvalidProblem("variable bounds must be empty or of size d");
    }
    for (Eigen::Index j = 0; j < lb.size(); ++j) {
        if (std::isnan(lb(j)) || std::isnan(ub(j)) || lb(j) > ub(j)) {
            throw InvalidProblem("variable bounds must satisfy lb <= ub");
        }
    }
}

std::string to_string(QpStatus status) {
    switch (status) {
        case QpStatus::Optimal: return "optimal";
        case QpStatus::MaxIterations: return "max-iterations";
        case QpStatus::InfeasibleDetected: return "infeasible-detected";
    }
    return "unknown";
}

double KktResiduals::max() const {
    return std::max({stationarity, equality, inequality, dual_feasibility, complementarity});
}

KktResiduals kkt_residuals(const QpProblem& p, const VectorXd& w, const VectorXd& nu,
                           const VectorXd& lambda, const VectorXd& mu) {
    KktResiduals r;
    VectorXd grad = p.P * w + p.q;
    if (nu.size() > 0) grad += p.A_eq.transpose() * nu;
    if (lambda.size() > 0) grad += p.A_in.transpose() * lambda;
    if (mu.size() > 0) grad += mu;
    r.stationarity = inf_norm(grad);
    if (p.b_eq.size() > 0) r.equality = inf_norm(p.A_eq * w - p.b_eq);
    if (p.l_in.size() > 0) {
        const VectorXd aw = p.A_in * w;
        for (Eigen::Index i = 0; i < aw.size(); ++i) {
            row_terms(aw(i), p.l_in(i), p.u_in(i), lambda.size() > 0 ? lambda(i) : 0.0, r);
        }
    }
    if (p.lb.size() > 0) {
        for (Eigen::Index j = 0; j < w.size(); ++j) {
            row_terms(w(j), p.lb(j), p.ub(j), mu.size() > 0 ? mu(j) : 0.0, r);
        }
    } else if (mu.size() > 0) {
        r.dual_feasibility = std::max(r.dual_feasibility, inf_norm(mu));
    }
    return r;
}

KktResiduals kkt_residuals(const QpProblem& problem, const QpSolution& s) {
    return kkt_residuals(problem, s.w, s.nu, s.lambda, s.mu);
}

namespace {

/// ADMM state in the scaled space. MPC data is mostly zeros, so everything is sparse.
struct Admm {
    SpMat P, C, Ct;
    VectorXd q, l, u;
    Scaling scaling;
    VectorXd rho;
    Eigen::SimplicialLDLT<SpMat> kkt;
    double sigma{1e-6};

    void set_rho(double base) {
        const auto m = C.rows();
        rho.resize(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            if (!std::isfinite(l(i)) && !std::isfinite(u(i))) {
                rho(i) = kRhoMin;
            } else if (l(i) == u(i)) {
                rho(i) = kRhoEqualityScale * base;
            } else {
                rho(i) = base;
            }
        }
    }

    bool factorize() {
        const auto d = P.rows();
        SpMat I(d, d);
        I.setIdentity();
        SpMat K = P + sigma * I;
        if (C.rows() > 0) K += SpMat(Ct * rho.asDiagonal() * C);
        kkt.compute(K);
        return kkt.info() == Eigen::Success && kkt.vectorD().minCoeff() > 0.0;
    }

    [[nodiscard]] VectorXd unscale_x(const VectorXd& x) const { return scaling.D.cwiseProduct(x); }
    [[nodiscard]] VectorXd unscale_y(const VectorXd& y) const {
        return scaling.E.cwiseProduct(y) / scaling.c;
    }
};

/// Solves the equality-constrained KKT system on the guessed active set.
/// Returns false when the reduced system is singular.
bool polish(const Admm& a, const VectorXd& z, const VectorXd& y, VectorXd& x_out, VectorXd& y_out) {
    const auto d = a.P.rows();
    const auto m = a.C.rows();
    std::vector<Eigen::Index> slot(static_cast<std::size_t>(m), -1);
    std::vector<double> target;
    Eigen::Index na = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        double t = 0.0;
        if (a.l(i) == a.u(i)) {
            t = a.l(i);
        } else if (std::isfinite(a.l(i)) && z(i) - a.l(i) < -y(i)) {
            t = a.l(i);
        } else if (std::isfinite(a.u(i)) && a.u(i) - z(i) < y(i)) {
            t = a.u(i);
        } else {
            continue;
        }
        slot[static_cast<std::size_t>(i)] = na++;
        target.push_back(t);
    }
    // Quasi-definite regularization keeps an LDL^T factorization stable; refinement removes its bias.
    const double delta = 1e-9;
    std::vector<Eigen::Triplet<double>> trip, reg;
    for (Eigen::Index j = 0; j < a.P.outerSize(); ++j) {
        for (SpMat::InnerIterator e(a.P, j); e; ++e) trip.emplace_back(e.row(), j, e.value());
    }
    for (Eigen::Index j = 0; j < a.C.outerSize(); ++j) {
        for (SpMat::InnerIterator e(a.C, j); e; ++e) {
            const Eigen::Index k = slot[static_cast<std::size_t>(e.row())];
            if (k < 0) continue;
            trip.emplace_back(d + k, j, e.value());
            trip.emplace_back(j, d + k, e.value());
        }
    }
    SpMat K0(d + na, d + na);
    K0.setFromTriplets(trip.begin(), trip.end());
    for (Eigen::Index j = 0; j < d; ++j) reg.emplace_back(j, j, delta);
    for (Eigen::Index k = 0; k < na; ++k) reg.emplace_back(d + k, d + k, -delta);
    SpMat R(d + na, d + na);
    R.setFromTriplets(reg.begin(), reg.end());
    const SpMat Kreg = K0 + R;

    VectorXd rhs(d + na);
    rhs.head(d) = -a.q;
    for (Eigen::Index k = 0; k < na; ++k) rhs(d + k) = target[static_cast<std::size_t>(k)];
    Eigen::SimplicialLDLT<SpMat> ldl(Kreg);
    if (ldl.info() != Eigen::Success) return false;
    VectorXd sol = ldl.solve(rhs);
    for (int refine = 0; refine < 5; ++refine) {
        const VectorXd res = rhs - K0 * sol;
        sol += ldl.solve(res);
    }
    if (!sol.allFinite()) return false;
    x_out = sol.head(d);
    y_out = VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index k = slot[static_cast<std::size_t>(i)];
        if (k >= 0) y_out(i) = sol(d + k);
    }
    return true;
}

}  // namespace

QpSolution QpSolver::solve(const QpProblem& problem, const QpWarmStart* warm) {
    const auto t0 = std::chrono::steady_clock::now();
    problem.validate();
    check_psd(problem.P);

    const QpSettings& st = settings_;
    const int d = problem.dim();
    const Stacked stacked = stack_constraints(problem);
    const auto m = stacked.C.rows();

    Admm a;
    a.P = problem.P.sparseView();
    a.q = problem.q;
    a.C = stacked.C.sparseView();
    a.sigma = st.sigma;
    a.scaling = equilibrate(a.P, a.q, a.C, st.scaling_iterations);
    a.Ct = a.C.transpose();
    a.l = a.scaling.E.cwiseProduct(stacked.l);
    a.u = a.scaling.E.cwiseProduct(stacked.u);

    double rho_base = st.rho;
    if (warm && warm->rho) rho_base = std::clamp(*warm->rho, kRhoMin, kRhoMax);
    a.set_rho(rho_base);
    if (!a.factorize()) throw InvalidProblem("ADMM linear system is not positive definite");

    VectorXd x = VectorXd::Zero(d);
    VectorXd z = VectorXd::Zero(m);
    VectorXd y = VectorXd::Zero(m);
    if (warm && warm->w.size() == d) {
        x = warm->w.cwiseQuotient(a.scaling.D);
        VectorXd y_unscaled = VectorXd::Zero(m);
        if (warm->nu.size() == stacked.n_eq) y_unscaled.head(stacked.n_eq) = warm->nu;
        if (warm->lambda.size() == stacked.n_in) y_unscaled.segment(stacked.n_eq, stacked.n_in) = warm->lambda;
        if (warm->mu.size() == d) {
            for (std::size_t k = 0; k < stacked.bound_var.size(); ++k) {
                y_unscaled(stacked.n_eq + stacked.n_in + static_cast<Eigen::Index>(k)) =
                    warm->mu(stacked.bound_var[k]);
            }
        }
        y = a.scaling.c * y_unscaled.cwiseQuotient(a.scaling.E);
        z = (a.C * x).cwiseMax(a.l).cwiseMin(a.u);
    }

    const VectorXd Dinv = a.scaling.D.cwiseInverse();
    const VectorXd Einv = a.scaling.E.cwiseInverse();
    const double cinv = 1.0 / a.scaling.c;
    double eps_abs = st.eps_abs;
    double eps_rel = st.eps_rel;

    QpSolution best;
    best.status = QpStatus::MaxIterations;
    bool have_best = false;

    auto finalize = [&](const VectorXd& xs, const VectorXd& zs, const VectorXd& ys) {
        QpSolution cand;
        cand.w = a.unscale_x(xs);
        Split sp = split_duals(stacked, a.unscale_y(ys), d);
        cand.nu = sp.nu;
        cand.lambda = sp.lambda;
        cand.mu = sp.mu;
        cand.kkt = kkt_residuals(problem, cand);
        if (st.polish) {
            VectorXd xp, yp;
            if (polish(a, zs, ys, xp, yp)) {
                QpSolution pol;
                pol.w = a.unscale_x(xp);
                Split sp2 = split_duals(stacked, a.unscale_y(yp), d);
                pol.nu = sp2.nu;
                pol.lambda = sp2.lambda;
                pol.mu = sp2.mu;
                pol.kkt = kkt_residuals(problem, pol);
                pol.polished = true;
                if (pol.kkt.max() <= cand.kkt.max()) cand = std::move(pol);
            }
        }
        if (!have_best || cand.kkt.max() < best.kkt.max()) {
            best = std::move(cand);
            have_best = true;
        }
        return best.kkt.max() <= st.kkt_tolerance;
    };

    int iter = 0;
    bool done = false;
    VectorXd y_prev = y;
    while (iter < st.max_iterations && !done) {
        ++iter;
        VectorXd rhs = st.sigma * x - a.q;
        if (m > 0) rhs += a.Ct * (a.rho.cwiseProduct(z) - y);
        const VectorXd x_tilde = a.kkt.solve(rhs);
        const VectorXd z_tilde = a.C * x_tilde;
        x = st.relaxation * x_tilde + (1.0 - st.relaxation) * x;
        const VectorXd z_hat = st.relaxation * z_tilde + (1.0 - st.relaxation) * z;
        const VectorXd z_new = (z_hat + y.cwiseQuotient(a.rho)).cwiseMax(a.l).cwiseMin(a.u);
        y_prev = y;
        y += a.rho.cwiseProduct(z_hat - z_new);
        z = z_new;

        const bool check = iter % std::max(1, st.check_interval) == 0 || iter == st.max_iterations;
        if (!check) continue;

        const VectorXd Cx = a.C * x;
        const VectorXd Px = a.P * x;
        const VectorXd Cty = m > 0 ? VectorXd(a.Ct * y) : VectorXd::Zero(d);
        const double r_prim = m > 0 ? inf_norm(Einv.cwiseProduct(Cx - z)) : 0.0;
        const double r_dual = cinv * inf_norm(Dinv.cwiseProduct(Px + a.q + Cty));
        const double eps_prim =
            eps_abs + eps_rel * std::max(inf_norm(Einv.cwiseProduct(Cx)), inf_norm(Einv.cwiseProduct(z)));
        const double eps_dual =
            eps_abs + eps_rel * cinv *
                          std::max({inf_norm(Dinv.cwiseProduct(Px)), inf_norm(Dinv.cwiseProduct(Cty)),
                                    inf_norm(Dinv.cwiseProduct(a.q))});

        if (r_prim <= eps_prim && r_dual <= eps_dual) {
            if (finalize(x, z, y)) {
                best.status = QpStatus::Optimal;
                done = true;
                break;
            }
            eps_abs = std::max(eps_abs * 0.1, 1e-14);
            eps_rel = std::max(eps_rel * 0.1, 1e-14);
        }

        // Primal infeasibility certificate from the dual increment.
        if (m > 0) {
            VectorXd dy = y - y_prev;
            for (Eigen::Index i = 0; i < m; ++i) {
                if (!std::isfinite(a.u(i))) dy(i) = std::min(dy(i), 0.0);
                if (!std::isfinite(a.l(i))) dy(i) = std::max(dy(i), 0.0);
            }
            const double dy_norm = inf_norm(a.scaling.E.cwiseProduct(dy));
            if (dy_norm > st.infeasibility_tolerance) {
                double support = 0.0;
                for (Eigen::Index i = 0; i < m; ++i) {
                    if (dy(i) > 0.0) support += a.u(i) * dy(i);
                    if (dy(i) < 0.0) support += a.l(i) * dy(i);
                }
                const double ct_dy = inf_norm(Dinv.cwiseProduct(a.Ct * dy));
                if (std::isfinite(support) && support < -st.infeasibility_tolerance * dy_norm &&
                    ct_dy < st.infeasibility_tolerance * dy_norm) {
                    best.w = a.unscale_x(x);
                    Split sp = split_duals(stacked, a.unscale_y(y), d);
                    best.nu = sp.nu;
                    best.lambda = sp.lambda;
                    best.mu = sp.mu;
                    best.kkt = kkt_residuals(problem, best);
                    best.status = QpStatus::InfeasibleDetected;
                    have_best = true;
                    done = true;
                    break;
                }
            }
        }

        if (st.adaptive_rho && m > 0 && iter % std::max(1, st.adaptive_rho_interval) == 0) {
            const double prim_scale = std::max(inf_norm(Cx), inf_norm(z));
            const double dual_scale = std::max({inf_norm(Px), inf_norm(Cty), inf_norm(a.q)});
            const double rp = inf_norm(Cx - z) / std::max(prim_scale, 1e-12);
            const double rd = inf_norm(Px + a.q + Cty) / std::max(dual_scale, 1e-12);
            if (rd > 0.0) {
                const double proposed = std::clamp(rho_base * std::sqrt(rp / rd), kRhoMin, kRhoMax);
                if (proposed > 5.0 * rho_base || proposed < 0.2 * rho_base) {
                    rho_base = proposed;
                    a.set_rho(rho_base);
                    if (!a.factorize()) throw InvalidProblem("ADMM linear system lost definiteness");
                }
            }
        }
    }

    if (!done) {
        if (finalize(x, z, y)) best.status = QpStatus::Optimal;
    }
    best.iterations = iter;
    best.rho = rho_base;
    best.objective = problem.objective(best.w);
    best.solve_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (best.status == QpStatus::Optimal && best.kkt.max() > st.kkt_tolerance) {
        best.status = QpStatus::MaxIterations;
    }
    return best;
}

QpSolution solve(const QpProblem& problem, const QpSettings& settings, const QpWarmStart* warm_start) {
    QpSolver solver(settings);
    return solver.solve(problem, warm_start);
}

}  // namespace koopnav
