#pragma once

// Lifted linear (Koopman) models fit by extended dynamic mode decomposition
// with control (EDMDc).

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "koopnav/sim_env.hpp"

namespace koopnav {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// How a lifted vector is mapped back to the physical state.
enum class DecodeKind {
    Identity,  ///< x = z[0..n)
    Pose       ///< (x, y, theta) = (z0, z1, atan2(z3, z2))
};

/// Ordered set of observables phi_1..phi_p over the physical state.
class Dictionary {
public:
    using LiftFn = std::function<VectorXd(const VectorXd&)>;

    Dictionary(std::string name, int state_dim, int dim, LiftFn lift, DecodeKind decode,
               std::optional<int> constant_index = std::nullopt);

    /// (x, y, cos th, sin th, sin th cos th, cos^2 th, x cos th, x sin th, y cos th, y sin th, 1)
    static Dictionary default11();
    /// (x, y, cos th, sin th, 1)
    static Dictionary pose5();
    /// phi(x) = x for an n-dimensional state.
    static Dictionary identity(int state_dim);
    /// Resolves a dictionary by its serialized name ("default11", "pose5", "identity<n>").
    static Dictionary from_name(const std::string& name);

    [[nodiscard]] const std::string& name() const { return name_; }
    [[nodiscard]] int state_dim() const { return state_dim_; }
    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] DecodeKind decode_kind() const { return decode_; }
    [[nodiscard]] std::optional<int> constant_index() const { return constant_index_; }

    [[nodiscard]] VectorXd lift(const VectorXd& x) const;
    /// Throws DegenerateHeading for a Pose decoder when z[2] = z[3] = 0.
    [[nodiscard]] VectorXd decode(const VectorXd& z) const;

private:
    std::string name_;
    int state_dim_;
    int dim_;
    LiftFn lift_;
    DecodeKind decode_;
    std::optional<int> constant_index_;
};

struct FitOptions {
    double ridge{1e-8};
    /// Adds input-state coupling terms u_j * z to the regressor so the input
    /// matrix becomes B(z) = B + [N_1 z, ..., N_m z].
    bool bilinear{false};
};

struct FitDiagnostics {
    double residual_norm{0.0};   ///< Frobenius norm of the one-step lifted residual
    double condition_number{0.0};
    int samples{0};
    double ridge{0.0};
};

/// z+ = A z + B(z) u with B(z) = B + sum_j N_j z e_j^T. N is empty for the
/// plain linear model.
struct KoopmanModel {
    Dictionary dictionary;
    MatrixXd A;
    MatrixXd B;
    std::vector<MatrixXd> N;
    FitDiagnostics diagnostics;

    [[nodiscard]] int lifted_dim() const { return static_cast<int>(A.rows()); }
    [[nodiscard]] int input_dim() const { return static_cast<int>(B.cols()); }
    [[nodiscard]] bool bilinear() const { return !N.empty(); }

    /// Input matrix evaluated at lifted state z.
    [[nodiscard]] MatrixXd input_matrix(const VectorXd& z) const;
    /// One lifted step A z + B(z) u.
    [[nodiscard]] VectorXd step(const VectorXd& z, const VectorXd& u) const;
};

/// Stacked least squares for [A B (N)] over lifted snapshot pairs.
/// Throws InvalidInput when the sample count is below the regressor width and
/// IllConditioned (naming the deficient block) when ridge = 0 and the
/// regressor is rank deficient.
KoopmanModel fit_edmdc(const std::vector<VectorXd>& states, const std::vector<VectorXd>& controls,
                       const std::vector<VectorXd>& next_states, const Dictionary& dictionary,
                       const FitOptions& options = {});

KoopmanModel fit_edmdc(const std::vector<Transition>& dataset, const Dictionary& dictionary,
                       const FitOptions& options = {});

VectorXd lift(const Dictionary& dictionary, const State& state);
State decode(const KoopmanModel& model, const VectorXd& z);

/// decode(A lift(x) + B(lift(x)) u).
State predict_one_step(const KoopmanModel& model, const State& state, const Control& control);
VectorXd predict_one_step(const KoopmanModel& model, const VectorXd& state, const VectorXd& control);

/// Pure lifted propagation from lift(state), decoding each step.
std::vector<State> rollout(const KoopmanModel& model, const State& state,
                           const std::vector<Control>& controls);

/// Lifted sequence z_0..z_T of the same propagation.
std::vector<VectorXd> rollout_lifted(const KoopmanModel& model, const VectorXd& z0,
                                     const std::vector<VectorXd>& controls);

}  // namespace koopnav
