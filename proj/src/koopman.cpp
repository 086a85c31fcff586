#include "koopnav/koopman.hpp"

#include <cmath>

#include "koopnav/errors.hpp"

namespace koopnav {

Dictionary::Dictionary(std::string name, int state_dim, int dim, LiftFn lift, DecodeKind decode,
                       std::optional<int> constant_index)
    : name_(std::move(name)),
      state_dim_(state_dim),
      dim_(dim),
      lift_(std::move(lift)),
      decode_(decode),
      constant_index_(constant_index) {
    if (dim_ < state_dim_) {
        throw ConfigError("dictionary '" + name_ + "' has fewer observables than state dimensions");
    }
}

Dictionary Dictionary::default11() {
    auto fn = [](const VectorXd& s) {
        const double x = s(0), y = s(1);
        const double c = std::cos(s(2)), sn = std::sin(s(2));
        VectorXd z(11);
        z << x, y, c, sn, sn * c, c * c, x * c, x * sn, y * c, y * sn, 1.0;
        return z;
    };
    return Dictionary("default11", 3, 11, fn, DecodeKind::Pose, 10);
}

Dictionary Dictionary::pose5() {
    auto fn = [](const VectorXd& s) {
        VectorXd z(5);
        z << s(0), s(1), std::cos(s(2)), std::sin(s(2)), 1.0;
        return z;
    };
    return Dictionary("pose5", 3, 5, fn, DecodeKind::Pose, 4);
}

Dictionary Dictionary::identity(int state_dim) {
    auto fn = [](const VectorXd& s) { return s; };
    return Dictionary("identity" + std::to_string(state_dim), state_dim, state_dim, fn,
                      DecodeKind::Identity);
}

Dictionary Dictionary::from_name(const std::string& name) {
    if (name == "default11") return default11();
    if (name == "pose5") return pose5();
    if (name.rfind("identity", 0) == 0 && name.size() > 8) {
        const int n = std::stoi(name.substr(8));
        if (n > 0) return identity(n);
    }
    throw ConfigError("unknown dictionary '" + name + "'");
}

VectorXd Dictionary::lift(const VectorXd& x) const {
    if (x.size() != state_dim_) {
        throw InvalidInput("state dimension does not match dictionary '" + name_ + "'");
    }
    if (!x.allFinite()) {
        throw InvalidInput("cannot lift a non-finite state");
    }
    return lift_(x);
}

VectorXd Dictionary::decode(const VectorXd& z) const {
    if (z.size() != dim_) {
        throw InvalidInput("lifted dimension does not match dictionary '" + name_ + "'");
    }
    if (!z.allFinite()) {
        throw InvalidInput("cannot decode a non-finite lifted state");
    }
    if (decode_ == DecodeKind::Identity) {
        return z.head(state_dim_);
    }
    if (z(2) == 0.0 && z(3) == 0.0) {
        throw DegenerateHeading("heading observables (cos, sin) are both zero");
    }
    VectorXd x(3);
    x << z(0), z(1), std::atan2(z(3), z(2));
    return x;
}

MatrixXd KoopmanModel::input_matrix(const VectorXd& z) const {
    MatrixXd b = B;
    for (std::size_t j = 0; j < N.size(); ++j) {
        b.col(static_cast<Eigen::Index>(j)) += N[j] * z;
    }
    return b;
}

VectorXd KoopmanModel::step(const VectorXd& z, const VectorXd& u) const {
    return A * z + input_matrix(z) * u;
}

namespace {

int numerical_rank(const MatrixXd& m) {
    if (m.cols() == 0) return 0;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(m);
    qr.setThreshold(1e-12);
    return static_cast<int>(qr.rank());
}

}  // namespace

KoopmanModel fit_edmdc(const std::vector<VectorXd>& states, const std::vector<VectorXd>& controls,
                       const std::vector<VectorXd>& next_states, const Dictionary& dictionary,
                       const FitOptions& options) {
    if (states.size() != controls.size() || states.size() != next_states.size()) {
        throw InvalidInput("state, control and next-state sequences differ in length");
    }
    if (options.ridge < 0.0 || !std::isfinite(options.ridge)) {
        throw InvalidInput("ridge weight must be non-negative");
    }
    const int p = dictionary.dim();
    const int samples = static_cast<int>(states.size());
    const int m = samples > 0 ? static_cast<int>(controls.front().size()) : 0;
    if (samples == 0 || m == 0) {
        throw InvalidInput("EDMDc needs a nonempty dataset with at least one input");
    }

    // Bilinear columns skip the constant observable (u_j * 1 duplicates u_j).
    std::vector<int> coupled;
    if (options.bilinear) {
        for (int i = 0; i < p; ++i) {
            if (dictionary.constant_index() != i) coupled.push_back(i);
        }
    }
    const int pc = static_cast<int>(coupled.size());
    const int width = p + m + m * pc;
    if (samples < width) {
        throw InvalidInput("underdetermined fit: " + std::to_string(samples) + " samples for " +
                           std::to_string(width) + " regressors");
    }

    MatrixXd phi(samples, width);
    MatrixXd target(samples, p);
    for (int r = 0; r < samples; ++r) {
        const VectorXd z = dictionary.lift(states[static_cast<std::size_t>(r)]);
        const VectorXd& u = controls[static_cast<std::size_t>(r)];
        if (u.size() != m) throw InvalidInput("inconsistent control dimension");
        phi.row(r).head(p) = z.transpose();
        phi.row(r).segment(p, m) = u.transpose();
        for (int j = 0; j < m; ++j) {
            for (int c = 0; c < pc; ++c) {
                phi(r, p + m + j * pc + c) = u(j) * z(coupled[static_cast<std::size_t>(c)]);
            }
        }
        target.row(r) = dictionary.lift(next_states[static_cast<std::size_t>(r)]).transpose();
    }

    if (options.ridge == 0.0) {
        const int full = numerical_rank(phi);
        if (full < width) {
            std::string block = "joint";
            if (numerical_rank(phi.leftCols(p)) < p) {
                block = "state";
            } else if (numerical_rank(phi.middleCols(p, m)) < m) {
                block = "input";
            } else if (numerical_rank(phi.leftCols(p + m)) < p + m) {
                block = "state-input";
            } else if (pc > 0) {
                block = "bilinear";
            }
            throw IllConditioned(block, "rank-deficient EDMDc regressor (" + block + " block): rank " +
                                            std::to_string(full) + " < " + std::to_string(width));
        }
    }

    MatrixXd theta;
    if (options.ridge > 0.0) {
        MatrixXd aug(samples + width, width);
        aug.topRows(samples) = phi;
        aug.bottomRows(width) = std::sqrt(options.ridge) * MatrixXd::Identity(width, width);
        MatrixXd rhs = MatrixXd::Zero(samples + width, p);
        rhs.topRows(samples) = target;
        theta = aug.colPivHouseholderQr().solve(rhs);
    } else {
        theta = phi.colPivHouseholderQr().solve(target);
    }

    KoopmanModel model{dictionary, MatrixXd(), MatrixXd(), {}, {}};
    const MatrixXd coeffs = theta.transpose();  // p x width
    model.A = coeffs.leftCols(p);
    model.B = coeffs.middleCols(p, m);
    if (pc > 0) {
        model.N.assign(static_cast<std::size_t>(m), MatrixXd::Zero(p, p));
        for (int j = 0; j < m; ++j) {
            for (int c = 0; c < pc; ++c) {
                model.N[static_cast<std::size_t>(j)].col(coupled[static_cast<std::size_t>(c)]) =
                    coeffs.col(p + m + j * pc + c);
            }
        }
    }

    const Eigen::BDCSVD<MatrixXd> svd(phi);
    const auto& sv = svd.singularValues();
    model.diagnostics.condition_number =
        sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
    model.diagnostics.residual_norm = (target - phi * theta).norm();
    model.diagnostics.samples = samples;
    model.diagnostics.ridge = options.ridge;
    return model;
}

KoopmanModel fit_edmdc(const std::vector<Transition>& dataset, const Dictionary& dictionary,
                       const FitOptions& options) {
    std::vector<VectorXd> xs, us, xn;
    xs.reserve(dataset.size());
    us.reserve(dataset.size());
    xn.reserve(dataset.size());
    for (const auto& t : dataset) {
        xs.emplace_back(t.state.vector());
        us.emplace_back(t.control.vector());
        xn.emplace_back(t.next_state.vector());
    }
    return fit_edmdc(xs, us, xn, dictionary, options);
}

VectorXd lift(const Dictionary& dictionary, const State& state) {
    return dictionary.lift(state.vector());
}

State decode(const KoopmanModel& model, const VectorXd& z) {
    return State::from_vector(model.dictionary.decode(z));
}

State predict_one_step(const KoopmanModel& model, const State& state, const Control& control) {
    const VectorXd z = lift(model.dictionary, state);
    return decode(model, model.step(z, control.vector()));
}

VectorXd predict_one_step(const KoopmanModel& model, const VectorXd& state, const VectorXd& control) {
    const VectorXd z = model.dictionary.lift(state);
    return model.dictionary.decode(model.step(z, control));
}

std::vector<VectorXd> rollout_lifted(const KoopmanModel& model, const VectorXd& z0,
                                     const std::vector<VectorXd>& controls) {
    std::vector<VectorXd> zs;
    zs.reserve(controls.size() + 1);
    zs.push_back(z0);
    for (const auto& u : controls) {
        zs.push_back(model.step(zs.back(), u));
    }
    return zs;
}

std::vector<State> rollout(const KoopmanModel& model, const State& state,
                           const std::vector<Control>& controls) {
    std::vector<VectorXd> us;
    us.reserve(controls.size());
    for (const auto& u : controls) us.emplace_back(u.vector());
    const auto zs = rollout_lifted(model, lift(model.dictionary, state), us);
    std::vector<State> out;
    out.reserve(controls.size());
    for (std::size_t i = 1; i < zs.size(); ++i) {
        out.push_back(decode(model, zs[i]));
    }
    return out;
}

}  // namespace koopnav
