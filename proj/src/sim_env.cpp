#include "koopnav/sim_env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "koopnav/errors.hpp"

namespace koopnav {

namespace {

constexpr double kPi = std::numbers::pi;

void require_finite(double value, const char* name) {
    if (!std::isfinite(value)) {
        throw InvalidInput(std::string("non-finite ") + name);
    }
}

State random_state(const Workspace& ws, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ux(ws.x_min, ws.x_max);
    std::uniform_real_distribution<double> uy(ws.y_min, ws.y_max);
    std::uniform_real_distribution<double> ut(-kPi, kPi);
    State s;
    s.x = ux(rng);
    s.y = uy(rng);
    s.theta = wrap_angle(ut(rng));
    return s;
}

Vec2 random_goal(const Workspace& ws, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ux(ws.x_min, ws.x_max);
    std::uniform_real_distribution<double> uy(ws.y_min, ws.y_max);
    const double x = ux(rng);
    return {x, uy(rng)};
}

}  // namespace

double wrap_angle(double angle) {
    if (!std::isfinite(angle)) {
        return angle;
    }
    double wrapped = std::remainder(angle, 2.0 * kPi);  // [-pi, pi]
    if (wrapped <= -kPi) {
        wrapped += 2.0 * kPi;
    }
    return wrapped;
}

State State::from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() != 3) {
        throw InvalidInput("state vector must have 3 entries");
    }
    return State{v(0), v(1), wrap_angle(v(2))};
}

bool ControlBounds::contains(const Control& u, double tol) const {
    return u.v >= v_min - tol && u.v <= v_max + tol && u.omega >= omega_min - tol &&
           u.omega <= omega_max + tol;
}

Control ControlBounds::clamp(const Control& u) const {
    return Control{std::clamp(u.v, v_min, v_max), std::clamp(u.omega, omega_min, omega_max)};
}

State unicycle_step(const State& state, const Control& control, double dt) {
    require_finite(state.x, "state.x");
    require_finite(state.y, "state.y");
    require_finite(state.theta, "state.theta");
    require_finite(control.v, "control.v");
    require_finite(control.omega, "control.omega");
    if (!(dt > 0.0) || !std::isfinite(dt)) {
        throw InvalidInput("dt must be positive and finite");
    }
    State next;
    next.x = state.x + dt * control.v * std::cos(state.theta);
    next.y = state.y + dt * control.v * std::sin(state.theta);
    next.theta = wrap_angle(state.theta + dt * control.omega);
    return next;
}

Vec2 obstacle_center(const ObstacleSpec& spec, long k) {
    const double t = static_cast<double>(k);
    return std::visit(
        [t](const auto& m) -> Vec2 {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, StaticMotion>) {
                return m.center;
            } else if constexpr (std::is_same_v<M, LinearMotion>) {
                return m.start + t * m.velocity;
            } else {
                return m.center + std::sin(2.0 * kPi * t / m.period + m.phase) * m.amplitude;
            }
        },
        spec.motion);
}

int nearest_obstacle(const Vec2& position, const std::vector<ObstacleSpec>& obstacles, long k) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < obstacles.size(); ++i) {
        const double d = (position - obstacle_center(obstacles[i], k)).norm() - obstacles[i].radius;
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

double min_obstacle_distance(const State& state, const std::vector<ObstacleSpec>& obstacles, long k) {
    const int i = nearest_obstacle(state.position(), obstacles, k);
    if (i < 0) {
        return std::numeric_limits<double>::infinity();
    }
    const auto& o = obstacles[static_cast<std::size_t>(i)];
    return (state.position() - obstacle_center(o, k)).norm() - o.radius;
}

std::string to_string(ExcitationPolicy policy) {
    switch (policy) {
        case ExcitationPolicy::UniformRandom: return "uniform";
        case ExcitationPolicy::RandomWalk: return "random-walk";
        case ExcitationPolicy::WaypointTracking: return "tracking";
    }
    return "uniform";
}

ExcitationPolicy excitation_policy_from_string(const std::string& name) {
    if (name == "uniform") return ExcitationPolicy::UniformRandom;
    if (name == "random-walk") return ExcitationPolicy::RandomWalk;
    if (name == "tracking") return ExcitationPolicy::WaypointTracking;
    throw InvalidInput("unknown excitation policy '" + name + "'");
}

Control tracking_control(const State& state, const Vec2& goal, const ControlBounds& bounds) {
    const Vec2 delta = goal - state.position();
    const double dist = delta.norm();
    const double heading_error = wrap_angle(std::atan2(delta.y(), delta.x()) - state.theta);
    Control u;
    u.v = 1.0 * dist * std::cos(heading_error);
    u.omega = 2.0 * heading_error;
    return bounds.clamp(u);
}

Dataset collect_dataset(const CollectionConfig& config) {
    if (config.episodes < 0 || config.steps < 0) {
        throw InvalidInput("episodes and steps must be non-negative");
    }
    Dataset out;
    out.transitions.reserve(static_cast<std::size_t>(config.episodes) *
                            static_cast<std::size_t>(config.steps));
    std::mt19937_64 rng(config.seed);
    const auto& b = config.bounds;
    std::uniform_real_distribution<double> uv(b.v_min, b.v_max);
    std::uniform_real_distribution<double> uw(b.omega_min, b.omega_max);
    std::normal_distribution<double> gauss(0.0, 1.0);

    for (int e = 0; e < config.episodes; ++e) {
        State s = random_state(config.workspace, rng);
        Control u{uv(rng), uw(rng)};
        Vec2 goal = random_goal(config.workspace, rng);
        for (int t = 0; t < config.steps; ++t) {
            switch (config.policy) {
                case ExcitationPolicy::UniformRandom:
                    u = Control{uv(rng), uw(rng)};
                    break;
                case ExcitationPolicy::RandomWalk:
                    u.v += 0.2 * (b.v_max - b.v_min) * gauss(rng);
                    u.omega += 0.2 * (b.omega_max - b.omega_min) * gauss(rng);
                    u = b.clamp(u);
                    break;
                case ExcitationPolicy::WaypointTracking:
                    if ((goal - s.position()).norm() < 0.2) {
                        goal = random_goal(config.workspace, rng);
                    }
                    u = tracking_control(s, goal, b);
                    u.v += 0.1 * (b.v_max - b.v_min) * gauss(rng);
                    u.omega += 0.1 * (b.omega_max - b.omega_min) * gauss(rng);
                    u = b.clamp(u);
                    break;
            }
            const State next = unicycle_step(s, u, config.dt);
            out.transitions.push_back(Transition{s, u, next});
            s = next;
        }
    }

    if (!out.transitions.empty()) {
        const double n = static_cast<double>(out.transitions.size());
        double mv = 0.0, mw = 0.0;
        for (const auto& tr : out.transitions) {
            mv += tr.control.v;
            mw += tr.control.omega;
        }
        mv /= n;
        mw /= n;
        double var_v = 0.0, var_w = 0.0;
        for (const auto& tr : out.transitions) {
            var_v += (tr.control.v - mv) * (tr.control.v - mv);
            var_w += (tr.control.omega - mw) * (tr.control.omega - mw);
        }
        if (var_v / n < 1e-12 || var_w / n < 1e-12) {
            out.warnings.emplace_back(
                "rank deficiency: excitation policy produced zero control variance; "
                "the input block of the regressor will be singular");
        }
    }
    return out;
}

Plant::Plant(Disturbance disturbance, std::uint64_t seed, double dt)
    : disturbance_(disturbance), rng_(seed), dt_(dt) {}

State Plant::step(const State& state, const Control& command) {
    Control applied = command;
    if (disturbance_.active()) {
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        const double wv = unit(rng_);
        const double ww = unit(rng_);
        applied.v += disturbance_.v_amplitude * wv;
        applied.omega += disturbance_.omega_amplitude * ww;
    }
    last_applied_ = applied;
    return unicycle_step(state, applied, dt_);
}

}  // namespace koopnav
