#pragma once

// Ground-truth unicycle plant, obstacle world and data-collection policies.

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace koopnav {

using Vec2 = Eigen::Vector2d;

/// Wraps an angle into (-pi, pi].
double wrap_angle(double angle);

struct State {
    double x{0.0};
    double y{0.0};
    double theta{0.0};

    [[nodiscard]] Vec2 position() const { return {x, y}; }
    [[nodiscard]] Eigen::Vector3d vector() const { return {x, y, theta}; }
    static State from_vector(const Eigen::Ref<const Eigen::VectorXd>& v);

    friend bool operator==(const State&, const State&) = default;
};

struct Control {
    double v{0.0};
    double omega{0.0};

    [[nodiscard]] Eigen::Vector2d vector() const { return {v, omega}; }
    friend bool operator==(const Control&, const Control&) = default;
};

/// Admissible input box U.
struct ControlBounds {
    double v_min{-1.0};
    double v_max{1.0};
    double omega_min{-2.0};
    double omega_max{2.0};

    [[nodiscard]] bool contains(const Control& u, double tol = 1e-9) const;
    [[nodiscard]] Control clamp(const Control& u) const;
};

/// Axis-aligned box used to sample initial states and goals.
struct Workspace {
    double x_min{-3.0};
    double x_max{3.0};
    double y_min{-3.0};
    double y_max{3.0};
};

inline constexpr double kDefaultDt = 0.1;

/// One Euler step of the unicycle: (x + dt v cos th, y + dt v sin th, wrap(th + dt w)).
/// Throws InvalidInput on non-finite arguments or dt <= 0.
State unicycle_step(const State& state, const Control& control, double dt = kDefaultDt);

struct StaticMotion {
    Vec2 center{0.0, 0.0};
};

/// center(k) = start + k * velocity, velocity in meters per step.
struct LinearMotion {
    Vec2 start{0.0, 0.0};
    Vec2 velocity{0.0, 0.0};
};

/// center(k) = center + amplitude * sin(2 pi k / period + phase).
struct SinusoidalMotion {
    Vec2 center{0.0, 0.0};
    Vec2 amplitude{0.0, 0.0};
    double period{1.0};
    double phase{0.0};
};

using ObstacleMotion = std::variant<StaticMotion, LinearMotion, SinusoidalMotion>;

struct ObstacleSpec {
    int id{0};
    double radius{0.1};
    ObstacleMotion motion{StaticMotion{}};
};

Vec2 obstacle_center(const ObstacleSpec& spec, long k);

/// Signed clearance min_i(|p - c_i(k)| - r_i). Returns +infinity for an empty list.
double min_obstacle_distance(const State& state, const std::vector<ObstacleSpec>& obstacles, long k);

/// Index into `obstacles` of the obstacle realizing min_obstacle_distance, or -1 when empty.
int nearest_obstacle(const Vec2& position, const std::vector<ObstacleSpec>& obstacles, long k);

struct Transition {
    State state;
    Control control;
    State next_state;
};

enum class ExcitationPolicy {
    UniformRandom,    ///< i.i.d. uniform controls over U
    RandomWalk,       ///< smoothed random walk on the controls
    WaypointTracking  ///< proportional tracking toward random goals
};

std::string to_string(ExcitationPolicy policy);
ExcitationPolicy excitation_policy_from_string(const std::string& name);

struct CollectionConfig {
    ExcitationPolicy policy{ExcitationPolicy::UniformRandom};
    int episodes{100};
    int steps{50};
    std::uint64_t seed{7};
    double dt{kDefaultDt};
    ControlBounds bounds{};
    Workspace workspace{};
};

struct Dataset {
    std::vector<Transition> transitions;
    std::vector<std::string> warnings;
};

/// Rolls the noise-free plant under the configured excitation policy.
/// Returns episodes * steps transitions; a policy with zero control variance
/// yields a rank-deficiency warning instead of an exception.
Dataset collect_dataset(const CollectionConfig& config);

/// Bounded additive actuation disturbance: the plant receives u + w with w
/// uniform in [-v_amplitude, v_amplitude] x [-omega_amplitude, omega_amplitude].
struct Disturbance {
    double v_amplitude{0.0};
    double omega_amplitude{0.0};

    [[nodiscard]] bool active() const { return v_amplitude > 0.0 || omega_amplitude > 0.0; }
};

/// Plant with actuation disturbance and its own seeded random stream.
class Plant {
public:
    Plant(Disturbance disturbance, std::uint64_t seed, double dt = kDefaultDt);

    /// Applies the commanded control plus a fresh disturbance sample.
    State step(const State& state, const Control& command);

    [[nodiscard]] const Control& last_applied() const { return last_applied_; }
    [[nodiscard]] double dt() const { return dt_; }

private:
    Disturbance disturbance_;
    std::mt19937_64 rng_;
    double dt_;
    Control last_applied_{};
};

/// Proportional go-to-goal controller used by the tracking excitation policy
/// and by calibration data collection.
Control tracking_control(const State& state, const Vec2& goal, const ControlBounds& bounds);

}  // namespace koopnav
