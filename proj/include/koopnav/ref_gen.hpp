#pragma once

// Local waypoint generator: greedy single-integrator step toward the goal that
// slides along violated tightened half-spaces.

#include <vector>

#include "koopnav/safe_sets.hpp"
#include "koopnav/sim_env.hpp"

namespace koopnav {

struct RefGenConfig {
    double step{0.3};              ///< meters per call
    double clearance_bonus{0.05};  ///< added to Delta when sliding
    double goal_tolerance{0.1};    ///< delta of the goal test
};

struct Waypoint {
    State reference;
    bool pass_through{false};  ///< agent inside an obstacle; reference is the goal itself
    bool slid{false};          ///< at least one half-space redirected the step
    bool tie_break{false};     ///< goal direction was anti-parallel to a normal
    bool feasible{true};       ///< reference satisfies every tightened half-space
};

/// Waypoint toward `goal` from the agent state at step k. Half-spaces are
/// built at the agent position with margin Delta + clearance bonus. When the
/// step direction is anti-parallel to a violated normal, the slide direction
/// is that normal rotated counterclockwise by 90 degrees.
Waypoint next_waypoint(const State& x_k, const Vec2& goal, const std::vector<ObstacleSpec>& obstacles,
                       long k, double delta, const RefGenConfig& cfg);

/// True iff the position distance to the goal is at most tolerance (closed ball).
bool goal_reached(const State& x_k, const Vec2& goal, double tolerance);

}  // namespace koopnav
