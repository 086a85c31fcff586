#pragma once

// Tangent half-space outer approximations of disk obstacles, tightened by
// the conformal margin.

#include <vector>

#include <Eigen/Dense>

#include "koopnav/sim_env.hpp"

namespace koopnav {

/// h(q) = n . q + c with |n| = 1, so h is 1-Lipschitz in position.
struct HalfSpace {
    Vec2 normal{1.0, 0.0};
    double offset{0.0};
    int obstacle_id{-1};

    [[nodiscard]] double evaluate(const Vec2& q) const { return normal.dot(q) + offset; }
};

/// Feasible region {q : h(q) >= margin}. The margin is carried separately so
/// that raw clearance and tightening can be reported independently.
struct TightenedHalfSpace {
    HalfSpace base;
    double margin{0.0};

    [[nodiscard]] double slack(const Vec2& q) const { return base.evaluate(q) - margin; }
    [[nodiscard]] bool contains(const Vec2& q) const { return slack(q) >= 0.0; }
};

/// Rows of H are unit normals; row i reads H.row(i) q + b(i) >= margin.
struct ConstraintSet {
    Eigen::Matrix<double, Eigen::Dynamic, 2> H;
    Eigen::VectorXd b;
    double margin{0.0};
    std::vector<int> obstacle_ids;

    [[nodiscard]] int rows() const { return static_cast<int>(b.size()); }
    [[nodiscard]] bool empty() const { return b.size() == 0; }
    [[nodiscard]] TightenedHalfSpace row(int i) const;
    /// min_i (H_i q + b_i - margin); +infinity when empty.
    [[nodiscard]] double min_slack(const Vec2& q) const;
};

/// Tangent plane at the point of the disk nearest to the agent.
/// Throws DegenerateNormal when the agent sits on the center.
HalfSpace halfspace_from_circle(const Vec2& center, double radius, const Vec2& agent_pos,
                                int obstacle_id = -1);

/// Attaches margin delta (>= 0) without touching the offset.
TightenedHalfSpace tighten(const HalfSpace& hs, double delta);

/// One tightened half-space per obstacle at step k, rows ordered by obstacle id.
ConstraintSet build_constraint_set(const std::vector<ObstacleSpec>& obstacles, long k,
                                   const Vec2& agent_pos, double delta);

}  // namespace koopnav
