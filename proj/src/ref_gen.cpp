#include "koopnav/ref_gen.hpp"

#include <cmath>
#include <limits>

#include "koopnav/errors.hpp"

namespace koopnav {

namespace {

constexpr double kViolationTol = 1e-12;

/// Index of the most violated row at q (value below `level`), or -1.
int most_violated(const ConstraintSet& set, const Vec2& q, double level) {
    int worst = -1;
    double worst_value = level - kViolationTol;
    for (int j = 0; j < set.rows(); ++j) {
        const double h = set.H.row(j).dot(q) + set.b(j);
        if (h < worst_value) {
            worst_value = h;
            worst = j;
        }
    }
    return worst;
}

}  // namespace

bool goal_reached(const State& x_k, const Vec2& goal, double tolerance) {
    return (x_k.position() - goal).norm() <= tolerance;
}

Waypoint next_waypoint(const State& x_k, const Vec2& goal, const std::vector<ObstacleSpec>& obstacles,
                       long k, double delta, const RefGenConfig& cfg) {
    if (!goal.allFinite()) throw InvalidInput("goal must be finite");
    if (!(cfg.step > 0.0)) throw InvalidInput("reference step length must be positive");

    const Vec2 pos = x_k.position();
    const Vec2 to_goal = goal - pos;
    const double dist = to_goal.norm();

    Waypoint out;
    auto heading_of = [&](const Vec2& s) {
        return s.norm() > 1e-12 ? std::atan2(s.y(), s.x()) : x_k.theta;
    };

    if (min_obstacle_distance(x_k, obstacles, k) < 0.0) {
        out.pass_through = true;
        out.feasible = false;
        out.reference = State{goal.x(), goal.y(), heading_of(to_goal)};
        return out;
    }

    Vec2 candidate = dist <= cfg.step ? goal : Vec2(pos + cfg.step * to_goal / dist);
    if (obstacles.empty()) {
        out.reference = State{candidate.x(), candidate.y(), heading_of(candidate - pos)};
        return out;
    }

    ConstraintSet set;
    try {
        set = build_constraint_set(obstacles, k, pos, delta);
    } catch (const DegenerateNormal&) {
        out.pass_through = true;
        out.feasible = false;
        out.reference = State{goal.x(), goal.y(), heading_of(to_goal)};
        return out;
    }
    const double level = delta + cfg.clearance_bonus;

    // Sequential sliding, most violated half-space first.
    const int max_rounds = 2 * set.rows() + 2;
    for (int round = 0; round < max_rounds; ++round) {
        const int j = most_violated(set, candidate, level);
        if (j < 0) break;
        const Vec2 n = set.H.row(j).transpose();
        const Vec2 t(-n.y(), n.x());
        const Vec2 s = candidate - pos;
        const double length = s.norm();
        const double normal_part = level - (n.dot(pos) + set.b(j));
        double along = s.dot(t);
        double sign = along >= 0.0 ? 1.0 : -1.0;
        if (std::abs(along) <= 1e-12 * std::max(1.0, length)) {
            sign = 1.0;
            out.tie_break = true;
        }
        const double tangential = std::sqrt(std::max(0.0, length * length - normal_part * normal_part));
        candidate = pos + normal_part * n + sign * tangential * t;
        out.slid = true;
    }

    // Alternating projections when sequential sliding did not settle.
    if (most_violated(set, candidate, level) >= 0) {
        for (int it = 0; it < 200; ++it) {
            const int j = most_violated(set, candidate, level);
            if (j < 0) break;
            const Vec2 n = set.H.row(j).transpose();
            candidate += (level - (n.dot(candidate) + set.b(j))) * n;
        }
    }

    out.feasible = most_violated(set, candidate, delta) < 0;
    out.reference = State{candidate.x(), candidate.y(), heading_of(candidate - pos)};
    return out;
}

}  // namespace koopnav
