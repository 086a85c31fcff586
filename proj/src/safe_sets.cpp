#include "koopnav/safe_sets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "koopnav/errors.hpp"

namespace koopnav {

TightenedHalfSpace ConstraintSet::row(int i) const {
    HalfSpace hs;
    hs.normal = H.row(i).transpose();
    hs.offset = b(i);
    hs.obstacle_id = obstacle_ids.empty() ? -1 : obstacle_ids[static_cast<std::size_t>(i)];
    return TightenedHalfSpace{hs, margin};
}

double ConstraintSet::min_slack(const Vec2& q) const {
    if (empty()) return std::numeric_limits<double>::infinity();
    return ((H * q) + b).minCoeff() - margin;
}

HalfSpace halfspace_from_circle(const Vec2& center, double radius, const Vec2& agent_pos,
                                int obstacle_id) {
    if (!center.allFinite() || !agent_pos.allFinite() || !std::isfinite(radius)) {
        throw InvalidInput("non-finite obstacle or agent position");
    }
    const Vec2 d = agent_pos - center;
    const double dist = d.norm();
    if (dist == 0.0) {
        throw DegenerateNormal(obstacle_id, "agent at center of obstacle " + std::to_string(obstacle_id) +
                                                "; no separating half-space");
    }
    HalfSpace hs;
    hs.normal = d / dist;
    hs.offset = -hs.normal.dot(center) - radius;
    hs.obstacle_id = obstacle_id;
    return hs;
}

TightenedHalfSpace tighten(const HalfSpace& hs, double delta) {
    if (!(delta >= 0.0) || !std::isfinite(delta)) {
        throw InvalidInput("tightening margin must be finite and non-negative");
    }
    return TightenedHalfSpace{hs, delta};
}

ConstraintSet build_constraint_set(const std::vector<ObstacleSpec>& obstacles, long k,
                                   const Vec2& agent_pos, double delta) {
    if (!(delta >= 0.0) || !std::isfinite(delta)) {
        throw InvalidInput("tightening margin must be finite and non-negative");
    }
    std::vector<std::size_t> order(obstacles.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return obstacles[a].id < obstacles[b].id; });

    ConstraintSet set;
    const auto rows = static_cast<Eigen::Index>(obstacles.size());
    set.H.resize(rows, 2);
    set.b.resize(rows);
    set.margin = delta;
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& o = obstacles[order[static_cast<std::size_t>(r)]];
        const HalfSpace hs = halfspace_from_circle(obstacle_center(o, k), o.radius, agent_pos, o.id);
        set.H.row(r) = hs.normal.transpose();
        set.b(r) = hs.offset;
        set.obstacle_ids.push_back(o.id);
    }
    return set;
}

}  // namespace koopnav
