#pragma once

#include <array>
#include <span>
#include <vector>

#include "cogdrive/scene.hpp"

namespace cogdrive {

/// Instance-centric coordinate frame: origin plus x-axis heading.
struct LocalFrame {
    Vec2 origin;
    double heading = 0.0;

    friend bool operator==(const LocalFrame&, const LocalFrame&) = default;
};

/// [sin dtheta, cos dtheta, sin beta, cos beta, distance]
using RelPosFeature = std::array<double, 5>;

/// Row-major N x N grid of pairwise features; entry (i, j) describes j seen from i.
struct RelPosTensor {
    std::size_t n = 0;
    std::vector<RelPosFeature> data;

    const RelPosFeature& at(std::size_t i, std::size_t j) const { return data[i * n + j]; }
};

/// Agent frame: last observed pose.
LocalFrame frame_of(const AgentHistory& agent);
/// Polyline frame: arc-length midpoint, heading of the segment that contains it
/// (the earlier segment when the midpoint is a vertex).
LocalFrame frame_of(const MapPolyline& polyline);

/// Frames of all instances, agents first (scene order) then polylines.
std::vector<LocalFrame> instance_frames(const Scene& scene);

Pose2 to_local(const LocalFrame& frame, const Pose2& pose);
Pose2 to_global(const LocalFrame& frame, const Pose2& pose);
Vec2 to_local(const LocalFrame& frame, Vec2 p);
Vec2 to_global(const LocalFrame& frame, Vec2 p);

/// Origins closer than 1e-9 m count as coincident and get bearing 0.
RelPosFeature rel_feature(const LocalFrame& from, const LocalFrame& to);
RelPosTensor rel_features(std::span<const LocalFrame> frames);

}  // namespace cogdrive
