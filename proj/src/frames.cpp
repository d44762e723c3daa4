#include "cogdrive/frames.hpp"

#include <cmath>

namespace cogdrive {

LocalFrame frame_of(const AgentHistory& agent) {
    const Pose2& p = agent.current().pose;
    return {{p.x, p.y}, p.heading};
}

LocalFrame frame_of(const MapPolyline& polyline) {
    const auto& pts = polyline.points;
    double total = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) total += (pts[i] - pts[i - 1]).norm();
    double half = 0.5 * total;
    // A midpoint on a vertex belongs to the earlier segment. The tolerance keeps
    // that choice stable when rounding moves the lengths by a few ulps, as a
    // rotation of the map does.
    const double tie = 1e-9 * total;
    double walked = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        Vec2 seg = pts[i] - pts[i - 1];
        double len = seg.norm();
        if (walked + len >= half - tie || i + 1 == pts.size()) {
            double w = len > 0.0 ? (half - walked) / len : 0.0;
            Vec2 mid = pts[i - 1] + seg * w;
            return {mid, wrap_angle(std::atan2(seg.y, seg.x))};
        }
        walked += len;
    }
    return {pts.front(), 0.0};
}

std::vector<LocalFrame> instance_frames(const Scene& scene) {
    std::vector<LocalFrame> out;
    out.reserve(scene.agents.size() + scene.map.size());
    for (const auto& a : scene.agents) out.push_back(frame_of(a));
    for (const auto& p : scene.map) out.push_back(frame_of(p));
    return out;
}

Vec2 to_local(const LocalFrame& frame, Vec2 p) {
    Vec2 d = p - frame.origin;
    double c = std::cos(frame.heading), s = std::sin(frame.heading);
    return {c * d.x + s * d.y, -s * d.x + c * d.y};
}

Vec2 to_global(const LocalFrame& frame, Vec2 p) {
    double c = std::cos(frame.heading), s = std::sin(frame.heading);
    return {frame.origin.x + c * p.x - s * p.y, frame.origin.y + s * p.x + c * p.y};
}

Pose2 to_local(const LocalFrame& frame, const Pose2& pose) {
    Vec2 p = to_local(frame, Vec2{pose.x, pose.y});
    return {p.x, p.y, wrap_angle(pose.heading - frame.heading)};
}

Pose2 to_global(const LocalFrame& frame, const Pose2& pose) {
    Vec2 p = to_global(frame, Vec2{pose.x, pose.y});
    return {p.x, p.y, wrap_angle(pose.heading + frame.heading)};
}

namespace {
constexpr double kCoincident = 1e-9;  // m
}  // namespace

RelPosFeature rel_feature(const LocalFrame& from, const LocalFrame& to) {
    double dtheta = to.heading - from.heading;
    Vec2 d = to.origin - from.origin;
    double dist = d.norm();
    // Bearing is undefined for coincident origins; defined as 0 there. Origins
    // closer than kCoincident count as coincident, otherwise rounding noise of a
    // shared point (two lanes crossing at their midpoints) picks a random bearing.
    double beta = dist > kCoincident ? std::atan2(d.y, d.x) - from.heading : 0.0;
    return {std::sin(dtheta), std::cos(dtheta), std::sin(beta), std::cos(beta), dist};
}

RelPosTensor rel_features(std::span<const LocalFrame> frames) {
    RelPosTensor out;
    out.n = frames.size();
    out.data.resize(out.n * out.n);
    for (std::size_t i = 0; i < out.n; ++i)
        for (std::size_t j = 0; j < out.n; ++j)
            out.data[i * out.n + j] = i == j ? RelPosFeature{0.0, 1.0, 0.0, 1.0, 0.0}
                                             : rel_feature(frames[i], frames[j]);
    return out;
}

}  // namespace cogdrive
