#include "cogdrive/scene.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace cogdrive {

namespace {

constexpr double kGridTolerance = 1e-6;

[[noreturn]] void fail(const std::string& what) { throw ValidationError(what); }

bool finite(const Pose2& p) {
    return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.heading);
}

bool heading_normalized(double h) { return h > -kPi && h <= kPi; }

}  // namespace

std::string_view to_string(AgentKind kind) {
    switch (kind) {
        case AgentKind::vehicle: return "vehicle";
        case AgentKind::cyclist: return "cyclist";
        case AgentKind::pedestrian: return "pedestrian";
    }
    return "vehicle";
}

std::string_view to_string(PolylineSemantics semantics) {
    switch (semantics) {
        case PolylineSemantics::lane_center: return "lane_center";
        case PolylineSemantics::lane_boundary: return "lane_boundary";
        case PolylineSemantics::road_edge: return "road_edge";
    }
    return "lane_center";
}

AgentKind parse_agent_kind(std::string_view text) {
    if (text == "vehicle") return AgentKind::vehicle;
    if (text == "cyclist") return AgentKind::cyclist;
    if (text == "pedestrian") return AgentKind::pedestrian;
    fail("unknown agent kind '" + std::string(text) + "'");
}

PolylineSemantics parse_semantics(std::string_view text) {
    if (text == "lane_center") return PolylineSemantics::lane_center;
    if (text == "lane_boundary") return PolylineSemantics::lane_boundary;
    if (text == "road_edge") return PolylineSemantics::road_edge;
    fail("unknown polyline semantics '" + std::string(text) + "'");
}

const AgentHistory& Scene::agent(std::string_view id) const {
    return agents[agent_index(id)];
}

std::size_t Scene::agent_index(std::string_view id) const {
    for (std::size_t i = 0; i < agents.size(); ++i)
        if (agents[i].id == id) return i;
    throw ValidationError("unknown agent id '" + std::string(id) + "'");
}

const AgentFuture& GroundTruthFutures::agent(std::string_view id) const {
    for (const auto& a : agents)
        if (a.id == id) return a;
    throw ValidationError("futures missing agent '" + std::string(id) + "'");
}

void validate(const Scene& scene) {
    if (!(scene.dt > 0.0) || !std::isfinite(scene.dt)) fail("dt must be positive");
    if (scene.agents.empty()) fail("scene needs at least one agent (M >= 1)");

    std::set<std::string> ids;
    for (const auto& a : scene.agents) {
        if (!ids.insert(a.id).second) fail("duplicate agent id '" + a.id + "'");
        if (a.states.size() < 2) fail("agent '" + a.id + "': history length must be >= 2");
        for (std::size_t k = 0; k < a.states.size(); ++k) {
            const auto& s = a.states[k];
            if (!finite(s.pose) || !std::isfinite(s.t) || !std::isfinite(s.speed))
                fail("agent '" + a.id + "': non-finite state");
            if (!heading_normalized(s.pose.heading))
                fail("agent '" + a.id + "': heading not normalized to (-pi, pi]");
            if (s.speed < 0.0) fail("agent '" + a.id + "': negative speed");
            if (k > 0) {
                double step = s.t - a.states[k - 1].t;
                if (step <= 0.0) fail("agent '" + a.id + "': timestamps not strictly increasing");
                if (std::abs(step - scene.dt) > kGridTolerance)
                    fail("agent '" + a.id + "': non-uniform timestep");
            }
        }
    }
    if (!ids.contains(scene.ego_id)) fail("ego_id '" + scene.ego_id + "' not among agents");

    const auto& grid = scene.agents.front().states;
    for (const auto& a : scene.agents) {
        if (a.states.size() != grid.size())
            fail("agent '" + a.id + "': histories do not share the timestamp grid");
        for (std::size_t k = 0; k < grid.size(); ++k)
            if (std::abs(a.states[k].t - grid[k].t) > kGridTolerance)
                fail("agent '" + a.id + "': histories do not share the timestamp grid");
    }

    std::set<std::string> pids;
    for (const auto& p : scene.map) {
        if (!pids.insert(p.id).second) fail("duplicate polyline id '" + p.id + "'");
        if (p.points.size() < 2) fail("polyline '" + p.id + "': needs >= 2 points");
        for (std::size_t k = 0; k < p.points.size(); ++k) {
            if (!std::isfinite(p.points[k].x) || !std::isfinite(p.points[k].y))
                fail("polyline '" + p.id + "': non-finite point");
            if (k > 0 && p.points[k] == p.points[k - 1])
                fail("polyline '" + p.id + "': consecutive points coincide");
        }
    }
}

void validate(const Scene& scene, const GroundTruthFutures& futures) {
    validate(scene);
    if (futures.agents.size() != scene.agents.size())
        fail("futures: agent set differs from scene");
    std::size_t horizon = futures.horizon();
    if (horizon < 1) fail("futures: horizon T_f must be >= 1");
    double t_last = scene.agents.front().states.back().t;
    for (const auto& f : futures.agents) {
        (void)scene.agent(f.id);  // throws for unknown ids
        if (f.states.size() != horizon) fail("futures: agent '" + f.id + "' horizon mismatch");
        for (std::size_t k = 0; k < f.states.size(); ++k) {
            const auto& s = f.states[k];
            if (!finite(s.pose) || !std::isfinite(s.t)) fail("futures: non-finite state");
            if (!heading_normalized(s.pose.heading))
                fail("futures: agent '" + f.id + "' heading not normalized to (-pi, pi]");
            double expected = t_last + static_cast<double>(k + 1) * scene.dt;
            if (std::abs(s.t - expected) > kGridTolerance)
                fail("futures: agent '" + f.id + "' non-uniform timestep");
        }
    }
}

}  // namespace cogdrive
