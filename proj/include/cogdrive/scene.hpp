#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cogdrive/common.hpp"

namespace cogdrive {

struct Pose2 {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;  // radians in (-pi, pi]

    friend bool operator==(const Pose2&, const Pose2&) = default;
    Vec2 position() const { return {x, y}; }
};

enum class AgentKind { vehicle, cyclist, pedestrian };
enum class PolylineSemantics { lane_center, lane_boundary, road_edge };

std::string_view to_string(AgentKind kind);
std::string_view to_string(PolylineSemantics semantics);
AgentKind parse_agent_kind(std::string_view text);
PolylineSemantics parse_semantics(std::string_view text);

struct AgentState {
    double t = 0.0;
    Pose2 pose;
    double speed = 0.0;

    friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct AgentHistory {
    std::string id;
    AgentKind kind = AgentKind::vehicle;
    std::vector<AgentState> states;

    friend bool operator==(const AgentHistory&, const AgentHistory&) = default;
    const AgentState& current() const { return states.back(); }
};

struct MapPolyline {
    std::string id;
    std::vector<Vec2> points;
    PolylineSemantics semantics = PolylineSemantics::lane_center;

    friend bool operator==(const MapPolyline&, const MapPolyline&) = default;
};

struct Scene {
    std::vector<AgentHistory> agents;
    std::vector<MapPolyline> map;
    std::string ego_id;
    double dt = 0.1;

    friend bool operator==(const Scene&, const Scene&) = default;

    const AgentHistory& agent(std::string_view id) const;
    const AgentHistory& ego() const { return agent(ego_id); }
    std::size_t agent_index(std::string_view id) const;
    std::size_t history_length() const { return agents.front().states.size(); }
};

struct FutureState {
    double t = 0.0;
    Pose2 pose;

    friend bool operator==(const FutureState&, const FutureState&) = default;
};

struct AgentFuture {
    std::string id;
    std::vector<FutureState> states;

    friend bool operator==(const AgentFuture&, const AgentFuture&) = default;
};

struct GroundTruthFutures {
    std::vector<AgentFuture> agents;

    friend bool operator==(const GroundTruthFutures&, const GroundTruthFutures&) = default;

    const AgentFuture& agent(std::string_view id) const;
    std::size_t horizon() const { return agents.empty() ? 0 : agents.front().states.size(); }
};

/// Generator provenance attached to synthetic scenarios.
struct ScenarioLabel {
    std::string template_name;
    std::string outcome;      // "yield" or "pass" for the ego-conflict pair
    std::string conflict_id;  // empty when the template has no conflict agent

    friend bool operator==(const ScenarioLabel&, const ScenarioLabel&) = default;
};

struct Scenario {
    Scene scene;
    std::optional<GroundTruthFutures> futures;
    std::optional<ScenarioLabel> label;

    friend bool operator==(const Scenario&, const Scenario&) = default;
};

inline constexpr std::string_view kSceneFormat = "cogdrive-scene/1";

/// Throws ValidationError naming the violated invariant.
void validate(const Scene& scene);
void validate(const Scene& scene, const GroundTruthFutures& futures);

Scenario load_scenario(const std::filesystem::path& path);
Scenario parse_scenario(std::string_view text);
void save_scenario(const Scene& scene, const std::optional<GroundTruthFutures>& futures,
                   const std::filesystem::path& path,
                   const std::optional<ScenarioLabel>& label = std::nullopt);
std::string dump_scenario(const Scenario& scenario);

// ---------------------------------------------------------------------------
// Synthetic scenario generator

enum class SceneTemplate { straight_follow, unprotected_left, merge, crossing };

std::string_view to_string(SceneTemplate t);
/// Throws ValidationError listing the valid template names.
SceneTemplate parse_template(std::string_view text);

struct GeneratorConfig {
    SceneTemplate templ = SceneTemplate::crossing;
    double sigma = 0.2;          // Gaussian jitter scale (m for positions, m/s for speeds)
    int t_hist = 10;             // observed steps T_h
    int t_future = 30;           // future steps T_f
    double dt = 0.1;
    int window_offset_max = 0;   // observation window start drawn uniformly in [0, max]
    int background_agents = 0;   // extra parked agents far from the conflict
    std::optional<std::string> force_outcome;  // "yield" | "pass"
};

Scenario synth_scene(const GeneratorConfig& config, std::uint64_t seed);

}  // namespace cogdrive
