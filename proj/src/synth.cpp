#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "cogdrive/scene.hpp"

namespace cogdrive {

namespace {

/// Densely sampled reference path with arc-length lookup.
class Path {
public:
    Path(Vec2 start, double heading) { push(start, heading); }

    Path& straight(double length) {
        int n = std::max(1, static_cast<int>(std::ceil(length / kStep)));
        Vec2 p0 = pts_.back();
        double h = hdg_.back();
        for (int i = 1; i <= n; ++i) {
            double s = length * i / n;
            push({p0.x + s * std::cos(h), p0.y + s * std::sin(h)}, h);
        }
        return *this;
    }

    /// Positive angle turns left.
    Path& arc(double radius, double angle) {
        double len = radius * std::abs(angle);
        int n = std::max(1, static_cast<int>(std::ceil(len / kStep)));
        Vec2 p0 = pts_.back();
        double h0 = hdg_.back();
        double side = angle > 0 ? 1.0 : -1.0;
        Vec2 center{p0.x - side * radius * std::sin(h0), p0.y + side * radius * std::cos(h0)};
        for (int i = 1; i <= n; ++i) {
            double h = h0 + angle * i / n;
            push({center.x + side * radius * std::sin(h), center.y - side * radius * std::cos(h)}, h);
        }
        return *this;
    }

    void translate(Vec2 offset) {
        for (auto& p : pts_) p = p + offset;
    }

    double length() const { return arc_.back(); }
    Vec2 end() const { return pts_.back(); }

    /// Pose at arc length s with a constant lateral offset (left positive).
    /// Positions beyond either end extrapolate along the end tangent.
    Pose2 at(double s, double lateral) const {
        Vec2 p;
        double h;
        if (s <= 0.0) {
            h = hdg_.front();
            p = pts_.front() + Vec2{std::cos(h), std::sin(h)} * s;
        } else if (s >= arc_.back()) {
            h = hdg_.back();
            p = pts_.back() + Vec2{std::cos(h), std::sin(h)} * (s - arc_.back());
        } else {
            auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
            std::size_t i = static_cast<std::size_t>(it - arc_.begin());
            double w = (s - arc_[i - 1]) / (arc_[i] - arc_[i - 1]);
            p = pts_[i - 1] * (1.0 - w) + pts_[i] * w;
            h = hdg_[i - 1] * (1.0 - w) + hdg_[i] * w;
        }
        p = p + Vec2{-std::sin(h), std::cos(h)} * lateral;
        return {p.x, p.y, wrap_angle(h)};
    }

    std::vector<Vec2> polyline(double spacing) const {
        std::vector<Vec2> out;
        for (double s = 0.0; s < length(); s += spacing) {
            Pose2 q = at(s, 0.0);
            out.push_back({q.x, q.y});
        }
        Pose2 q = at(length(), 0.0);
        out.push_back({q.x, q.y});
        return out;
    }

private:
    static constexpr double kStep = 0.05;

    void push(Vec2 p, double h) {
        if (!pts_.empty()) arc_.push_back(arc_.back() + (p - pts_.back()).norm());
        else arc_.push_back(0.0);
        pts_.push_back(p);
        hdg_.push_back(h);
    }

    std::vector<Vec2> pts_;
    std::vector<double> hdg_;
    std::vector<double> arc_;
};

/// Arc-length and speed as functions of script time tau (tau = 0 at the decision instant).
struct Motion {
    double s0 = 0.0;  // arc length at tau = 0
    double v0 = 0.0;
    double decel = 0.0;     // 0 means constant speed
    double v_floor = 0.0;   // braking stops at this speed

    double speed(double tau) const {
        if (tau <= 0.0 || decel <= 0.0) return v0;
        return std::max(v_floor, v0 - decel * tau);
    }

    double distance(double tau) const {
        if (tau <= 0.0 || decel <= 0.0) return s0 + v0 * tau;
        double t_end = (v0 - v_floor) / decel;
        if (tau <= t_end) return s0 + v0 * tau - 0.5 * decel * tau * tau;
        return s0 + v0 * t_end - 0.5 * decel * t_end * t_end + v_floor * (tau - t_end);
    }

    static Motion constant(double s0, double v0) { return {s0, v0, 0.0, 0.0}; }

    static Motion stop_at(double s0, double v0, double s_stop) {
        double gap = std::max(s_stop - s0, 0.5);
        return {s0, v0, v0 * v0 / (2.0 * gap), 0.0};
    }
};

struct ScriptedAgent {
    std::string id;
    const Path* path = nullptr;
    Motion motion;
    double lateral = 0.0;
    bool parked = false;
    Pose2 parked_pose;
};

MapPolyline line(std::string id, PolylineSemantics sem, std::vector<Vec2> pts) {
    return MapPolyline{std::move(id), std::move(pts), sem};
}

struct Builder {
    const GeneratorConfig& cfg;
    std::mt19937_64 rng;
    std::normal_distribution<double> unit{0.0, 1.0};

    double jitter() { return cfg.sigma * unit(rng); }
};

}  // namespace

std::string_view to_string(SceneTemplate t) {
    switch (t) {
        case SceneTemplate::straight_follow: return "straight_follow";
        case SceneTemplate::unprotected_left: return "unprotected_left";
        case SceneTemplate::merge: return "merge";
        case SceneTemplate::crossing: return "crossing";
    }
    return "crossing";
}

SceneTemplate parse_template(std::string_view text) {
    for (auto t : {SceneTemplate::straight_follow, SceneTemplate::unprotected_left,
                   SceneTemplate::merge, SceneTemplate::crossing})
        if (to_string(t) == text) return t;
    throw ValidationError("unknown template '" + std::string(text) +
                          "' (valid: straight_follow, unprotected_left, merge, crossing)");
}

Scenario synth_scene(const GeneratorConfig& cfg, std::uint64_t seed) {
    if (cfg.sigma < 0.0) throw ValidationError("generator sigma must be >= 0");
    if (cfg.t_hist < 2 || cfg.t_future < 1) throw ValidationError("generator needs t_hist >= 2, t_future >= 1");

    Builder b{cfg, std::mt19937_64(seed)};
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::string outcome = coin(b.rng) < 0.5 ? "yield" : "pass";
    if (cfg.force_outcome) outcome = *cfg.force_outcome;
    if (outcome != "yield" && outcome != "pass") throw ValidationError("outcome must be yield or pass");
    const bool ego_yields = outcome == "yield";

    int offset = 0;
    if (cfg.window_offset_max > 0)
        offset = std::uniform_int_distribution<int>(0, cfg.window_offset_max)(b.rng);

    Scenario out;
    Scene& scene = out.scene;
    scene.dt = cfg.dt;
    scene.ego_id = "ego";
    std::vector<Path> paths;
    paths.reserve(4);
    std::vector<ScriptedAgent> agents;
    ScenarioLabel label{std::string(to_string(cfg.templ)), outcome, ""};

    switch (cfg.templ) {
        case SceneTemplate::straight_follow: {
            paths.emplace_back(Vec2{-80.0, 0.0}, 0.0).straight(200.0);
            scene.map = {line("lane", PolylineSemantics::lane_center, {{-80, 0}, {120, 0}}),
                         line("edge_l", PolylineSemantics::road_edge, {{-80, 2}, {120, 2}}),
                         line("edge_r", PolylineSemantics::road_edge, {{-80, -2}, {120, -2}})};
            double v = 8.0 + b.jitter();
            agents.push_back({"ego", &paths[0], Motion::constant(70.0 + b.jitter(), v), b.jitter(), false, {}});
            agents.push_back({"lead", &paths[0], Motion::constant(90.0 + b.jitter(), v + std::abs(b.jitter())),
                              b.jitter(), false, {}});
            label.outcome = "yield";
            label.conflict_id = "lead";
            break;
        }
        case SceneTemplate::crossing: {
            paths.emplace_back(Vec2{-60.0, 0.0}, 0.0).straight(140.0);
            paths.emplace_back(Vec2{0.0, -60.0}, kPi / 2).straight(140.0);
            scene.map = {line("lane_ew", PolylineSemantics::lane_center, {{-60, 0}, {60, 0}}),
                         line("lane_sn", PolylineSemantics::lane_center, {{0, -60}, {0, 60}}),
                         line("edge_sw", PolylineSemantics::road_edge, {{-60, -2}, {-2, -2}, {-2, -60}}),
                         line("edge_nw", PolylineSemantics::road_edge, {{-60, 2}, {-2, 2}, {-2, 60}}),
                         line("edge_ne", PolylineSemantics::road_edge, {{60, 2}, {2, 2}, {2, 60}}),
                         line("edge_se", PolylineSemantics::road_edge, {{60, -2}, {2, -2}, {2, -60}})};
            double ve = 7.0 + b.jitter();
            double vo = 6.0 + b.jitter();
            double se = 60.0 - 18.0 + b.jitter();  // ego 18 m before the conflict centre
            double so = 60.0 - 14.0 + b.jitter();
            Motion ego = ego_yields ? Motion::stop_at(se, ve, 60.0 - 5.5) : Motion::constant(se, ve);
            Motion other = ego_yields ? Motion::constant(so, vo) : Motion::stop_at(so, vo, 60.0 - 5.5);
            agents.push_back({"ego", &paths[0], ego, b.jitter(), false, {}});
            agents.push_back({"a1", &paths[1], other, b.jitter(), false, {}});
            label.conflict_id = "a1";
            break;
        }
        case SceneTemplate::unprotected_left: {
            // Ego heads north in the right lane, turns left across the southbound lane.
            paths.emplace_back(Vec2{1.75, -40.0}, kPi / 2).straight(38.25).arc(3.5, kPi / 2).straight(60.0);
            paths.emplace_back(Vec2{-1.75, 60.0}, -kPi / 2).straight(140.0);
            Path ego_path = paths[0];
            scene.map = {line("lane_nb", PolylineSemantics::lane_center, {{1.75, -60}, {1.75, 60}}),
                         line("lane_sb", PolylineSemantics::lane_center, {{-1.75, 60}, {-1.75, -60}}),
                         line("lane_turn", PolylineSemantics::lane_center, ego_path.polyline(2.0)),
                         line("edge_sw", PolylineSemantics::road_edge, {{-60, -3.5}, {-3.5, -3.5}, {-3.5, -60}}),
                         line("edge_nw", PolylineSemantics::road_edge, {{-60, 3.5}, {-3.5, 3.5}, {-3.5, 60}}),
                         line("edge_ne", PolylineSemantics::road_edge, {{60, 3.5}, {3.5, 3.5}, {3.5, 60}}),
                         line("edge_se", PolylineSemantics::road_edge, {{60, -3.5}, {3.5, -3.5}, {3.5, -60}})};
            double turn_start = 38.25;
            double ve = 5.5 + b.jitter();
            double vo = 7.0 + b.jitter();
            double se = turn_start - 7.0 + b.jitter();
            double so = 60.0 - 18.0 + b.jitter();  // oncoming at y = 18
            Motion ego = ego_yields ? Motion::stop_at(se, ve, turn_start - 1.0) : Motion::constant(se, ve);
            Motion other = ego_yields ? Motion::constant(so, vo) : Motion::stop_at(so, vo, 60.0 - 8.0);
            agents.push_back({"ego", &paths[0], ego, b.jitter(), false, {}});
            agents.push_back({"a1", &paths[1], other, b.jitter(), false, {}});
            label.conflict_id = "a1";
            break;
        }
        case SceneTemplate::merge: {
            // Ramp joins the main lane from below; the arc ends exactly at the merge point (0, 0).
            const double ramp_heading = 0.309;
            Path ramp(Vec2{0.0, 0.0}, ramp_heading);
            ramp.straight(60.0).arc(40.0, -ramp_heading).straight(80.0);
            double arc_end = 60.0 + 40.0 * ramp_heading;
            Pose2 merge_pt = ramp.at(arc_end, 0.0);
            ramp.translate({-merge_pt.x, -merge_pt.y});
            paths.emplace_back(Vec2{-90.0, 0.0}, 0.0).straight(200.0);
            paths.push_back(ramp);
            scene.map = {line("lane_main", PolylineSemantics::lane_center, {{-90, 0}, {110, 0}}),
                         line("lane_ramp", PolylineSemantics::lane_center, paths[1].polyline(5.0)),
                         line("edge_top", PolylineSemantics::road_edge, {{-90, 2}, {110, 2}}),
                         line("edge_bottom_w", PolylineSemantics::road_edge, {{-90, -2}, {-30, -2}}),
                         line("edge_bottom_e", PolylineSemantics::road_edge, {{5, -2}, {110, -2}})};
            double ve = 9.0 + b.jitter();
            double vm = 8.0 + b.jitter();
            double se = 90.0 - 30.0 + b.jitter();
            double sm = arc_end - 34.0 + b.jitter();
            Motion ego = ego_yields ? Motion::stop_at(se, ve, 90.0 - 12.0) : Motion::constant(se, ve);
            Motion other = ego_yields ? Motion::constant(sm, vm) : Motion::stop_at(sm, vm, arc_end - 24.0);
            agents.push_back({"ego", &paths[0], ego, b.jitter(), false, {}});
            agents.push_back({"a1", &paths[1], other, b.jitter(), false, {}});
            label.conflict_id = "a1";
            break;
        }
    }

    for (int i = 0; i < cfg.background_agents; ++i) {
        ScriptedAgent bg;
        bg.id = "bg" + std::to_string(i + 1);
        bg.parked = true;
        double ang = 0.8 + 1.3 * i;
        bg.parked_pose = {45.0 * std::cos(ang) + b.jitter(), 45.0 * std::sin(ang) + b.jitter(),
                          wrap_angle(ang + kPi / 2)};
        agents.push_back(bg);
    }

    const int total = offset + cfg.t_hist + cfg.t_future;
    auto tau_of = [&](int k) { return static_cast<double>(k - (cfg.t_hist - 1)) * cfg.dt; };
    auto time_of = [&](int k) { return static_cast<double>(k - offset) * cfg.dt; };

    GroundTruthFutures futures;
    for (const auto& a : agents) {
        AgentHistory hist{a.id, AgentKind::vehicle, {}};
        AgentFuture fut{a.id, {}};
        for (int k = offset; k < total; ++k) {
            Pose2 pose;
            double speed = 0.0;
            if (a.parked) {
                pose = a.parked_pose;
            } else {
                double tau = tau_of(k);
                pose = a.path->at(a.motion.distance(tau), a.lateral);
                speed = a.motion.speed(tau);
            }
            if (k < offset + cfg.t_hist) hist.states.push_back({time_of(k), pose, speed});
            else fut.states.push_back({time_of(k), pose});
        }
        scene.agents.push_back(std::move(hist));
        futures.agents.push_back(std::move(fut));
    }

    validate(scene, futures);
    out.futures = std::move(futures);
    out.label = std::move(label);
    return out;
}

}  // namespace cogdrive
