#include "cogdrive/simloop.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <thread>

#include "json_util.hpp"

namespace cogdrive {

void SimConfig::validate() const {
    if (replan_period < 1) throw ValidationError("sim: replan_period must be >= 1");
    if (branch_time <= replan_period) throw ValidationError("sim: branch_time must exceed replan_period");
    if (horizon <= branch_time) throw ValidationError("sim: horizon must exceed branch_time");
    if (!(collision_tolerance >= 0.0)) throw ValidationError("sim: collision_tolerance must be >= 0");
    if (max_steps < 1) throw ValidationError("sim: max_steps must be >= 1");
    if (!(goal_distance > 0.0)) throw ValidationError("sim: goal_distance must be > 0");
}

std::string sim_config_to_json(const SimConfig& c) {
    detail::Json j;
    j["replan_period"] = c.replan_period;
    j["horizon"] = c.horizon;
    j["branch_time"] = c.branch_time;
    j["collision_tolerance"] = c.collision_tolerance;
    j["max_steps"] = c.max_steps;
    j["goal_distance"] = c.goal_distance;
    j["seed"] = c.seed;
    j["planning"] = c.planning;
    return j.dump();
}

SimConfig sim_config_from_json(std::string_view text) {
    detail::Json j = detail::parse_json(text, "sim config");
    if (!j.is_object()) throw ValidationError("sim config: expected an object");
    SimConfig c;
    for (const auto& [key, v] : j.items()) {
        const std::string where = "sim." + key;
        auto integer = [&](int& dst) {
            if (!v.is_number_integer()) throw ValidationError(where + ": expected an integer");
            dst = v.get<int>();
        };
        if (key == "replan_period") integer(c.replan_period);
        else if (key == "horizon") integer(c.horizon);
        else if (key == "branch_time") integer(c.branch_time);
        else if (key == "max_steps") integer(c.max_steps);
        else if (key == "collision_tolerance") c.collision_tolerance = detail::number_at(v, where);
        else if (key == "goal_distance") c.goal_distance = detail::number_at(v, where);
        else if (key == "seed") {
            if (!v.is_number_unsigned()) throw ValidationError(where + ": expected a non-negative integer");
            c.seed = v.get<std::uint64_t>();
        } else if (key == "planning") {
            if (!v.is_boolean()) throw ValidationError(where + ": expected a boolean");
            c.planning = v.get<bool>();
        } else {
            throw ValidationError("sim: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

Predictor network_predictor(const PredNet& net) {
    return [&net](const Scene& scene) { return predict(scene, net); };
}

std::string_view to_string(SimOutcome outcome) {
    switch (outcome) {
        case SimOutcome::completed: return "completed";
        case SimOutcome::collision: return "collision";
        case SimOutcome::timeout: return "timeout";
        case SimOutcome::infeasible: return "infeasible";
    }
    return "infeasible";
}

SimOutcome parse_sim_outcome(std::string_view text) {
    for (auto o : {SimOutcome::completed, SimOutcome::collision, SimOutcome::timeout, SimOutcome::infeasible})
        if (to_string(o) == text) return o;
    throw ValidationError("unknown sim outcome '" + std::string(text) + "'");
}

std::vector<double> SimLog::replan_wall_ms() const {
    std::vector<double> out;
    for (const auto& s : steps)
        if (s.replanned) out.push_back(s.wall_ms);
    return out;
}

double min_disc_separation(const EgoState& ego, const std::vector<Pose2>& others, const VehicleGeometry& geometry) {
    const auto radii = geometry.radii();
    const auto e = geometry.discs(ego.position(), ego.psi);
    double best = std::numeric_limits<double>::infinity();
    for (const Pose2& p : others) {
        const auto o = geometry.discs({p.x, p.y}, p.heading);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) best = std::min(best, (o[j] - e[i]).norm() - (radii[i] + radii[j]));
    }
    return best;
}

namespace {

PlannerConfig sim_planner_config(const PlannerConfig& planner, const SimConfig& config) {
    config.validate();
    PlannerConfig pc = planner;
    pc.horizon = config.horizon;
    pc.branch_time = config.branch_time;
    pc.replan_period = config.replan_period;
    pc.validate();
    return pc;
}

void check_episode(const Scenario& scenario, const SimConfig& config, const std::string& name) {
    const std::string where = name.empty() ? "sim" : "sim: " + name;
    try {
        validate(scenario.scene);
        if (!scenario.futures) throw ValidationError("scenario has no scripted futures");
        validate(scenario.scene, *scenario.futures);
    } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
    }
    if (scenario.futures->horizon() < static_cast<std::size_t>(config.max_steps))
        throw ValidationError(where + ": scripted futures cover " + std::to_string(scenario.futures->horizon()) +
                              " steps, need " + std::to_string(config.max_steps));
}

}  // namespace

SimLog run_episode(const Scenario& scenario, const Predictor& predictor, const PlannerConfig& planner,
                   const SimConfig& config, std::string name) {
    const PlannerConfig pc = sim_planner_config(planner, config);
    check_episode(scenario, config, name);
    const Scene& scene = scenario.scene;
    const GroundTruthFutures& futures = *scenario.futures;

    const std::size_t T_h = scene.history_length();
    const double dt = scene.dt;

    // Full timelines: observed history followed by the script (others) or by the
    // executed states (ego).
    std::vector<std::vector<AgentState>> timeline;
    for (const auto& a : scene.agents) {
        std::vector<AgentState> tl = a.states;
        if (a.id != scene.ego_id) {
            const AgentFuture& f = futures.agent(a.id);
            for (const auto& fs : f.states) {
                Vec2 prev{tl.back().pose.x, tl.back().pose.y};
                double speed = (Vec2{fs.pose.x, fs.pose.y} - prev).norm() / dt;
                tl.push_back({fs.t, fs.pose, speed});
            }
        }
        timeline.push_back(std::move(tl));
    }
    const std::size_t ego_idx = scene.agent_index(scene.ego_id);

    SimLog log;
    log.scenario = std::move(name);
    log.seed = config.seed;
    EgoState ego = ego_state_of(scene.ego());
    log.start = ego;
    const Vec2 p0 = ego.position();
    const Vec2 h0{std::cos(ego.psi), std::sin(ego.psi)};
    log.min_separation = std::numeric_limits<double>::infinity();

    TrajectoryTree tree;
    bool have_tree = false;
    int tree_id = -1;
    log.outcome = SimOutcome::timeout;
    for (int k = 0; k < config.max_steps; ++k) {
        SimStep rec;
        rec.step = k + 1;
        if (config.planning && k % config.replan_period == 0) {
            Scene window;
            window.map = scene.map;
            window.ego_id = scene.ego_id;
            window.dt = dt;
            const std::size_t end = T_h + static_cast<std::size_t>(k);  // one past the current state
            for (std::size_t a = 0; a < scene.agents.size(); ++a) {
                AgentHistory h{scene.agents[a].id, scene.agents[a].kind, {}};
                h.states.assign(timeline[a].begin() + static_cast<std::ptrdiff_t>(end - T_h),
                                timeline[a].begin() + static_cast<std::ptrdiff_t>(end));
                window.agents.push_back(std::move(h));
            }
            const auto t_start = std::chrono::steady_clock::now();
            try {
                PredictionSet pred = predictor(window);
                tree = have_tree ? replan_step(tree, config.replan_period, pred, ego, scene.map, pc)
                                 : plan_tree(pred, ego, scene.map, pc);
            } catch (const Error& e) {
                log.outcome = SimOutcome::infeasible;
                log.outcome_step = k;
                log.message = "step " + std::to_string(k) + ": " + e.what();
                break;
            }
            rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
            have_tree = true;
            ++tree_id;
            ++log.replans;
            if (tree.status == PlanStatus::fallback) ++log.fallbacks;
            if (tree.status == PlanStatus::infeasible) ++log.infeasible_trees;
            if (!tree.accepted())
                rec.note = tree.report.violated.empty() ? "no feasible start" : tree.report.violated;
            rec.replanned = true;
        }
        Control u;
        if (config.planning) {
            // Only the root's first replan_period controls are ever executed.
            u = tree.root_controls.at(static_cast<std::size_t>(k % config.replan_period));
            rec.tree_id = tree_id;
            rec.status = tree.status;
            for (const auto& b : tree.branches) rec.probs.push_back(b.prob);
        }
        ego = dynamics_step(ego, u, dt, pc.geometry.wheelbase);
        const std::size_t now = T_h + static_cast<std::size_t>(k);  // index of the new state
        timeline[ego_idx].push_back({timeline[ego_idx].back().t + dt, {ego.x, ego.y, ego.psi}, ego.v});

        std::vector<Pose2> others;
        for (std::size_t a = 0; a < timeline.size(); ++a)
            if (a != ego_idx) others.push_back(timeline[a][now].pose);
        rec.t = timeline[ego_idx].back().t;
        rec.ego = ego;
        rec.control = u;
        rec.min_separation = others.empty() ? std::numeric_limits<double>::infinity()
                                            : min_disc_separation(ego, others, pc.geometry);
        log.min_separation = std::min(log.min_separation, rec.min_separation);
        log.steps.push_back(rec);

        if (rec.min_separation < -config.collision_tolerance) {
            log.outcome = SimOutcome::collision;
            log.outcome_step = rec.step;
            break;
        }
        if ((ego.position() - p0).dot(h0) >= config.goal_distance) {
            log.outcome = SimOutcome::completed;
            log.outcome_step = rec.step;
            break;
        }
    }
    if (log.outcome == SimOutcome::timeout) log.outcome_step = config.max_steps;
    if (!std::isfinite(log.min_separation)) log.min_separation = 0.0;
    return log;
}

namespace {

double sorted_sum(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

}  // namespace

SimReport summarize(const std::vector<SimLog>& logs) {
    SimReport r;
    std::vector<double> seps, times;
    for (const auto& log : logs) {
        ++r.episodes;
        switch (log.outcome) {
            case SimOutcome::completed: ++r.completed; break;
            case SimOutcome::collision: ++r.collisions; break;
            case SimOutcome::timeout: ++r.timeouts; break;
            case SimOutcome::infeasible: ++r.infeasible; break;
        }
        r.fallbacks += log.fallbacks;
        r.infeasible_trees += log.infeasible_trees;
        if (log.fallbacks > 0) ++r.fallback_episodes;
        if (!log.steps.empty()) seps.push_back(log.min_separation);
        for (double t : log.replan_wall_ms()) times.push_back(t);
        r.outcomes.emplace_back(log.scenario, log.outcome);
    }
    std::sort(r.outcomes.begin(), r.outcomes.end());
    if (r.episodes > 0) {
        r.collision_rate = static_cast<double>(r.collisions) / r.episodes;
        r.completion_rate = static_cast<double>(r.completed) / r.episodes;
    }
    if (!seps.empty()) r.mean_min_separation = sorted_sum(seps) / static_cast<double>(seps.size());
    if (!times.empty()) {
        std::sort(times.begin(), times.end());
        r.replan_ms_mean = sorted_sum(times) / static_cast<double>(times.size());
        const std::size_t n = times.size();
        r.replan_ms_median = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
        r.replan_ms_p95 = times[std::min(n - 1, static_cast<std::size_t>(std::ceil(0.95 * n)) - 1)];
    }
    return r;
}

std::vector<SimLog> batch_eval(const std::vector<SimEpisode>& episodes, const Predictor& predictor,
                               const PlannerConfig& planner, const SimConfig& config, int threads) {
    if (episodes.empty()) throw ValidationError("sim: empty episode set");
    // Inputs are checked before any episode runs; errors inside an episode end
    // that episode only (outcome infeasible).
    sim_planner_config(planner, config);
    for (const auto& e : episodes) check_episode(e.scenario, config, e.name);
    std::vector<SimLog> logs(episodes.size());
    auto run_one = [&](std::size_t i) {
        logs[i] = run_episode(episodes[i].scenario, predictor, planner, config, episodes[i].name);
    };
    const std::size_t workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1) {
        for (std::size_t i = 0; i < episodes.size(); ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < episodes.size(); i = next++) run_one(i);
            });
        for (auto& t : pool) t.join();
    }
    std::stable_sort(logs.begin(), logs.end(), [](const SimLog& a, const SimLog& b) { return a.scenario < b.scenario; });
    return logs;
}

std::string dump_simlog(const SimLog& log, bool with_timing) {
    std::string out;
    detail::Json h;
    h["format"] = kSimLogFormat;
    h["record"] = "header";
    h["scenario"] = log.scenario;
    h["seed"] = log.seed;
    h["start"] = {log.start.x, log.start.y, log.start.v, log.start.psi};
    out += h.dump() + "\n";
    for (const auto& s : log.steps) {
        detail::Json j;
        j["record"] = "step";
        j["step"] = s.step;
        j["t"] = s.t;
        j["ego"] = {s.ego.x, s.ego.y, s.ego.v, s.ego.psi};
        j["control"] = {s.control.a, s.control.delta};
        j["tree"] = s.tree_id;
        j["replanned"] = s.replanned;
        j["probs"] = s.probs;
        if (std::isfinite(s.min_separation)) j["min_separation"] = s.min_separation;
        else j["min_separation"] = nullptr;
        j["status"] = to_string(s.status);
        if (!s.note.empty()) j["note"] = s.note;
        if (with_timing && s.replanned) j["wall_ms"] = s.wall_ms;
        out += j.dump() + "\n";
    }
    detail::Json o;
    o["record"] = "outcome";
    o["outcome"] = to_string(log.outcome);
    o["step"] = log.outcome_step;
    o["message"] = log.message;
    o["replans"] = log.replans;
    o["fallbacks"] = log.fallbacks;
    o["infeasible_trees"] = log.infeasible_trees;
    o["min_separation"] = log.min_separation;
    out += o.dump() + "\n";
    return out;
}

std::vector<SimLog> parse_simlogs(std::string_view text) {
    std::vector<SimLog> logs;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "simlog line " + std::to_string(line_no);
        detail::Json j = detail::parse_json(line, where);
        const std::string kind = detail::string_at(j, "record", where);
        if (kind == "header") {
            detail::check_format(j, kSimLogFormat);
            SimLog l;
            l.scenario = detail::string_at(j, "scenario", where);
            l.seed = detail::require(j, "seed", where).get<std::uint64_t>();
            const auto& s = detail::require(j, "start", where);
            if (!s.is_array() || s.size() != 4) throw ValidationError(where + ": start is [x, y, v, psi]");
            l.start = {detail::number_at(s[0], where), detail::number_at(s[1], where), detail::number_at(s[2], where),
                       detail::number_at(s[3], where)};
            logs.push_back(std::move(l));
            continue;
        }
        if (logs.empty()) throw ValidationError(where + ": record before header");
        SimLog& l = logs.back();
        if (kind == "step") {
            SimStep s;
            s.step = detail::require(j, "step", where).get<int>();
            s.t = detail::number_at(detail::require(j, "t", where), where);
            const auto& e = detail::require(j, "ego", where);
            const auto& u = detail::require(j, "control", where);
            if (!e.is_array() || e.size() != 4 || !u.is_array() || u.size() != 2)
                throw ValidationError(where + ": malformed ego or control");
            s.ego = {detail::number_at(e[0], where), detail::number_at(e[1], where), detail::number_at(e[2], where),
                     detail::number_at(e[3], where)};
            s.control = {detail::number_at(u[0], where), detail::number_at(u[1], where)};
            s.tree_id = detail::require(j, "tree", where).get<int>();
            s.replanned = detail::require(j, "replanned", where).get<bool>();
            for (const auto& p : detail::require(j, "probs", where)) s.probs.push_back(detail::number_at(p, where));
            const auto& ms = detail::require(j, "min_separation", where);
            s.min_separation = ms.is_null() ? std::numeric_limits<double>::infinity() : detail::number_at(ms, where);
            s.status = parse_plan_status(detail::string_at(j, "status", where));
            if (j.contains("note")) s.note = detail::string_at(j, "note", where);
            if (j.contains("wall_ms")) s.wall_ms = detail::number_at(j["wall_ms"], where);
            l.steps.push_back(std::move(s));
        } else if (kind == "outcome") {
            l.outcome = parse_sim_outcome(detail::string_at(j, "outcome", where));
            l.outcome_step = detail::require(j, "step", where).get<int>();
            l.message = detail::string_at(j, "message", where);
            l.replans = detail::require(j, "replans", where).get<int>();
            l.fallbacks = detail::require(j, "fallbacks", where).get<int>();
            l.infeasible_trees = detail::require(j, "infeasible_trees", where).get<int>();
            l.min_separation = detail::number_at(detail::require(j, "min_separation", where), where);
        } else {
            throw ValidationError(where + ": unknown record '" + kind + "'");
        }
    }
    return logs;
}

std::string dump_simreport(const SimReport& r, bool with_timing) {
    detail::Json j;
    j["format"] = kSimReportFormat;
    j["episodes"] = r.episodes;
    j["completed"] = r.completed;
    j["collisions"] = r.collisions;
    j["timeouts"] = r.timeouts;
    j["infeasible"] = r.infeasible;
    j["fallbacks"] = r.fallbacks;
    j["fallback_episodes"] = r.fallback_episodes;
    j["infeasible_trees"] = r.infeasible_trees;
    j["collision_rate"] = r.collision_rate;
    j["completion_rate"] = r.completion_rate;
    j["mean_min_separation"] = r.mean_min_separation;
    if (with_timing)
        j["replan_ms"] = {{"mean", r.replan_ms_mean}, {"median", r.replan_ms_median}, {"p95", r.replan_ms_p95}};
    detail::Json outcomes = detail::Json::array();
    for (const auto& [name, o] : r.outcomes) outcomes.push_back({{"scenario", name}, {"outcome", to_string(o)}});
    j["outcomes"] = outcomes;
    return j.dump(1);
}

}  // namespace cogdrive
