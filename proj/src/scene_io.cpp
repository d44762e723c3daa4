#include "cogdrive/scene.hpp"
#include "json_util.hpp"

namespace cogdrive {

using detail::Json;

namespace {

std::vector<double> row_at(const Json& row, std::size_t width, const std::string& where) {
    if (!row.is_array() || row.size() != width)
        throw ValidationError(where + ": expected an array of " + std::to_string(width) + " numbers");
    std::vector<double> out(width);
    for (std::size_t i = 0; i < width; ++i) out[i] = detail::number_at(row[i], where);
    return out;
}

const Json& array_at(const Json& obj, const char* key, const std::string& where) {
    const Json& v = detail::require(obj, key, where);
    if (!v.is_array()) throw ValidationError(where + "." + key + ": expected an array");
    return v;
}

}  // namespace

Scenario parse_scenario(std::string_view text) {
    Json doc = detail::parse_json(text, "scenario");
    detail::check_format(doc, kSceneFormat);

    Scenario out;
    Scene& scene = out.scene;
    scene.dt = detail::number_at(detail::require(doc, "dt", "scenario"), "dt");
    scene.ego_id = detail::string_at(doc, "ego_id", "scenario");

    const Json& agents = array_at(doc, "agents", "scenario");
    for (std::size_t i = 0; i < agents.size(); ++i) {
        std::string where = "agents[" + std::to_string(i) + "]";
        AgentHistory a;
        a.id = detail::string_at(agents[i], "id", where);
        a.kind = parse_agent_kind(detail::string_at(agents[i], "kind", where));
        const Json& states = array_at(agents[i], "states", where);
        for (std::size_t k = 0; k < states.size(); ++k) {
            auto r = row_at(states[k], 5, where + ".states[" + std::to_string(k) + "]");
            a.states.push_back({r[0], {r[1], r[2], r[3]}, r[4]});
        }
        scene.agents.push_back(std::move(a));
    }

    if (doc.contains("map")) {
        const Json& map = array_at(doc, "map", "scenario");
        for (std::size_t i = 0; i < map.size(); ++i) {
            std::string where = "map[" + std::to_string(i) + "]";
            MapPolyline p;
            p.id = detail::string_at(map[i], "id", where);
            p.semantics = parse_semantics(detail::string_at(map[i], "semantics", where));
            const Json& pts = array_at(map[i], "points", where);
            for (std::size_t k = 0; k < pts.size(); ++k) {
                auto r = row_at(pts[k], 2, where + ".points[" + std::to_string(k) + "]");
                p.points.push_back({r[0], r[1]});
            }
            scene.map.push_back(std::move(p));
        }
    }

    if (doc.contains("futures")) {
        GroundTruthFutures futures;
        const Json& fut = array_at(doc, "futures", "scenario");
        for (std::size_t i = 0; i < fut.size(); ++i) {
            std::string where = "futures[" + std::to_string(i) + "]";
            AgentFuture f;
            f.id = detail::string_at(fut[i], "id", where);
            const Json& states = array_at(fut[i], "states", where);
            for (std::size_t k = 0; k < states.size(); ++k) {
                auto r = row_at(states[k], 4, where + ".states[" + std::to_string(k) + "]");
                f.states.push_back({r[0], {r[1], r[2], r[3]}});
            }
            futures.agents.push_back(std::move(f));
        }
        out.futures = std::move(futures);
    }

    if (doc.contains("label")) {
        const Json& l = doc["label"];
        ScenarioLabel label;
        label.template_name = detail::string_at(l, "template", "label");
        label.outcome = detail::string_at(l, "outcome", "label");
        label.conflict_id = detail::string_at(l, "conflict_id", "label");
        out.label = std::move(label);
    }

    if (out.futures) validate(scene, *out.futures);
    else validate(scene);
    return out;
}

Scenario load_scenario(const std::filesystem::path& path) {
    return parse_scenario(detail::read_file(path));
}

std::string dump_scenario(const Scenario& scenario) {
    const Scene& scene = scenario.scene;
    Json doc;
    doc["format"] = kSceneFormat;
    doc["dt"] = scene.dt;
    doc["ego_id"] = scene.ego_id;
    Json agents = Json::array();
    for (const auto& a : scene.agents) {
        Json states = Json::array();
        for (const auto& s : a.states)
            states.push_back({s.t, s.pose.x, s.pose.y, s.pose.heading, s.speed});
        agents.push_back({{"id", a.id}, {"kind", to_string(a.kind)}, {"states", states}});
    }
    doc["agents"] = agents;
    Json map = Json::array();
    for (const auto& p : scene.map) {
        Json pts = Json::array();
        for (const auto& q : p.points) pts.push_back({q.x, q.y});
        map.push_back({{"id", p.id}, {"semantics", to_string(p.semantics)}, {"points", pts}});
    }
    doc["map"] = map;
    if (scenario.futures) {
        Json fut = Json::array();
        for (const auto& f : scenario.futures->agents) {
            Json states = Json::array();
            for (const auto& s : f.states) states.push_back({s.t, s.pose.x, s.pose.y, s.pose.heading});
            fut.push_back({{"id", f.id}, {"states", states}});
        }
        doc["futures"] = fut;
    }
    if (scenario.label) {
        doc["label"] = {{"template", scenario.label->template_name},
                        {"outcome", scenario.label->outcome},
                        {"conflict_id", scenario.label->conflict_id}};
    }
    return doc.dump(1) + "\n";
}

void save_scenario(const Scene& scene, const std::optional<GroundTruthFutures>& futures,
                   const std::filesystem::path& path, const std::optional<ScenarioLabel>& label) {
    if (futures) validate(scene, *futures);
    else validate(scene);
    detail::write_file_atomic(path, dump_scenario(Scenario{scene, futures, label}));
}

}  // namespace cogdrive
