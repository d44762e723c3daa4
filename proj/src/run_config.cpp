#include "cogdrive/run_config.hpp"

#include "json_util.hpp"

namespace cogdrive {

namespace {

using detail::Json;

void check_generator(const GeneratorConfig& c) {
    if (!(c.sigma >= 0.0)) throw ValidationError("generator.sigma must be >= 0");
    if (c.t_hist < 2) throw ValidationError("generator.t_hist must be >= 2");
    if (c.t_future < 1) throw ValidationError("generator.t_future must be >= 1");
    if (!(c.dt > 0.0)) throw ValidationError("generator.dt must be > 0");
    if (c.window_offset_max < 0) throw ValidationError("generator.window_offset_max must be >= 0");
    if (c.background_agents < 0) throw ValidationError("generator.background_agents must be >= 0");
    if (c.force_outcome && *c.force_outcome != "yield" && *c.force_outcome != "pass")
        throw ValidationError("generator.force_outcome must be 'yield' or 'pass'");
}

int integer_at(const Json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ValidationError(where + ": expected an integer");
    return v.get<int>();
}

std::string metrics_to_json(const MetricsOptions& m) {
    Json j;
    j["miss_threshold"] = m.miss_threshold;
    j["max_modes"] = m.max_modes ? Json(*m.max_modes) : Json(nullptr);
    return j.dump();
}

MetricsOptions metrics_from_json(const Json& j) {
    if (!j.is_object()) throw ValidationError("metrics: expected an object");
    MetricsOptions m;
    for (const auto& [key, v] : j.items()) {
        if (key == "miss_threshold") m.miss_threshold = detail::number_at(v, "metrics.miss_threshold");
        else if (key == "max_modes") {
            if (v.is_null()) m.max_modes.reset();
            else m.max_modes = integer_at(v, "metrics.max_modes");
        } else {
            throw ValidationError("metrics: unknown key '" + key + "'");
        }
    }
    if (!(m.miss_threshold > 0.0)) throw ValidationError("metrics.miss_threshold must be > 0");
    if (m.max_modes && *m.max_modes < 1) throw ValidationError("metrics.max_modes must be >= 1");
    return m;
}

// Section of `base` with `patch` merged over it (RFC 7386, so nested objects
// such as the planner geometry merge too). The section parser sees every key
// afterwards, which turns a misspelt key into an error.
Json patched(const std::string& base_json, const Json& patch, const std::string& where) {
    if (!patch.is_object()) throw ValidationError(where + ": expected an object");
    Json j = Json::parse(base_json);
    j.merge_patch(patch);
    return j;
}

}  // namespace

std::string generator_config_to_json(const GeneratorConfig& c) {
    Json j;
    j["template"] = std::string(to_string(c.templ));
    j["sigma"] = c.sigma;
    j["t_hist"] = c.t_hist;
    j["t_future"] = c.t_future;
    j["dt"] = c.dt;
    j["window_offset_max"] = c.window_offset_max;
    j["background_agents"] = c.background_agents;
    j["force_outcome"] = c.force_outcome ? Json(*c.force_outcome) : Json(nullptr);
    return j.dump();
}

GeneratorConfig generator_config_from_json(std::string_view text) {
    Json j = detail::parse_json(text, "generator config");
    if (!j.is_object()) throw ValidationError("generator config: expected an object");
    GeneratorConfig c;
    for (const auto& [key, v] : j.items()) {
        const std::string where = "generator." + key;
        if (key == "template") {
            if (!v.is_string()) throw ValidationError(where + ": expected a string");
            c.templ = parse_template(v.get<std::string>());
        } else if (key == "sigma") c.sigma = detail::number_at(v, where);
        else if (key == "t_hist") c.t_hist = integer_at(v, where);
        else if (key == "t_future") c.t_future = integer_at(v, where);
        else if (key == "dt") c.dt = detail::number_at(v, where);
        else if (key == "window_offset_max") c.window_offset_max = integer_at(v, where);
        else if (key == "background_agents") c.background_agents = integer_at(v, where);
        else if (key == "force_outcome") {
            if (v.is_null()) c.force_outcome.reset();
            else if (v.is_string()) c.force_outcome = v.get<std::string>();
            else throw ValidationError(where + ": expected a string or null");
        } else {
            throw ValidationError("generator: unknown key '" + key + "'");
        }
    }
    check_generator(c);
    return c;
}

void RunConfig::validate() const {
    check_generator(generator);
    net.validate();
    train.validate();
    planner.validate();
    sim.validate();
    if (!(metrics.miss_threshold > 0.0)) throw ValidationError("metrics.miss_threshold must be > 0");
    if (threads < 1) throw ValidationError("threads must be >= 1");
}

std::string run_config_to_json(const RunConfig& c) {
    Json j;
    j["format"] = std::string(kConfigFormat);
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["strict"] = c.strict;
    j["generator"] = Json::parse(generator_config_to_json(c.generator));
    j["net"] = Json::parse(net_config_to_json(c.net));
    j["train"] = Json::parse(train_config_to_json(c.train));
    j["planner"] = Json::parse(planner_config_to_json(c.planner));
    j["sim"] = Json::parse(sim_config_to_json(c.sim));
    j["metrics"] = Json::parse(metrics_to_json(c.metrics));
    return j.dump(1) + "\n";
}

RunConfig merge_run_config(const RunConfig& base, std::string_view text) {
    Json doc = detail::parse_json(text, "config");
    detail::check_format(doc, kConfigFormat);
    RunConfig c = base;
    for (const auto& [key, v] : doc.items()) {
        if (key == "format") continue;
        if (key == "seed") {
            if (!v.is_number_unsigned()) throw ValidationError("config.seed: expected a non-negative integer");
            c.seed = v.get<std::uint64_t>();
        } else if (key == "threads") {
            c.threads = integer_at(v, "config.threads");
        } else if (key == "strict") {
            if (!v.is_boolean()) throw ValidationError("config.strict: expected a boolean");
            c.strict = v.get<bool>();
        } else if (key == "generator") {
            c.generator = generator_config_from_json(patched(generator_config_to_json(c.generator), v, key).dump());
        } else if (key == "net") {
            c.net = net_config_from_json(patched(net_config_to_json(c.net), v, key).dump());
        } else if (key == "train") {
            c.train = train_config_from_json(patched(train_config_to_json(c.train), v, key).dump());
        } else if (key == "planner") {
            c.planner = planner_config_from_json(patched(planner_config_to_json(c.planner), v, key).dump());
        } else if (key == "sim") {
            c.sim = sim_config_from_json(patched(sim_config_to_json(c.sim), v, key).dump());
        } else if (key == "metrics") {
            c.metrics = metrics_from_json(patched(metrics_to_json(c.metrics), v, key));
        } else {
            throw ValidationError("config: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

}  // namespace cogdrive
