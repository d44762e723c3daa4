#include "cogdrive/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "json_util.hpp"

namespace cogdrive {

namespace {

struct AgentErrors {
    double ade = 0.0;
    double fde = 0.0;
};

AgentErrors errors_of(const AgentPrediction& p, const AgentFuture& gt) {
    if (p.mu.size() != gt.states.size())
        throw ValidationError("horizon mismatch for agent '" + gt.id + "': predicted " +
                              std::to_string(p.mu.size()) + ", ground truth " + std::to_string(gt.states.size()));
    AgentErrors e;
    for (std::size_t t = 0; t < p.mu.size(); ++t) e.ade += (p.mu[t] - gt.states[t].pose.position()).norm();
    e.ade /= static_cast<double>(p.mu.size());
    e.fde = (p.mu.back() - gt.states.back().pose.position()).norm();
    return e;
}

/// Per-mode errors of one agent.
std::vector<AgentErrors> per_mode(const PredictionSet& pred, const GroundTruthFutures& gt, std::string_view agent) {
    if (pred.modes.empty()) throw ValidationError("prediction has no modes");
    const AgentFuture& future = gt.agent(agent);
    std::vector<AgentErrors> out;
    for (const auto& m : pred.modes) out.push_back(errors_of(m.agent(agent), future));
    return out;
}

std::size_t argmin_fde(const std::vector<AgentErrors>& e) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < e.size(); ++k)
        if (e[k].fde < e[best].fde) best = k;
    return best;
}

std::vector<AgentErrors> joint_per_mode(const PredictionSet& pred, const GroundTruthFutures& gt,
                                        const std::vector<std::string>& agents) {
    if (agents.empty()) throw ValidationError("joint metrics need at least one agent");
    std::vector<AgentErrors> out(pred.modes.size());
    for (const auto& id : agents) {
        auto e = per_mode(pred, gt, id);
        for (std::size_t k = 0; k < e.size(); ++k) {
            out[k].ade += e[k].ade;
            out[k].fde += e[k].fde;
        }
    }
    for (auto& e : out) {
        e.ade /= static_cast<double>(agents.size());
        e.fde /= static_cast<double>(agents.size());
    }
    return out;
}

double min_of(const std::vector<AgentErrors>& e, double AgentErrors::*field) {
    double best = e.front().*field;
    for (const auto& x : e) best = std::min(best, x.*field);
    return best;
}

}  // namespace

double order_free_mean(std::vector<double> values) {
    if (values.empty()) return 0.0;
    // Summing in sorted order makes the result independent of input order.
    std::sort(values.begin(), values.end());
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc / static_cast<double>(values.size());
}

double min_ade(const PredictionSet& pred, const GroundTruthFutures& gt, std::string_view agent) {
    return min_of(per_mode(pred, gt, agent), &AgentErrors::ade);
}

double min_fde(const PredictionSet& pred, const GroundTruthFutures& gt, std::string_view agent) {
    return min_of(per_mode(pred, gt, agent), &AgentErrors::fde);
}

double b_min_fde(const PredictionSet& pred, const GroundTruthFutures& gt, std::string_view agent) {
    auto e = per_mode(pred, gt, agent);
    std::size_t k = argmin_fde(e);
    double miss_p = 1.0 - pred.modes[k].prob;
    return e[k].fde + miss_p * miss_p;
}

double min_joint_ade(const PredictionSet& pred, const GroundTruthFutures& gt,
                     const std::vector<std::string>& agents) {
    return min_of(joint_per_mode(pred, gt, agents), &AgentErrors::ade);
}

double min_joint_fde(const PredictionSet& pred, const GroundTruthFutures& gt,
                     const std::vector<std::string>& agents) {
    return min_of(joint_per_mode(pred, gt, agents), &AgentErrors::fde);
}

double miss_rate(const std::vector<PredictionSet>& preds, const std::vector<GroundTruthFutures>& gts,
                 double threshold) {
    if (preds.empty()) throw ValidationError("miss rate needs at least one scene");
    if (preds.size() != gts.size()) throw ValidationError("prediction and ground-truth counts differ");
    std::size_t misses = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (min_fde(preds[i], gts[i], preds[i].ego_id) > threshold) ++misses;
    return static_cast<double>(misses) / static_cast<double>(preds.size());
}

PredictionSet truncate_modes(const PredictionSet& pred, int max_modes) {
    if (max_modes < 1) throw ValidationError("max_modes must be >= 1");
    if (static_cast<std::size_t>(max_modes) >= pred.modes.size()) return pred;
    std::vector<std::size_t> order(pred.modes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pred.modes[a].prob > pred.modes[b].prob; });
    order.resize(static_cast<std::size_t>(max_modes));
    std::sort(order.begin(), order.end());
    PredictionSet out = pred;
    out.modes.clear();
    for (std::size_t k : order) out.modes.push_back(pred.modes[k]);
    return out;
}

MetricsReport evaluate(const std::vector<PredictionSet>& preds, const std::vector<GroundTruthFutures>& gts,
                       const std::vector<std::string>& names, const MetricsOptions& options) {
    if (preds.empty()) throw ValidationError("evaluation needs at least one scene");
    if (preds.size() != gts.size() || preds.size() != names.size())
        throw ValidationError("prediction, ground-truth and name counts differ");
    MetricsReport r;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        PredictionSet p = options.max_modes ? truncate_modes(preds[i], *options.max_modes) : preds[i];
        SceneMetrics s;
        s.name = names[i];
        s.K = static_cast<int>(p.modes.size());
        s.min_ade = min_ade(p, gts[i], p.ego_id);
        s.min_fde = min_fde(p, gts[i], p.ego_id);
        s.b_min_fde = b_min_fde(p, gts[i], p.ego_id);
        s.miss = s.min_fde > options.miss_threshold;
        std::vector<std::string> joint = p.joint_ids.empty() ? std::vector<std::string>{p.ego_id} : p.joint_ids;
        s.min_joint_ade = min_joint_ade(p, gts[i], joint);
        s.min_joint_fde = min_joint_fde(p, gts[i], joint);
        r.scenes.push_back(std::move(s));
    }
    auto mean = [&](auto field) {
        std::vector<double> v;
        for (const auto& s : r.scenes) v.push_back(field(s));
        return order_free_mean(v);
    };
    r.min_ade = mean([](const SceneMetrics& s) { return s.min_ade; });
    r.min_fde = mean([](const SceneMetrics& s) { return s.min_fde; });
    r.b_min_fde = mean([](const SceneMetrics& s) { return s.b_min_fde; });
    r.miss_rate = mean([](const SceneMetrics& s) { return s.miss ? 1.0 : 0.0; });
    r.min_joint_ade = mean([](const SceneMetrics& s) { return s.min_joint_ade; });
    r.min_joint_fde = mean([](const SceneMetrics& s) { return s.min_joint_fde; });
    return r;
}

std::string dump_metrics(const MetricsReport& report, const MetricsOptions& options) {
    using detail::Json;
    Json doc;
    doc["format"] = kMetricsFormat;
    doc["miss_threshold"] = options.miss_threshold;
    doc["max_modes"] = options.max_modes ? Json(*options.max_modes) : Json(nullptr);
    doc["aggregate"] = {{"scenes", report.scenes.size()},
                        {"minADE", report.min_ade},
                        {"minFDE", report.min_fde},
                        {"b_minFDE", report.b_min_fde},
                        {"MR", report.miss_rate},
                        {"minJointADE", report.min_joint_ade},
                        {"minJointFDE", report.min_joint_fde}};
    Json scenes = Json::array();
    for (const auto& s : report.scenes)
        scenes.push_back({{"name", s.name},
                          {"K", s.K},
                          {"minADE", s.min_ade},
                          {"minFDE", s.min_fde},
                          {"b_minFDE", s.b_min_fde},
                          {"miss", s.miss},
                          {"minJointADE", s.min_joint_ade},
                          {"minJointFDE", s.min_joint_fde}});
    doc["scenes"] = std::move(scenes);
    return doc.dump(1);
}

void save_metrics(const MetricsReport& report, const MetricsOptions& options, const std::filesystem::path& path) {
    detail::write_file_atomic(path, dump_metrics(report, options));
}

}  // namespace cogdrive
