#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cogdrive/prednet.hpp"

namespace cogdrive {

struct MetricsOptions {
    double miss_threshold = 2.0;     // metres; a miss is strictly greater
    std::optional<int> max_modes;    // keep only the most probable modes when set
};

/// Best-of-K average displacement error of one agent. Horizons must match.
double min_ade(const PredictionSet& pred, const GroundTruthFutures& gt, std::string_view agent);
double min_fde(const PredictionSet& pred, const GroundTruthFutures& gt, std::string_view agent);
/// FDE of the minFDE mode plus (1 - p)^2 of that mode's probability.
double b_min_fde(const PredictionSet& pred, const GroundTruthFutures& gt, std::string_view agent);
/// Best-of-K error averaged over all listed agents under one shared mode index.
double min_joint_ade(const PredictionSet& pred, const GroundTruthFutures& gt,
                     const std::vector<std::string>& agents);
double min_joint_fde(const PredictionSet& pred, const GroundTruthFutures& gt,
                     const std::vector<std::string>& agents);
/// Fraction of scenes whose ego minFDE exceeds the threshold.
double miss_rate(const std::vector<PredictionSet>& preds, const std::vector<GroundTruthFutures>& gts,
                 double threshold = 2.0);

/// Mean that is bit-identical under any permutation of `values`.
double order_free_mean(std::vector<double> values);

/// The `max_modes` most probable modes (ties keep the lower index), probabilities unchanged.
PredictionSet truncate_modes(const PredictionSet& pred, int max_modes);

struct SceneMetrics {
    std::string name;
    int K = 0;
    double min_ade = 0.0;
    double min_fde = 0.0;
    double b_min_fde = 0.0;
    bool miss = false;
    double min_joint_ade = 0.0;
    double min_joint_fde = 0.0;
};

struct MetricsReport {
    std::vector<SceneMetrics> scenes;
    double min_ade = 0.0;
    double min_fde = 0.0;
    double b_min_fde = 0.0;
    double miss_rate = 0.0;
    double min_joint_ade = 0.0;
    double min_joint_fde = 0.0;
};

/// Ego metrics and joint metrics over each prediction's joint set, unweighted means over scenes.
MetricsReport evaluate(const std::vector<PredictionSet>& preds, const std::vector<GroundTruthFutures>& gts,
                       const std::vector<std::string>& names, const MetricsOptions& options = {});

inline constexpr std::string_view kMetricsFormat = "cogdrive-metrics/1";
std::string dump_metrics(const MetricsReport& report, const MetricsOptions& options);
void save_metrics(const MetricsReport& report, const MetricsOptions& options, const std::filesystem::path& path);

}  // namespace cogdrive
