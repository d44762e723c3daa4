#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cogdrive/planner.hpp"
#include "cogdrive/prednet.hpp"
#include "cogdrive/scene.hpp"

namespace cogdrive {

struct SimConfig {
    int replan_period = 5;             // steps executed from each tree
    int horizon = 30;                  // planning horizon T
    int branch_time = 10;              // T_b
    double collision_tolerance = 1e-6; // overlap (m) beyond which disc pairs collide
    int max_steps = 80;
    double goal_distance = 30.0;       // progress along the initial heading that completes the episode
    std::uint64_t seed = 0;
    bool planning = true;              // false: the ego holds zero controls (locked path)

    void validate() const;
    friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

std::string sim_config_to_json(const SimConfig& config);
/// Unknown keys are rejected.
SimConfig sim_config_from_json(std::string_view text);

/// Scene window -> prediction. Must be deterministic.
using Predictor = std::function<PredictionSet(const Scene&)>;
Predictor network_predictor(const PredNet& net);

enum class SimOutcome { completed, collision, timeout, infeasible };
std::string_view to_string(SimOutcome outcome);
SimOutcome parse_sim_outcome(std::string_view text);

struct SimStep {
    int step = 0;       // the state below is the one reached after executing `control`
    double t = 0.0;
    EgoState ego;
    Control control;
    int tree_id = -1;   // index of the tree the control came from
    bool replanned = false;
    std::vector<double> probs;
    double min_separation = 0.0;  // min over agents and disc pairs of distance - (r_i + r_j)
    PlanStatus status = PlanStatus::optimal;
    std::string note;   // planner diagnosis when the new tree was not accepted
    double wall_ms = 0.0;  // predict + plan time when replanned; excluded from the log bytes
};

struct SimLog {
    std::string scenario;
    std::uint64_t seed = 0;
    EgoState start;
    std::vector<SimStep> steps;
    SimOutcome outcome = SimOutcome::timeout;
    int outcome_step = -1;
    std::string message;
    int replans = 0;
    int fallbacks = 0;         // trees with status fallback (braking)
    int infeasible_trees = 0;  // trees with a safe root but a violated branch
    double min_separation = 0.0;

    std::vector<double> replan_wall_ms() const;
};

/// Closed loop: the scripted agents replay their futures while the ego predicts
/// from a window of its executed history and replans every replan_period steps.
/// Module errors end the episode with outcome infeasible and the step index.
SimLog run_episode(const Scenario& scenario, const Predictor& predictor, const PlannerConfig& planner,
                   const SimConfig& config, std::string name = {});

struct SimEpisode {
    std::string name;
    Scenario scenario;
};

struct SimReport {
    int episodes = 0;
    int completed = 0;
    int collisions = 0;
    int timeouts = 0;
    int infeasible = 0;
    int fallbacks = 0;          // fallback trees over all episodes
    int fallback_episodes = 0;  // episodes that used at least one fallback tree
    int infeasible_trees = 0;
    double collision_rate = 0.0;
    double completion_rate = 0.0;
    double mean_min_separation = 0.0;
    double replan_ms_mean = 0.0;
    double replan_ms_median = 0.0;
    double replan_ms_p95 = 0.0;
    std::vector<std::pair<std::string, SimOutcome>> outcomes;  // sorted by episode name
};

/// Aggregates logs; independent of their order.
SimReport summarize(const std::vector<SimLog>& logs);
/// Runs every episode (on `threads` workers) and returns the logs sorted by name.
/// Every scenario is validated first, so bad input throws before any episode runs.
std::vector<SimLog> batch_eval(const std::vector<SimEpisode>& episodes, const Predictor& predictor,
                               const PlannerConfig& planner, const SimConfig& config, int threads = 1);

inline constexpr std::string_view kSimLogFormat = "cogdrive-simlog/1";
inline constexpr std::string_view kSimReportFormat = "cogdrive-simreport/1";

/// Line-delimited: a header, one record per step, an outcome record. Wall times
/// are written only when `with_timing` is set, so the default bytes are a pure
/// function of the inputs.
std::string dump_simlog(const SimLog& log, bool with_timing = false);
std::vector<SimLog> parse_simlogs(std::string_view text);
/// Replan wall times only with `with_timing`, as for the log.
std::string dump_simreport(const SimReport& report, bool with_timing = false);

/// Ego and agent disc pair separation at one instant (brute force).
double min_disc_separation(const EgoState& ego, const std::vector<Pose2>& others, const VehicleGeometry& geometry);

}  // namespace cogdrive
