#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cogdrive/frames.hpp"
#include "cogdrive/scene.hpp"
#include "cogdrive/tensor.hpp"

namespace cogdrive {

struct NetConfig {
    int D = 32;           // latent width
    int L_e = 2;          // encoder layers
    int L_d = 2;          // decoder layers
    int heads = 2;
    int K = 2;            // modes
    int n_neighbor = 1;   // neighbours predicted jointly with the ego
    int T_f = 30;         // future steps
    double init_sigma = 0.5;   // std-dev produced by a zero log-std head
    double query_init = 0.02;  // std-dev of the learnable anchor queries
    double output_scale = 1.0; // metres per unit of the position head
    bool residual_cv = true;   // positions are offsets from constant-velocity extrapolation

    void validate() const;
    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

std::string net_config_to_json(const NetConfig& config);
/// Accepts a JSON object; unknown keys are rejected.
NetConfig net_config_from_json(std::string_view text);

/// Outputs of the embedding stage.
struct Embedded {
    Tensor F_A;   // [M, D]
    Tensor F_R;   // [N_r, D]
    Tensor r_pe;  // [N, N, D], N = M + N_r
};

struct EncodedScene {
    Tensor F_AR;  // [N, D]
    Tensor r_pe;  // [N, N, D]
    std::size_t num_agents = 0;  // rows [0, num_agents) are agents, the rest polylines
};

/// Differentiable decoder output. All trajectory tensors are expressed in each
/// jointly predicted agent's own frame.
struct NetOutput {
    std::vector<std::string> joint_ids;  // ego first, then neighbours by proximity
    std::vector<LocalFrame> joint_frames;
    Tensor mu;         // [K, J, T_f, 2]
    Tensor log_sigma;  // [K, J, T_f, 2]
    Tensor yaw;        // [K, J, T_f, 2] unit (sin, cos)
    Tensor logits;     // [K]
    Tensor probs;      // [K]
};

struct AgentPrediction {
    std::string id;
    bool network = true;  // false for constant-velocity extrapolation
    std::vector<Vec2> mu;     // global frame
    std::vector<Vec2> sigma;  // global-axis std-dev, > 0
    std::vector<double> yaw;  // global heading

    friend bool operator==(const AgentPrediction&, const AgentPrediction&) = default;
};

struct ModePrediction {
    double prob = 0.0;
    std::vector<AgentPrediction> agents;

    friend bool operator==(const ModePrediction&, const ModePrediction&) = default;
    const AgentPrediction& agent(std::string_view id) const;
};

struct PredictionSet {
    std::string ego_id;
    double t0 = 0.0;  // time of the last observed step
    double dt = 0.1;
    std::vector<std::string> joint_ids;
    std::vector<ModePrediction> modes;

    friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
    std::size_t horizon() const;
    std::vector<double> probs() const;
};

/// Checks K >= 1, simplex within 1e-9, sigma > 0, consistent agents and horizons.
void validate(const PredictionSet& pred);

inline constexpr std::string_view kPredFormat = "cogdrive-pred/1";
void save_prediction(const PredictionSet& pred, const std::filesystem::path& path);
std::string dump_prediction(const PredictionSet& pred);
PredictionSet load_prediction(const std::filesystem::path& path);
PredictionSet parse_prediction(std::string_view text);

class PredNet {
public:
    /// Random initialisation.
    PredNet(const NetConfig& config, std::uint64_t seed);
    /// From checkpoint parameters; names and shapes must match the config exactly.
    PredNet(const NetConfig& config, std::vector<std::pair<std::string, Tensor>> params);

    const NetConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    Embedded embed(const Scene& scene) const;
    EncodedScene encode(const Embedded& embedded) const { return encode(embedded, config_.L_e); }
    /// Runs the first `layers` encoder layers; 0 returns the inputs unchanged.
    EncodedScene encode(const Embedded& embedded, int layers) const;
    NetOutput decode(const EncodedScene& enc, const Scene& scene) const;
    NetOutput forward(const Scene& scene) const;

    /// Overwrites every mode-specific parameter of mode `to` (anchor query,
    /// query-generator outputs, trajectory head) with those of mode `from`.
    void copy_mode(std::size_t from, std::size_t to);

    void save(const std::filesystem::path& path) const;
    static PredNet load(const std::filesystem::path& path);

private:
    NetConfig config_;
    ParamStore params_;
};

/// Converts a decoder output to global-frame predictions and adds
/// constant-velocity extrapolations for agents outside the joint set.
PredictionSet to_prediction_set(const NetOutput& out, const Scene& scene);

/// embed, encode, decode and convert, without recording a graph.
PredictionSet predict(const Scene& scene, const PredNet& net);

/// Jointly predicted agents: ego followed by its n_neighbor nearest agents.
std::vector<std::string> joint_agent_ids(const Scene& scene, int n_neighbor);

/// Constant-velocity positions for steps 1..horizon in the agent's own frame.
std::vector<Vec2> constant_velocity_local(const AgentHistory& agent, double dt, int horizon);

}  // namespace cogdrive
