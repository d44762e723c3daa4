#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cogdrive/modality.hpp"
#include "cogdrive/prednet.hpp"

namespace cogdrive {

struct TrainConfig {
    double alpha1 = 0.2;        // classification weight
    double alpha2 = 0.01;       // modal-loss weight
    double eps_margin = 0.2;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 5.0;     // global-norm clip; 0 disables
    bool cosine_decay = true;
    int epochs = 50;
    int batch_size = 16;
    std::uint64_t seed = 0;
    bool nll = false;           // Gaussian NLL on the winner, trains the sigma heads
    double nll_weight = 1.0;
    // After an epoch, a mode that won fewer than this fraction of the training
    // samples is re-seeded by splitting the most frequent winner; 0 disables.
    double revive_below = 0.02;
    ModalityConfig modality;    // theta_hat and tau of the modal loss

    void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
/// Unknown keys are rejected.
TrainConfig train_config_from_json(std::string_view text);

struct LossBreakdown {
    double total = 0.0;
    double reg_pos = 0.0;
    double reg_yaw = 0.0;
    double cls = 0.0;
    double mode = 0.0;
    double nll = 0.0;
    std::size_t winner = 0;  // zero-based mode index
};

/// Ground truth of the jointly predicted agents, each in its own frame.
struct JointTargets {
    Tensor pos;  // [J, T, 2]
    Tensor yaw;  // [J, T, 2] unit (sin, cos)
    std::vector<double> soft_mode;  // per neighbour, from the ground-truth futures
};

JointTargets make_targets(const NetOutput& out, const Scene& scene, const GroundTruthFutures& gt,
                          const ModalityConfig& modality);

/// Mode with the smallest summed final-step displacement over the joint agents; ties pick the lowest index.
std::size_t wta_select(const Tensor& mu, const Tensor& target_pos);

/// Sum over k != winner of max(0, eps + p_k - p_winner).
Tensor loss_cls(const Tensor& probs, std::size_t winner, double eps_margin);

/// Mean squared coordinate error and (1 - mean yaw cosine similarity) / 2 of one mode.
std::pair<Tensor, Tensor> loss_reg(const Tensor& mu, const Tensor& yaw, std::size_t mode,
                                   const JointTargets& targets);

/// Mean over neighbours of (soft mode of the predicted pair - soft mode of the ground truth)^2.
Tensor loss_mode(const NetOutput& out, std::size_t mode, const JointTargets& targets,
                 const ModalityConfig& modality);

/// Soft mode of the predicted ego/neighbour pair of one mode, differentiable in `out.mu`.
Tensor predicted_soft_mode(const NetOutput& out, std::size_t mode, std::size_t neighbor,
                           const ModalityConfig& modality);

struct Objective {
    Tensor total;
    LossBreakdown values;
};

Objective objective(const NetOutput& out, const Scene& scene, const GroundTruthFutures& gt,
                    const TrainConfig& config);

/// Scenes with ground-truth futures.
struct Sample {
    Scene scene;
    GroundTruthFutures futures;
};

std::vector<Sample> samples_from(const std::vector<Scenario>& scenarios);

struct EpochRecord {
    int epoch = 0;
    std::string split;  // "train" or "val"
    LossBreakdown mean;
    double min_ade = 0.0;  // ego best-of-K ADE
    double lr = 0.0;
};

std::string to_jsonl(const EpochRecord& record);

struct TrainResult {
    PredNet best;
    std::vector<EpochRecord> curve;
    int best_epoch = 0;
    double best_val_min_ade = 0.0;
};

/// AdamW with optional cosine decay, single-threaded and deterministic for a
/// given seed. Selects the checkpoint with the lowest validation ego minADE
/// (the last epoch when `val` is empty). A non-finite loss aborts with the batch id.
TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val,
                  const NetConfig& net_config, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_record = {});

/// Mean ego minADE of a network over samples.
double mean_min_ade(const PredNet& net, const std::vector<Sample>& samples);

/// Fraction of (scene, neighbour) pairs whose mode label under the WTA-winning
/// predicted mode equals the ground-truth label.
double winner_mode_accuracy(const PredNet& net, const std::vector<Sample>& samples,
                            const ModalityConfig& modality);

struct TrainManifest {
    std::vector<std::filesystem::path> train;  // files or directories of scenario files
    std::vector<std::filesystem::path> val;
    std::optional<NetConfig> net;            // absent: the caller's configuration applies
    std::optional<TrainConfig> train_config;
    std::filesystem::path checkpoint;
    std::filesystem::path loss_curve;
};

inline constexpr std::string_view kManifestFormat = "cogdrive-train/1";
/// Relative paths resolve against the manifest's directory.
TrainManifest load_manifest(const std::filesystem::path& path);
/// Scenario files named by the entries, directories expanded in sorted order.
std::vector<std::filesystem::path> expand_dataset(const std::vector<std::filesystem::path>& entries);

}  // namespace cogdrive
