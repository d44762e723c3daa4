#pragma once

#include <span>
#include <string>
#include <vector>

#include "cogdrive/scene.hpp"

namespace cogdrive {

/// Interaction mode between two trajectories: -1, 0 or +1.
enum class ModeLabel : int { negative = -1, neutral = 0, positive = 1 };

inline int value_of(ModeLabel m) { return static_cast<int>(m); }

struct ModalityConfig {
    double theta_hat = kPi / 6.0;  // classification threshold (rad)
    double tau = 0.05;             // surrogate temperature
    int n_neighbor = 1;

    void validate() const;
};

struct ModalityVector {
    std::vector<std::string> neighbor_ids;  // proximity order
    std::vector<ModeLabel> labels;
    std::vector<double> soft;
};

/// Wraps into [-pi, pi]; an exact +-pi input maps to +pi.
double f_norm(double angle);

/// Cumulative change of the bearing of traj_i seen from traj_j.
/// Throws DegenerateGeometryError if the two positions coincide at any step.
double delta_theta(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j);

ModeLabel classify_delta(double delta, const ModalityConfig& config);
ModeLabel classify(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j,
                   const ModalityConfig& config);

/// Difference-of-logistics surrogate of the mode label, odd in delta.
double soft_mode_delta(double delta, const ModalityConfig& config);
double soft_mode(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j,
                 const ModalityConfig& config);

/// Analytic gradient of soft_mode w.r.t. every coordinate of both trajectories.
struct SoftModeGradient {
    double value = 0.0;
    std::vector<Vec2> d_traj_i;
    std::vector<Vec2> d_traj_j;
};
SoftModeGradient soft_mode_gradient(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j,
                                    const ModalityConfig& config);

/// Neighbours of the ego ordered by distance at the last observed step, ties by id.
std::vector<std::string> nearest_neighbors(const Scene& scene, int n_neighbor);

/// Ego modality vector. Each trajectory is the current position followed by the
/// agent's future positions from `futures`.
ModalityVector modality_vector(const Scene& scene, const GroundTruthFutures& futures,
                               const ModalityConfig& config);

/// Current position followed by the future positions of one agent.
std::vector<Vec2> trajectory_with_current(const Scene& scene, const AgentFuture& future);

}  // namespace cogdrive
