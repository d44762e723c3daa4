#include "cogdrive/modality.hpp"

#include <algorithm>
#include <cmath>

namespace cogdrive {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_pair(std::span<const Vec2> a, std::span<const Vec2> b) {
    if (a.size() != b.size()) throw ValidationError("trajectory lengths differ");
    if (a.size() < 2) throw ValidationError("trajectories need at least 2 positions");
}

}  // namespace

void ModalityConfig::validate() const {
    if (!(theta_hat > 0.0 && theta_hat < kPi)) throw ValidationError("theta_hat must be in (0, pi)");
    if (!(tau > 0.0)) throw ValidationError("tau must be positive");
    if (n_neighbor < 1) throw ValidationError("n_neighbor must be >= 1");
}

double f_norm(double angle) { return wrap_angle(angle); }

double delta_theta(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j) {
    check_pair(traj_i, traj_j);
    auto bearing = [&](std::size_t t) {
        Vec2 r = traj_i[t] - traj_j[t];
        if (r.x == 0.0 && r.y == 0.0)
            throw DegenerateGeometryError("coincident positions at step " + std::to_string(t));
        return std::atan2(r.y, r.x);
    };
    double sum = 0.0;
    double prev = bearing(0);
    for (std::size_t t = 1; t < traj_i.size(); ++t) {
        double cur = bearing(t);
        sum += f_norm(cur - prev);
        prev = cur;
    }
    return sum;
}

ModeLabel classify_delta(double delta, const ModalityConfig& config) {
    if (delta < -config.theta_hat) return ModeLabel::negative;
    if (delta > config.theta_hat) return ModeLabel::positive;
    return ModeLabel::neutral;
}

ModeLabel classify(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j,
                   const ModalityConfig& config) {
    return classify_delta(delta_theta(traj_i, traj_j), config);
}

double soft_mode_delta(double delta, const ModalityConfig& config) {
    return logistic((delta - config.theta_hat) / config.tau) -
           logistic((-delta - config.theta_hat) / config.tau);
}

double soft_mode(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j,
                 const ModalityConfig& config) {
    return soft_mode_delta(delta_theta(traj_i, traj_j), config);
}

SoftModeGradient soft_mode_gradient(std::span<const Vec2> traj_i, std::span<const Vec2> traj_j,
                                    const ModalityConfig& config) {
    double delta = delta_theta(traj_i, traj_j);
    SoftModeGradient g;
    g.value = soft_mode_delta(delta, config);
    double a = logistic((delta - config.theta_hat) / config.tau);
    double b = logistic((-delta - config.theta_hat) / config.tau);
    double dm_ddelta = (a * (1.0 - a) + b * (1.0 - b)) / config.tau;

    const std::size_t n = traj_i.size();
    g.d_traj_i.assign(n, {});
    g.d_traj_j.assign(n, {});
    for (std::size_t t = 0; t < n; ++t) {
        // Bearing t enters term t-1 with +1 and term t with -1.
        double coeff = (t > 0 ? 1.0 : 0.0) - (t + 1 < n ? 1.0 : 0.0);
        if (coeff == 0.0) continue;
        Vec2 r = traj_i[t] - traj_j[t];
        double r2 = r.dot(r);
        Vec2 db_dr{-r.y / r2, r.x / r2};
        g.d_traj_i[t] = db_dr * (coeff * dm_ddelta);
        g.d_traj_j[t] = db_dr * (-coeff * dm_ddelta);
    }
    return g;
}

std::vector<std::string> nearest_neighbors(const Scene& scene, int n_neighbor) {
    const Vec2 ego = scene.ego().current().pose.position();
    std::vector<std::pair<double, std::string>> cand;
    for (const auto& a : scene.agents) {
        if (a.id == scene.ego_id) continue;
        cand.emplace_back((a.current().pose.position() - ego).norm(), a.id);
    }
    std::sort(cand.begin(), cand.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < cand.size() && static_cast<int>(i) < n_neighbor; ++i)
        out.push_back(cand[i].second);
    return out;
}

std::vector<Vec2> trajectory_with_current(const Scene& scene, const AgentFuture& future) {
    std::vector<Vec2> out;
    out.reserve(future.states.size() + 1);
    out.push_back(scene.agent(future.id).current().pose.position());
    for (const auto& s : future.states) out.push_back(s.pose.position());
    return out;
}

ModalityVector modality_vector(const Scene& scene, const GroundTruthFutures& futures,
                               const ModalityConfig& config) {
    config.validate();
    ModalityVector out;
    auto ego_traj = trajectory_with_current(scene, futures.agent(scene.ego_id));
    for (const auto& id : nearest_neighbors(scene, config.n_neighbor)) {
        auto traj = trajectory_with_current(scene, futures.agent(id));
        double delta = delta_theta(ego_traj, traj);
        out.neighbor_ids.push_back(id);
        out.labels.push_back(classify_delta(delta, config));
        out.soft.push_back(soft_mode_delta(delta, config));
    }
    return out;
}

}  // namespace cogdrive
