#include "cogdrive/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "cogdrive/metrics.hpp"
#include "json_util.hpp"

namespace cogdrive {

namespace {

using namespace ops;

Tensor mode_slice(const Tensor& t, std::size_t mode) {
    Shape s(t.shape().begin() + 1, t.shape().end());
    return reshape(slice(t, 0, mode, mode + 1), s);
}

}  // namespace

void TrainConfig::validate() const {
    if (alpha1 < 0.0 || alpha2 < 0.0 || eps_margin < 0.0) throw ValidationError("train: loss weights must be >= 0");
    if (lr < 0.0 || weight_decay < 0.0) throw ValidationError("train: lr and weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
        throw ValidationError("train: invalid optimizer moments");
    if (grad_clip < 0.0) throw ValidationError("train: grad_clip must be >= 0");
    if (epochs < 1 || batch_size < 1) throw ValidationError("train: epochs and batch_size must be >= 1");
    if (nll_weight < 0.0) throw ValidationError("train: nll_weight must be >= 0");
    if (!(revive_below >= 0.0 && revive_below < 1.0)) throw ValidationError("train: revive_below must be in [0, 1)");
    modality.validate();
}

std::string train_config_to_json(const TrainConfig& c) {
    detail::Json j;
    j["alpha1"] = c.alpha1;
    j["alpha2"] = c.alpha2;
    j["eps_margin"] = c.eps_margin;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    j["grad_clip"] = c.grad_clip;
    j["cosine_decay"] = c.cosine_decay;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["nll"] = c.nll;
    j["nll_weight"] = c.nll_weight;
    j["revive_below"] = c.revive_below;
    j["theta_hat"] = c.modality.theta_hat;
    j["tau"] = c.modality.tau;
    return j.dump();
}

TrainConfig train_config_from_json(std::string_view text) {
    detail::Json j = detail::parse_json(text, "train config");
    if (!j.is_object()) throw ValidationError("train config: expected an object");
    TrainConfig c;
    for (const auto& [key, v] : j.items()) {
        std::string where = "train." + key;
        auto number = [&](double& dst) { dst = detail::number_at(v, where); };
        auto integer = [&](int& dst) {
            if (!v.is_number_integer()) throw ValidationError(where + ": expected an integer");
            dst = v.get<int>();
        };
        auto boolean = [&](bool& dst) {
            if (!v.is_boolean()) throw ValidationError(where + ": expected a boolean");
            dst = v.get<bool>();
        };
        if (key == "alpha1") number(c.alpha1);
        else if (key == "alpha2") number(c.alpha2);
        else if (key == "eps_margin") number(c.eps_margin);
        else if (key == "lr") number(c.lr);
        else if (key == "weight_decay") number(c.weight_decay);
        else if (key == "beta1") number(c.beta1);
        else if (key == "beta2") number(c.beta2);
        else if (key == "adam_eps") number(c.adam_eps);
        else if (key == "grad_clip") number(c.grad_clip);
        else if (key == "cosine_decay") boolean(c.cosine_decay);
        else if (key == "epochs") integer(c.epochs);
        else if (key == "batch_size") integer(c.batch_size);
        else if (key == "seed") {
            if (!v.is_number_unsigned()) throw ValidationError(where + ": expected a non-negative integer");
            c.seed = v.get<std::uint64_t>();
        } else if (key == "nll") boolean(c.nll);
        else if (key == "nll_weight") number(c.nll_weight);
        else if (key == "revive_below") number(c.revive_below);
        else if (key == "theta_hat") number(c.modality.theta_hat);
        else if (key == "tau") number(c.modality.tau);
        else throw ValidationError("train: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Losses

JointTargets make_targets(const NetOutput& out, const Scene& scene, const GroundTruthFutures& gt,
                          const ModalityConfig& modality) {
    const std::size_t J = out.joint_ids.size();
    const std::size_t T = out.mu.dim(2);
    std::vector<double> pos, yaw;
    pos.reserve(J * T * 2);
    yaw.reserve(J * T * 2);
    for (std::size_t j = 0; j < J; ++j) {
        const AgentFuture& f = gt.agent(out.joint_ids[j]);
        if (f.states.size() != T)
            throw ValidationError("ground truth for '" + f.id + "' has " + std::to_string(f.states.size()) +
                                  " steps, network predicts " + std::to_string(T));
        for (const auto& s : f.states) {
            Pose2 p = to_local(out.joint_frames[j], s.pose);
            pos.insert(pos.end(), {p.x, p.y});
            yaw.insert(yaw.end(), {std::sin(p.heading), std::cos(p.heading)});
        }
    }
    JointTargets t;
    t.pos = Tensor::from({J, T, 2}, std::move(pos));
    t.yaw = Tensor::from({J, T, 2}, std::move(yaw));
    auto ego = trajectory_with_current(scene, gt.agent(out.joint_ids[0]));
    for (std::size_t j = 1; j < J; ++j)
        t.soft_mode.push_back(
            soft_mode_delta(delta_theta(ego, trajectory_with_current(scene, gt.agent(out.joint_ids[j]))), modality));
    return t;
}

std::size_t wta_select(const Tensor& mu, const Tensor& target_pos) {
    const std::size_t K = mu.dim(0), J = mu.dim(1), T = mu.dim(2);
    auto m = mu.data();
    auto g = target_pos.data();
    std::size_t best = 0;
    double best_err = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        double err = 0.0;
        for (std::size_t j = 0; j < J; ++j) {
            std::size_t pi = ((k * J + j) * T + T - 1) * 2;
            std::size_t gi = (j * T + T - 1) * 2;
            err += std::hypot(m[pi] - g[gi], m[pi + 1] - g[gi + 1]);
        }
        if (k == 0 || err < best_err) {
            best = k;
            best_err = err;
        }
    }
    return best;
}

Tensor loss_cls(const Tensor& probs, std::size_t winner, double eps_margin) {
    const std::size_t K = probs.numel();
    if (K == 1) return scale(sum(probs), 0.0);
    std::vector<std::size_t> others;
    for (std::size_t k = 0; k < K; ++k)
        if (k != winner) others.push_back(k);
    Tensor col = reshape(probs, {K, 1});
    Tensor p_star = reshape(slice(probs, 0, winner, winner + 1), {1});
    return sum(relu(add_scalar(sub(index_select(col, others), p_star), eps_margin)));
}

std::pair<Tensor, Tensor> loss_reg(const Tensor& mu, const Tensor& yaw, std::size_t mode,
                                   const JointTargets& targets) {
    Tensor d = sub(mode_slice(mu, mode), targets.pos);
    Tensor reg_pos = mean(mul(d, d));
    const double steps = static_cast<double>(targets.yaw.numel() / 2);
    Tensor cos_mean = scale(sum(mul(mode_slice(yaw, mode), targets.yaw)), 1.0 / steps);
    Tensor reg_yaw = add_scalar(scale(cos_mean, -0.5), 0.5);
    return {reg_pos, reg_yaw};
}

Tensor predicted_soft_mode(const NetOutput& out, std::size_t mode, std::size_t neighbor,
                           const ModalityConfig& modality) {
    const std::size_t T = out.mu.dim(2);
    Tensor mu_k = mode_slice(out.mu, mode);  // [J, T, 2]
    const LocalFrame& ego_frame = out.joint_frames[0];
    const LocalFrame& nb_frame = out.joint_frames[neighbor];

    // Both trajectories in the ego frame, current position first.
    Tensor ego = concat({Tensor::zeros({1, 2}), reshape(slice(mu_k, 0, 0, 1), {T, 2})}, 0);
    double phi = nb_frame.heading - ego_frame.heading;
    double c = std::cos(phi), s = std::sin(phi);
    Vec2 o = to_local(ego_frame, nb_frame.origin);
    Tensor rot = Tensor::from({2, 2}, {c, s, -s, c});
    Tensor nb_future = add(matmul(reshape(slice(mu_k, 0, neighbor, neighbor + 1), {T, 2}), rot),
                           Tensor::from({2}, {o.x, o.y}));
    Tensor nb = concat({Tensor::from({1, 2}, {o.x, o.y}), nb_future}, 0);

    Tensor r = sub(ego, nb);  // [T+1, 2]
    Tensor prev = slice(r, 0, 0, T), next = slice(r, 0, 1, T + 1);
    Tensor px = slice(prev, 1, 0, 1), py = slice(prev, 1, 1, 2);
    Tensor nx = slice(next, 1, 0, 1), ny = slice(next, 1, 1, 2);
    Tensor cross = sub(mul(px, ny), mul(py, nx));
    Tensor dot = add(mul(px, nx), mul(py, ny));
    Tensor delta = sum(ops::atan2(cross, dot));
    const double inv_tau = 1.0 / modality.tau;
    Tensor up = logistic(scale(add_scalar(delta, -modality.theta_hat), inv_tau));
    Tensor down = logistic(scale(add_scalar(scale(delta, -1.0), -modality.theta_hat), inv_tau));
    return sub(up, down);
}

Tensor loss_mode(const NetOutput& out, std::size_t mode, const JointTargets& targets,
                 const ModalityConfig& modality) {
    const std::size_t J = out.joint_ids.size();
    if (J < 2) return scale(sum(out.mu), 0.0);
    std::vector<Tensor> terms;
    for (std::size_t j = 1; j < J; ++j) {
        Tensor d = add_scalar(predicted_soft_mode(out, mode, j, modality), -targets.soft_mode[j - 1]);
        terms.push_back(reshape(mul(d, d), {1}));
    }
    return mean(concat(terms, 0));
}

Objective objective(const NetOutput& out, const Scene& scene, const GroundTruthFutures& gt,
                    const TrainConfig& config) {
    JointTargets targets = make_targets(out, scene, gt, config.modality);
    Objective o;
    o.values.winner = wta_select(out.mu, targets.pos);
    auto [reg_pos, reg_yaw] = loss_reg(out.mu, out.yaw, o.values.winner, targets);
    Tensor cls = loss_cls(out.probs, o.values.winner, config.eps_margin);
    Tensor mode = loss_mode(out, o.values.winner, targets, config.modality);
    Tensor total = add(add(reg_pos, reg_yaw), add(scale(cls, config.alpha1), scale(mode, config.alpha2)));
    if (config.nll) {
        Tensor ls = mode_slice(out.log_sigma, o.values.winner);
        Tensor d = sub(mode_slice(out.mu, o.values.winner), targets.pos);
        Tensor nll = mean(add(ls, scale(mul(mul(d, d), ops::exp(scale(ls, -2.0))), 0.5)));
        o.values.nll = nll.item();
        total = add(total, scale(nll, config.nll_weight));
    }
    o.total = total;
    o.values.total = total.item();
    o.values.reg_pos = reg_pos.item();
    o.values.reg_yaw = reg_yaw.item();
    o.values.cls = cls.item();
    o.values.mode = mode.item();
    return o;
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<Sample> samples_from(const std::vector<Scenario>& scenarios) {
    std::vector<Sample> out;
    for (const auto& s : scenarios) {
        if (!s.futures) throw ValidationError("training scenario has no ground-truth futures");
        out.push_back({s.scene, *s.futures});
    }
    return out;
}

std::string to_jsonl(const EpochRecord& r) {
    detail::Json j;
    j["epoch"] = r.epoch;
    j["split"] = r.split;
    j["total"] = r.mean.total;
    j["reg_pos"] = r.mean.reg_pos;
    j["reg_yaw"] = r.mean.reg_yaw;
    j["cls"] = r.mean.cls;
    j["mode"] = r.mean.mode;
    j["nll"] = r.mean.nll;
    j["min_ade"] = r.min_ade;
    j["lr"] = r.lr;
    return j.dump();
}

double mean_min_ade(const PredNet& net, const std::vector<Sample>& samples) {
    if (samples.empty()) return 0.0;
    std::vector<double> v;
    for (const auto& s : samples) v.push_back(min_ade(predict(s.scene, net), s.futures, s.scene.ego_id));
    return order_free_mean(v);
}

double winner_mode_accuracy(const PredNet& net, const std::vector<Sample>& samples,
                            const ModalityConfig& modality) {
    std::size_t hits = 0, total = 0;
    NoGradGuard guard;
    for (const auto& s : samples) {
        NetOutput out = net.forward(s.scene);
        JointTargets targets = make_targets(out, s.scene, s.futures, modality);
        std::size_t k = wta_select(out.mu, targets.pos);
        PredictionSet pred = to_prediction_set(out, s.scene);
        const ModePrediction& m = pred.modes[k];
        auto with_current = [&](const std::string& id) {
            std::vector<Vec2> traj{s.scene.agent(id).current().pose.position()};
            const auto& mu = m.agent(id).mu;
            traj.insert(traj.end(), mu.begin(), mu.end());
            return traj;
        };
        auto ego_pred = with_current(out.joint_ids[0]);
        auto ego_gt = trajectory_with_current(s.scene, s.futures.agent(out.joint_ids[0]));
        for (std::size_t j = 1; j < out.joint_ids.size(); ++j) {
            const std::string& id = out.joint_ids[j];
            ModeLabel predicted = classify(ego_pred, with_current(id), modality);
            ModeLabel truth = classify(ego_gt, trajectory_with_current(s.scene, s.futures.agent(id)), modality);
            hits += predicted == truth ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

class AdamW {
public:
    AdamW(ParamStore& params, const TrainConfig& c) : params_(params), c_(c) {
        for (const auto& [_, t] : params_.items()) {
            m_.emplace_back(t.numel(), 0.0);
            v_.emplace_back(t.numel(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        double clip = 1.0;
        if (c_.grad_clip > 0.0) {
            double sq = 0.0;
            for (const auto& [_, t] : params_.items())
                for (double g : t.grad()) sq += g * g;
            double norm = std::sqrt(sq);
            if (norm > c_.grad_clip) clip = c_.grad_clip / norm;
        }
        const double bc1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
        auto& items = params_.items();
        for (std::size_t p = 0; p < items.size(); ++p) {
            Tensor& t = items[p].second;
            auto w = t.mutable_data();
            auto g = t.grad();
            auto& m = m_[p];
            auto& v = v_[p];
            for (std::size_t i = 0; i < w.size(); ++i) {
                double gi = g[i] * clip;
                m[i] = c_.beta1 * m[i] + (1.0 - c_.beta1) * gi;
                v[i] = c_.beta2 * v[i] + (1.0 - c_.beta2) * gi * gi;
                double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c_.adam_eps) + c_.weight_decay * w[i];
                w[i] -= lr * update;
            }
        }
    }

    /// Clears the moment estimates of every parameter whose name starts with `prefix`.
    void reset(std::string_view prefix) {
        const auto& items = params_.items();
        for (std::size_t p = 0; p < items.size(); ++p) {
            if (!items[p].first.starts_with(prefix)) continue;
            std::fill(m_[p].begin(), m_[p].end(), 0.0);
            std::fill(v_[p].begin(), v_[p].end(), 0.0);
        }
    }

private:
    ParamStore& params_;
    const TrainConfig& c_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

struct Accumulator {
    LossBreakdown sum;
    std::size_t n = 0;

    void add(const LossBreakdown& b) {
        sum.total += b.total;
        sum.reg_pos += b.reg_pos;
        sum.reg_yaw += b.reg_yaw;
        sum.cls += b.cls;
        sum.mode += b.mode;
        sum.nll += b.nll;
        ++n;
    }

    std::vector<std::size_t> wins;

    void add(const LossBreakdown& b, std::size_t K) {
        wins.resize(K, 0);
        ++wins.at(b.winner);
        add(b);
    }

    LossBreakdown mean() const {
        LossBreakdown m = sum;
        double d = n == 0 ? 1.0 : static_cast<double>(n);
        m.total /= d;
        m.reg_pos /= d;
        m.reg_yaw /= d;
        m.cls /= d;
        m.mode /= d;
        m.nll /= d;
        return m;
    }
};

}  // namespace

namespace {

// Winner-takes-all leaves a mode that never wins without any regression
// gradient, so it stays wherever it started. Like a dead codebook vector it is
// re-seeded by splitting the busiest mode along the principal axis of that
// mode's residuals: the two copies start at the centres of the two halves.
void split_mode(PredNet& net, std::size_t donor, std::size_t dead, const std::vector<Sample>& train_set,
                const TrainConfig& config) {
    const NetConfig& nc = net.config();
    const std::size_t slots = static_cast<std::size_t>(1 + nc.n_neighbor);
    const std::size_t T = static_cast<std::size_t>(nc.T_f);
    const std::size_t dim = slots * T * 2;
    std::vector<Eigen::VectorXd> residuals;
    {
        NoGradGuard guard;
        for (const auto& s : train_set) {
            NetOutput out = net.forward(s.scene);
            JointTargets tg = make_targets(out, s.scene, s.futures, config.modality);
            if (wta_select(out.mu, tg.pos) != donor) continue;
            const std::size_t J = out.joint_ids.size();
            auto mu = out.mu.data();
            auto gt = tg.pos.data();
            Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
            for (std::size_t i = 0; i < J * T * 2; ++i)
                r[static_cast<Eigen::Index>(i)] = gt[i] - mu[donor * J * T * 2 + i];
            residuals.push_back(std::move(r));
        }
    }
    net.copy_mode(donor, dead);
    if (residuals.size() < 2) return;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    for (const auto& r : residuals) mean += r;
    mean /= static_cast<double>(residuals.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(mean.size(), mean.size());
    for (const auto& r : residuals) cov += (r - mean) * (r - mean).transpose();
    cov /= static_cast<double>(residuals.size());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::Index top = mean.size() - 1;  // eigenvalues ascend
    Eigen::VectorXd step = std::sqrt(std::max(0.0, eig.eigenvalues()[top])) * eig.eigenvectors().col(top);

    for (auto& [name, t] : net.params().items()) {
        if (name != "head.anchor") continue;
        auto a = t.mutable_data();
        for (std::size_t i = 0; i < dim; ++i) {
            const auto e = static_cast<Eigen::Index>(i);
            a[donor * dim + i] += mean[e] - step[e];
            a[dead * dim + i] += mean[e] + step[e];
        }
    }
}

void revive_dead_modes(PredNet& net, AdamW& opt, std::vector<std::size_t> wins,
                       const std::vector<Sample>& train_set, const TrainConfig& config) {
    if (config.revive_below <= 0.0 || wins.size() < 2) return;
    const double total = static_cast<double>(std::accumulate(wins.begin(), wins.end(), std::size_t{0}));
    for (std::size_t k = 0; k < wins.size(); ++k) {
        if (static_cast<double>(wins[k]) >= config.revive_below * total) continue;
        std::size_t donor = static_cast<std::size_t>(std::max_element(wins.begin(), wins.end()) - wins.begin());
        if (donor == k) continue;
        split_mode(net, donor, k, train_set, config);
        wins[k] = wins[donor] / 2;
        wins[donor] -= wins[k];
        opt.reset("head.traj" + std::to_string(k));
    }
    opt.reset("head.anchor");
}

}  // namespace

TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val,
                  const NetConfig& net_config, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_record) {
    if (train_set.empty()) throw ValidationError("training set is empty");
    config.validate();
    PredNet net(net_config, config.seed);
    AdamW opt(net.params(), config);
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

    const std::size_t B = static_cast<std::size_t>(config.batch_size);
    const std::size_t batches_per_epoch = (train_set.size() + B - 1) / B;
    const double total_steps = static_cast<double>(batches_per_epoch * static_cast<std::size_t>(config.epochs));
    std::size_t step = 0;

    TrainResult result{PredNet(net_config, std::vector<std::pair<std::string, Tensor>>(
                                               net.params().clone().items())),
                       {}, 0, 0.0};
    bool have_best = false;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    auto emit = [&](const EpochRecord& r) {
        result.curve.push_back(r);
        if (on_record) on_record(r);
    };

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        Accumulator acc;
        double lr = config.lr;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            lr = config.cosine_decay
                     ? config.lr * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / total_steps))
                     : config.lr;
            std::size_t begin = b * B, end = std::min(train_set.size(), begin + B);
            const double weight = 1.0 / static_cast<double>(end - begin);
            net.params().zero_grad();
            std::string batch_id = "epoch " + std::to_string(epoch) + " batch " + std::to_string(b);
            for (std::size_t i = begin; i < end; ++i) {
                const Sample& s = train_set[order[i]];
                try {
                    Objective o = objective(net.forward(s.scene), s.scene, s.futures, config);
                    if (!std::isfinite(o.values.total))
                        throw RuntimeFailure("non-finite loss");
                    scale(o.total, weight).backward();
                    acc.add(o.values, static_cast<std::size_t>(net_config.K));
                } catch (const RuntimeFailure& e) {
                    throw RuntimeFailure(std::string(e.what()) + " in " + batch_id);
                }
            }
            opt.step(lr);
            ++step;
        }
        emit({epoch, "train", acc.mean(), 0.0, lr});
        if (epoch < config.epochs) revive_dead_modes(net, opt, acc.wins, train_set, config);

        if (!val.empty()) {
            Accumulator vacc;
            {
                NoGradGuard guard;
                for (const auto& s : val) vacc.add(objective(net.forward(s.scene), s.scene, s.futures, config).values);
            }
            double ade = mean_min_ade(net, val);
            emit({epoch, "val", vacc.mean(), ade, lr});
            if (!have_best || ade < result.best_val_min_ade) {
                have_best = true;
                result.best_val_min_ade = ade;
                result.best_epoch = epoch;
                result.best = PredNet(net_config, net.params().clone().items());
            }
        }
    }
    if (!have_best) {
        result.best_epoch = config.epochs;
        result.best = PredNet(net_config, net.params().clone().items());
    }
    return result;
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<std::filesystem::path> expand_dataset(const std::vector<std::filesystem::path>& entries) {
    std::vector<std::filesystem::path> out;
    for (const auto& e : entries) {
        if (std::filesystem::is_directory(e)) {
            std::vector<std::filesystem::path> files;
            for (const auto& f : std::filesystem::directory_iterator(e))
                if (f.is_regular_file() && f.path().extension() == ".json") files.push_back(f.path());
            std::sort(files.begin(), files.end());
            out.insert(out.end(), files.begin(), files.end());
        } else if (std::filesystem::is_regular_file(e)) {
            out.push_back(e);
        } else {
            throw ValidationError("dataset path '" + e.string() + "' does not exist");
        }
    }
    return out;
}

TrainManifest load_manifest(const std::filesystem::path& path) {
    using detail::Json;
    Json doc = detail::parse_json(detail::read_file(path), "manifest");
    detail::check_format(doc, kManifestFormat);
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path q(p);
        return q.is_absolute() ? q : base / q;
    };
    TrainManifest m;
    for (const auto& [key, v] : doc.items()) {
        if (key == "format") continue;
        if (key == "train" || key == "val") {
            if (!v.is_array()) throw ValidationError("manifest." + key + ": expected an array of paths");
            for (const auto& p : v) {
                if (!p.is_string()) throw ValidationError("manifest." + key + ": expected strings");
                (key == "train" ? m.train : m.val).push_back(resolve(p.get<std::string>()));
            }
        } else if (key == "net") {
            m.net = net_config_from_json(v.dump());
        } else if (key == "train_config") {
            m.train_config = train_config_from_json(v.dump());
        } else if (key == "checkpoint") {
            m.checkpoint = resolve(detail::string_at(doc, "checkpoint", "manifest"));
        } else if (key == "loss_curve") {
            m.loss_curve = resolve(detail::string_at(doc, "loss_curve", "manifest"));
        } else {
            throw ValidationError("manifest: unknown key '" + key + "'");
        }
    }
    if (m.train.empty()) throw ValidationError("manifest: 'train' lists no datasets");
    if (m.checkpoint.empty()) throw ValidationError("manifest: missing 'checkpoint'");
    return m;
}

}  // namespace cogdrive
