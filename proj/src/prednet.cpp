#include "cogdrive/prednet.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "cogdrive/modality.hpp"
#include "json_util.hpp"

namespace cogdrive {

namespace {

using namespace ops;

constexpr double kPosScale = 0.1;
constexpr double kSpeedScale = 0.1;
constexpr std::size_t kAgentFeatures = 8;
constexpr std::size_t kMapFeatures = 7;
constexpr std::size_t kHeadChannels = 6;  // mu x/y, log-std x/y, yaw sin/cos

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

// ---------------------------------------------------------------------------
// Parameter declaration

struct Init {
    ParamStore& store;
    std::mt19937_64 rng;

    void linear(const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
        double bound = gain / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        std::vector<double> w(in * out), b(out);
        for (double& x : w) x = u(rng);
        for (double& x : b) x = u(rng);
        store.add(name + ".w", {in, out}, std::move(w));
        store.add(name + ".b", {out}, std::move(b));
    }

    void mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, double gain = 1.0) {
        linear(name + ".l1", in, hidden);
        linear(name + ".l2", hidden, out, gain);
    }

    void norm(const std::string& name, std::size_t d) {
        store.add(name + ".g", {d}, std::vector<double>(d, 1.0));
        store.add(name + ".b", {d}, std::vector<double>(d, 0.0));
    }

    void attention(const std::string& name, std::size_t d) {
        for (const char* p : {".q", ".k", ".v", ".o"}) linear(name + p, d, d);
    }

    void gaussian(const std::string& name, Shape shape, double stddev) {
        std::normal_distribution<double> n(0.0, stddev);
        std::vector<double> v(numel_of(shape));
        for (double& x : v) x = n(rng);
        store.add(name, std::move(shape), std::move(v));
    }
};

void declare(ParamStore& store, const NetConfig& c, std::uint64_t seed) {
    Init in{store, std::mt19937_64(seed)};
    const std::size_t D = sz(c.D);
    in.mlp("embed.agent", kAgentFeatures, D, D);
    in.mlp("embed.map", kMapFeatures, D, D);
    in.mlp("embed.rel", 5, D, D);
    for (int l = 0; l < c.L_e; ++l) {
        std::string p = "enc" + std::to_string(l);
        in.mlp(p + ".agg", 3 * D, D, D);
        in.norm(p + ".ln1", D);
        in.attention(p + ".attn", D);
        in.norm(p + ".ln2", D);
        in.mlp(p + ".ffn", D, 2 * D, D);
        in.mlp(p + ".rel", D, D, D);
    }
    in.gaussian("dec.q_anchor", {sz(c.K), D}, c.query_init);
    in.mlp("dec.q_mode", sz(1 + c.n_neighbor) * D, D, sz(c.K) * D);
    for (int l = 0; l < c.L_d; ++l) {
        std::string p = "dec" + std::to_string(l);
        in.norm(p + ".ln_self", D);
        in.attention(p + ".self", D);
        in.norm(p + ".ln_cross", D);
        in.norm(p + ".ln_mem", D);
        in.attention(p + ".cross", D);
        in.norm(p + ".ln_ffn", D);
        in.mlp(p + ".ffn", D, 2 * D, D);
    }
    for (int k = 0; k < c.K; ++k) in.mlp("head.traj" + std::to_string(k), 2 * D, D, sz(c.T_f) * kHeadChannels, 0.1);
    in.mlp("head.prob", D, D, 1, 0.1);
    // Per-mode, per-slot offset trajectories; slot 0 is the ego.
    const std::size_t anchor_size = sz(c.K) * sz(1 + c.n_neighbor) * sz(c.T_f) * 2;
    store.add("head.anchor", {sz(c.K), sz(1 + c.n_neighbor), sz(c.T_f), 2}, std::vector<double>(anchor_size, 0.0));
}

// ---------------------------------------------------------------------------
// Layers

struct Layers {
    const ParamStore& p;

    Tensor linear(const std::string& name, const Tensor& x) const {
        return add(matmul(x, p.get(name + ".w")), p.get(name + ".b"));
    }
    Tensor mlp(const std::string& name, const Tensor& x) const {
        return linear(name + ".l2", relu(linear(name + ".l1", x)));
    }
    Tensor norm(const std::string& name, const Tensor& x) const {
        return layer_norm(x, p.get(name + ".g"), p.get(name + ".b"));
    }
    /// q: [B, Lq, D], kv inputs: [B, Lk, D].
    Tensor attention(const std::string& name, const Tensor& q, const Tensor& k, const Tensor& v,
                     std::size_t heads) const {
        Tensor a = scaled_dot_product_attention(linear(name + ".q", q), linear(name + ".k", k),
                                                linear(name + ".v", v), heads);
        return linear(name + ".o", a);
    }
};

Tensor flat_rows(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor::from({rows, cols}, std::move(values));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void NetConfig::validate() const {
    if (D < 1 || heads < 1 || D % heads != 0)
        throw ValidationError("net: D=" + std::to_string(D) + " must be positive and divisible by heads=" +
                              std::to_string(heads));
    if (K < 1) throw ValidationError("net: K must be >= 1");
    if (L_e < 1 || L_d < 1) throw ValidationError("net: L_e and L_d must be >= 1");
    if (n_neighbor < 1) throw ValidationError("net: n_neighbor must be >= 1");
    if (T_f < 1) throw ValidationError("net: T_f must be >= 1");
    if (!(init_sigma > 0.0) || !(query_init > 0.0) || !(output_scale > 0.0))
        throw ValidationError("net: init_sigma, query_init and output_scale must be positive");
}

std::string net_config_to_json(const NetConfig& c) {
    detail::Json j;
    j["D"] = c.D;
    j["L_e"] = c.L_e;
    j["L_d"] = c.L_d;
    j["heads"] = c.heads;
    j["K"] = c.K;
    j["n_neighbor"] = c.n_neighbor;
    j["T_f"] = c.T_f;
    j["init_sigma"] = c.init_sigma;
    j["query_init"] = c.query_init;
    j["output_scale"] = c.output_scale;
    j["residual_cv"] = c.residual_cv;
    return j.dump();
}

NetConfig net_config_from_json(std::string_view text) {
    detail::Json j = detail::parse_json(text, "net config");
    if (!j.is_object()) throw ValidationError("net config: expected an object");
    NetConfig c;
    for (const auto& [key, v] : j.items()) {
        auto integer = [&](int& dst) {
            if (!v.is_number_integer()) throw ValidationError("net." + key + ": expected an integer");
            dst = v.get<int>();
        };
        if (key == "D") integer(c.D);
        else if (key == "L_e") integer(c.L_e);
        else if (key == "L_d") integer(c.L_d);
        else if (key == "heads") integer(c.heads);
        else if (key == "K") integer(c.K);
        else if (key == "n_neighbor") integer(c.n_neighbor);
        else if (key == "T_f") integer(c.T_f);
        else if (key == "init_sigma") c.init_sigma = detail::number_at(v, "net.init_sigma");
        else if (key == "query_init") c.query_init = detail::number_at(v, "net.query_init");
        else if (key == "output_scale") c.output_scale = detail::number_at(v, "net.output_scale");
        else if (key == "residual_cv") {
            if (!v.is_boolean()) throw ValidationError("net.residual_cv: expected a boolean");
            c.residual_cv = v.get<bool>();
        } else {
            throw ValidationError("net: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// PredictionSet

const AgentPrediction& ModePrediction::agent(std::string_view id) const {
    for (const auto& a : agents)
        if (a.id == id) return a;
    throw ValidationError("prediction has no agent '" + std::string(id) + "'");
}

std::size_t PredictionSet::horizon() const {
    if (modes.empty() || modes.front().agents.empty()) return 0;
    return modes.front().agents.front().mu.size();
}

std::vector<double> PredictionSet::probs() const {
    std::vector<double> p;
    for (const auto& m : modes) p.push_back(m.prob);
    return p;
}

void validate(const PredictionSet& pred) {
    if (pred.modes.empty()) throw ValidationError("prediction has no modes");
    if (!(pred.dt > 0.0)) throw ValidationError("prediction dt must be positive");
    double total = 0.0;
    for (const auto& m : pred.modes) {
        if (!(m.prob >= 0.0 && m.prob <= 1.0)) throw ValidationError("mode probability outside [0, 1]");
        total += m.prob;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("mode probabilities do not sum to 1");
    const auto& ref = pred.modes.front();
    const std::size_t h = pred.horizon();
    if (h == 0) throw ValidationError("prediction horizon must be >= 1");
    for (const auto& m : pred.modes) {
        if (m.agents.size() != ref.agents.size()) throw ValidationError("modes predict different agent sets");
        for (std::size_t i = 0; i < m.agents.size(); ++i) {
            const auto& a = m.agents[i];
            if (a.id != ref.agents[i].id) throw ValidationError("modes predict different agent sets");
            if (a.mu.size() != h || a.sigma.size() != h || a.yaw.size() != h)
                throw ValidationError("agent '" + a.id + "': inconsistent horizon");
            for (std::size_t t = 0; t < h; ++t) {
                if (!std::isfinite(a.mu[t].x) || !std::isfinite(a.mu[t].y) || !std::isfinite(a.yaw[t]))
                    throw ValidationError("agent '" + a.id + "': non-finite prediction");
                if (!(a.sigma[t].x > 0.0) || !(a.sigma[t].y > 0.0) || !std::isfinite(a.sigma[t].x) ||
                    !std::isfinite(a.sigma[t].y))
                    throw ValidationError("agent '" + a.id + "': sigma must be positive and finite");
            }
        }
    }
    for (const auto& id : pred.joint_ids) ref.agent(id);
}

std::string dump_prediction(const PredictionSet& pred) {
    using detail::Json;
    Json doc;
    doc["format"] = kPredFormat;
    doc["ego_id"] = pred.ego_id;
    doc["t0"] = pred.t0;
    doc["dt"] = pred.dt;
    doc["joint_ids"] = pred.joint_ids;
    Json modes = Json::array();
    for (const auto& m : pred.modes) {
        Json jm;
        jm["prob"] = m.prob;
        Json agents = Json::array();
        for (const auto& a : m.agents) {
            Json ja;
            ja["id"] = a.id;
            ja["network"] = a.network;
            Json rows = Json::array();
            for (std::size_t t = 0; t < a.mu.size(); ++t)
                rows.push_back({a.mu[t].x, a.mu[t].y, a.sigma[t].x, a.sigma[t].y, a.yaw[t]});
            ja["steps"] = std::move(rows);
            agents.push_back(std::move(ja));
        }
        jm["agents"] = std::move(agents);
        modes.push_back(std::move(jm));
    }
    doc["modes"] = std::move(modes);
    return doc.dump(1);
}

void save_prediction(const PredictionSet& pred, const std::filesystem::path& path) {
    detail::write_file_atomic(path, dump_prediction(pred));
}

PredictionSet parse_prediction(std::string_view text) {
    using detail::Json;
    Json doc = detail::parse_json(text, "prediction");
    detail::check_format(doc, kPredFormat);
    PredictionSet p;
    p.ego_id = detail::string_at(doc, "ego_id", "prediction");
    p.t0 = detail::number_at(detail::require(doc, "t0", "prediction"), "prediction.t0");
    p.dt = detail::number_at(detail::require(doc, "dt", "prediction"), "prediction.dt");
    const Json& joint = detail::require(doc, "joint_ids", "prediction");
    if (!joint.is_array()) throw ValidationError("prediction.joint_ids: expected an array");
    for (const auto& id : joint) {
        if (!id.is_string()) throw ValidationError("prediction.joint_ids: expected strings");
        p.joint_ids.push_back(id.get<std::string>());
    }
    const Json& modes = detail::require(doc, "modes", "prediction");
    if (!modes.is_array()) throw ValidationError("prediction.modes: expected an array");
    for (std::size_t k = 0; k < modes.size(); ++k) {
        std::string where = "prediction.modes[" + std::to_string(k) + "]";
        ModePrediction m;
        m.prob = detail::number_at(detail::require(modes[k], "prob", where), where + ".prob");
        const Json& agents = detail::require(modes[k], "agents", where);
        if (!agents.is_array()) throw ValidationError(where + ".agents: expected an array");
        for (std::size_t i = 0; i < agents.size(); ++i) {
            std::string aw = where + ".agents[" + std::to_string(i) + "]";
            AgentPrediction a;
            a.id = detail::string_at(agents[i], "id", aw);
            const Json& net = detail::require(agents[i], "network", aw);
            if (!net.is_boolean()) throw ValidationError(aw + ".network: expected a boolean");
            a.network = net.get<bool>();
            const Json& rows = detail::require(agents[i], "steps", aw);
            if (!rows.is_array()) throw ValidationError(aw + ".steps: expected an array");
            for (const auto& r : rows) {
                if (!r.is_array() || r.size() != 5) throw ValidationError(aw + ".steps: rows need 5 numbers");
                a.mu.push_back({detail::number_at(r[0], aw), detail::number_at(r[1], aw)});
                a.sigma.push_back({detail::number_at(r[2], aw), detail::number_at(r[3], aw)});
                a.yaw.push_back(detail::number_at(r[4], aw));
            }
            m.agents.push_back(std::move(a));
        }
        p.modes.push_back(std::move(m));
    }
    validate(p);
    return p;
}

PredictionSet load_prediction(const std::filesystem::path& path) {
    return parse_prediction(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Network

std::vector<std::string> joint_agent_ids(const Scene& scene, int n_neighbor) {
    std::vector<std::string> ids{scene.ego_id};
    for (auto& id : nearest_neighbors(scene, n_neighbor)) ids.push_back(std::move(id));
    return ids;
}

std::vector<Vec2> constant_velocity_local(const AgentHistory& agent, double dt, int horizon) {
    std::vector<Vec2> out;
    double v = agent.current().speed;
    for (int k = 1; k <= horizon; ++k) out.push_back({v * dt * k, 0.0});
    return out;
}

PredNet::PredNet(const NetConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    declare(params_, config_, seed);
}

PredNet::PredNet(const NetConfig& config, std::vector<std::pair<std::string, Tensor>> params)
    : config_(config) {
    config_.validate();
    ParamStore reference;
    declare(reference, config_, 0);
    std::map<std::string, Tensor> given;
    for (auto& [name, t] : params) {
        if (!reference.contains(name)) throw ValidationError("checkpoint has unexpected parameter '" + name + "'");
        given[name] = std::move(t);
    }
    for (const auto& [name, ref] : reference.items()) {
        auto it = given.find(name);
        if (it == given.end()) throw ValidationError("checkpoint is missing parameter '" + name + "'");
        if (it->second.shape() != ref.shape())
            throw ValidationError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                                  " in checkpoint, config expects " + shape_string(ref.shape()));
        params_.add(name, ref.shape(), std::vector<double>(it->second.data().begin(), it->second.data().end()));
    }
}

void PredNet::copy_mode(std::size_t from, std::size_t to) {
    const std::size_t K = sz(config_.K), D = sz(config_.D);
    if (from >= K || to >= K) throw ValidationError("copy_mode: mode index out of range");
    if (from == to) return;
    auto& items = params_.items();
    auto param = [&](const std::string& name) -> Tensor& {
        for (auto& [n, t] : items)
            if (n == name) return t;
        throw ValidationError("unknown parameter '" + name + "'");
    };
    // Columns [k*D, (k+1)*D) of a row-major matrix with `cols` columns.
    auto copy_block = [&](Tensor& t, std::size_t rows, std::size_t cols) {
        auto v = t.mutable_data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * cols + from * D), D,
                        v.begin() + static_cast<std::ptrdiff_t>(r * cols + to * D));
    };
    copy_block(param("dec.q_anchor"), 1, K * D);
    Tensor& w = param("dec.q_mode.l2.w");
    copy_block(w, w.dim(0), K * D);
    copy_block(param("dec.q_mode.l2.b"), 1, K * D);
    const std::string src = "head.traj" + std::to_string(from), dst = "head.traj" + std::to_string(to);
    for (const char* suffix : {".l1.w", ".l1.b", ".l2.w", ".l2.b"}) {
        auto a = param(src + suffix).data();
        auto b = param(dst + suffix).mutable_data();
        std::copy(a.begin(), a.end(), b.begin());
    }
    auto traj = param("head.anchor").mutable_data();
    const std::size_t per_mode = traj.size() / K;
    std::copy_n(traj.begin() + static_cast<std::ptrdiff_t>(from * per_mode), per_mode,
                traj.begin() + static_cast<std::ptrdiff_t>(to * per_mode));
}

void PredNet::save(const std::filesystem::path& path) const {
    save_weights(params_, "{\"net\":" + net_config_to_json(config_) + "}", path);
}

PredNet PredNet::load(const std::filesystem::path& path) {
    LoadedWeights w = load_weights(path);
    detail::Json meta = detail::parse_json(w.metadata_json.empty() ? "{}" : w.metadata_json, "metadata");
    if (!meta.contains("net")) throw ValidationError("checkpoint metadata has no 'net' config");
    return PredNet(net_config_from_json(meta["net"].dump()), std::move(w.params));
}

Embedded PredNet::embed(const Scene& scene) const {
    Layers L{params_};
    const std::size_t D = sz(config_.D);
    const std::size_t M = scene.agents.size();
    const std::size_t H = scene.history_length();

    // Agents: one vector per observed step transition, in the agent's own frame.
    std::vector<double> av;
    av.reserve(M * (H - 1) * kAgentFeatures);
    for (const auto& a : scene.agents) {
        LocalFrame f = frame_of(a);
        for (std::size_t t = 1; t < H; ++t) {
            Pose2 prev = to_local(f, a.states[t - 1].pose);
            Pose2 cur = to_local(f, a.states[t].pose);
            av.insert(av.end(), {prev.x * kPosScale, prev.y * kPosScale, cur.x * kPosScale, cur.y * kPosScale,
                                 std::cos(cur.heading), std::sin(cur.heading), a.states[t].speed * kSpeedScale,
                                 (static_cast<double>(t) - static_cast<double>(H - 1)) * scene.dt});
        }
    }
    Tensor agents = Tensor::from({M, H - 1, kAgentFeatures}, std::move(av));
    Embedded e;
    e.F_A = max_pool(L.mlp("embed.agent", agents), 1);

    // Polylines: one vector per segment; shorter polylines repeat their last
    // segment, which leaves the max-pool unchanged.
    const std::size_t Nr = scene.map.size();
    if (Nr == 0) {
        e.F_R = Tensor::zeros({0, D});
    } else {
        std::size_t S = 0;
        for (const auto& p : scene.map) S = std::max(S, p.points.size() - 1);
        std::vector<double> mv;
        mv.reserve(Nr * S * kMapFeatures);
        for (const auto& p : scene.map) {
            LocalFrame f = frame_of(p);
            std::size_t segs = p.points.size() - 1;
            for (std::size_t s = 0; s < S; ++s) {
                std::size_t i = std::min(s, segs - 1);
                Vec2 a = to_local(f, p.points[i]);
                Vec2 b = to_local(f, p.points[i + 1]);
                mv.insert(mv.end(), {a.x * kPosScale, a.y * kPosScale, b.x * kPosScale, b.y * kPosScale,
                                     p.semantics == PolylineSemantics::lane_center ? 1.0 : 0.0,
                                     p.semantics == PolylineSemantics::lane_boundary ? 1.0 : 0.0,
                                     p.semantics == PolylineSemantics::road_edge ? 1.0 : 0.0});
            }
        }
        e.F_R = max_pool(L.mlp("embed.map", Tensor::from({Nr, S, kMapFeatures}, std::move(mv))), 1);
    }

    auto frames = instance_frames(scene);
    RelPosTensor rel = rel_features(frames);
    const std::size_t N = rel.n;
    std::vector<double> rv;
    rv.reserve(N * N * 5);
    for (const auto& f : rel.data) rv.insert(rv.end(), {f[0], f[1], f[2], f[3], f[4] * kPosScale});
    e.r_pe = reshape(L.mlp("embed.rel", flat_rows(N * N, 5, std::move(rv))), {N, N, D});
    return e;
}

EncodedScene PredNet::encode(const Embedded& e, int layers) const {
    Layers L{params_};
    const std::size_t D = sz(config_.D);
    const std::size_t heads = sz(config_.heads);
    EncodedScene out;
    out.num_agents = e.F_A.dim(0);
    Tensor F = concat({e.F_A, e.F_R}, 0);
    Tensor r = e.r_pe;
    const std::size_t N = F.dim(0);
    std::vector<std::size_t> rows_i(N * N), rows_j(N * N);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            rows_i[i * N + j] = i;
            rows_j[i * N + j] = j;
        }
    for (int l = 0; l < layers; ++l) {
        std::string p = "enc" + std::to_string(l);
        Tensor pair = concat({index_select(F, rows_i), index_select(F, rows_j), reshape(r, {N * N, D})}, 1);
        Tensor agg = L.mlp(p + ".agg", pair);  // [N*N, D]
        Tensor kv = reshape(agg, {N, N, D});
        Tensor q = reshape(L.norm(p + ".ln1", F), {N, 1, D});
        Tensor upd = reshape(L.attention(p + ".attn", q, kv, kv, heads), {N, D});
        F = add(F, upd);
        F = add(F, L.mlp(p + ".ffn", L.norm(p + ".ln2", F)));
        r = add(r, reshape(L.mlp(p + ".rel", agg), {N, N, D}));
    }
    out.F_AR = F;
    out.r_pe = r;
    return out;
}

NetOutput PredNet::decode(const EncodedScene& enc, const Scene& scene) const {
    Layers L{params_};
    const std::size_t D = sz(config_.D);
    const std::size_t K = sz(config_.K);
    const std::size_t T = sz(config_.T_f);
    const std::size_t heads = sz(config_.heads);
    const std::size_t N = enc.F_AR.dim(0);

    NetOutput out;
    out.joint_ids = joint_agent_ids(scene, config_.n_neighbor);
    const std::size_t J = out.joint_ids.size();
    std::vector<std::size_t> joint_rows;
    for (const auto& id : out.joint_ids) {
        joint_rows.push_back(scene.agent_index(id));
        out.joint_frames.push_back(frame_of(scene.agent(id)));
    }

    // Mode queries from the ego and neighbour features (zero-padded when the
    // scene has fewer neighbours than configured).
    std::vector<Tensor> qin{reshape(index_select(enc.F_AR, joint_rows), {1, J * D})};
    std::size_t width = sz(1 + config_.n_neighbor) * D;
    if (J * D < width) qin.push_back(Tensor::zeros({1, width - J * D}));
    Tensor q_mode = reshape(L.mlp("dec.q_mode", concat(qin, 1)), {K, D});
    Tensor Q = add(params_.get("dec.q_anchor"), q_mode);

    Tensor memory = reshape(enc.F_AR, {1, N, D});
    Tensor FI = Tensor::zeros({K, D});
    for (int l = 0; l < config_.L_d; ++l) {
        std::string p = "dec" + std::to_string(l);
        Tensor h = reshape(L.norm(p + ".ln_self", add(FI, Q)), {1, K, D});
        FI = add(FI, reshape(L.attention(p + ".self", h, h, reshape(FI, {1, K, D}), heads), {K, D}));
        Tensor hq = reshape(L.norm(p + ".ln_cross", add(FI, Q)), {1, K, D});
        Tensor mem = L.norm(p + ".ln_mem", memory);
        FI = add(FI, reshape(L.attention(p + ".cross", hq, mem, mem, heads), {K, D}));
        FI = add(FI, L.mlp(p + ".ffn", L.norm(p + ".ln_ffn", FI)));
    }

    // One trajectory head per mode, applied to every jointly predicted agent.
    // The heads read the mode query alongside the decoded feature so that mode
    // identity survives even when attention outputs are still nearly uniform.
    Tensor modes = add(FI, Q);
    Tensor agents = index_select(enc.F_AR, joint_rows);
    std::vector<Tensor> per_mode;
    for (std::size_t k = 0; k < K; ++k) {
        Tensor in = concat({index_select(modes, std::vector<std::size_t>(J, k)), agents}, 1);
        per_mode.push_back(reshape(L.mlp("head.traj" + std::to_string(k), in), {1, J, T, kHeadChannels}));
    }
    Tensor raw = concat(per_mode, 0);

    Tensor mu = scale(slice(raw, 3, 0, 2), config_.output_scale);
    mu = add(mu, slice(params_.get("head.anchor"), 1, 0, J));
    if (config_.residual_cv) {
        std::vector<double> cv;
        for (const auto& id : out.joint_ids)
            for (const Vec2& p : constant_velocity_local(scene.agent(id), scene.dt, config_.T_f))
                cv.insert(cv.end(), {p.x, p.y});
        mu = add(mu, Tensor::from({J, T, 2}, std::move(cv)));
    }
    out.mu = mu;
    out.log_sigma = add_scalar(slice(raw, 3, 2, 4), std::log(config_.init_sigma));

    // Yaw defaults to the current heading (local (sin, cos) = (0, 1)) and is normalised.
    Tensor yaw = add(slice(raw, 3, 4, 6), Tensor::from({2}, {0.0, 1.0}));
    Tensor len = reshape(ops::sqrt(add_scalar(sum(mul(yaw, yaw), 3), 1e-12)), {K, J, T, 1});
    out.yaw = div(yaw, concat({len, len}, 3));

    out.logits = reshape(L.mlp("head.prob", modes), {K});
    out.probs = softmax(out.logits);
    return out;
}

NetOutput PredNet::forward(const Scene& scene) const {
    return decode(encode(embed(scene)), scene);
}

PredictionSet to_prediction_set(const NetOutput& out, const Scene& scene) {
    const std::size_t K = out.probs.numel();
    const std::size_t J = out.joint_ids.size();
    const std::size_t T = out.mu.dim(2);
    PredictionSet pred;
    pred.ego_id = scene.ego_id;
    pred.t0 = scene.ego().current().t;
    pred.dt = scene.dt;
    pred.joint_ids = out.joint_ids;

    auto mu = out.mu.data();
    auto ls = out.log_sigma.data();
    auto yw = out.yaw.data();
    const double cv_sigma = 0.5;
    for (std::size_t k = 0; k < K; ++k) {
        ModePrediction m;
        m.prob = out.probs[k];
        for (std::size_t j = 0; j < J; ++j) {
            const LocalFrame& f = out.joint_frames[j];
            double c = std::cos(f.heading), s = std::sin(f.heading);
            AgentPrediction a;
            a.id = out.joint_ids[j];
            for (std::size_t t = 0; t < T; ++t) {
                std::size_t base = ((k * J + j) * T + t) * 2;
                a.mu.push_back(to_global(f, Vec2{mu[base], mu[base + 1]}));
                double sx = std::exp(ls[base]), sy = std::exp(ls[base + 1]);
                a.sigma.push_back({std::sqrt(c * c * sx * sx + s * s * sy * sy),
                                   std::sqrt(s * s * sx * sx + c * c * sy * sy)});
                a.yaw.push_back(wrap_angle(std::atan2(yw[base], yw[base + 1]) + f.heading));
            }
            m.agents.push_back(std::move(a));
        }
        for (const auto& agent : scene.agents) {
            if (std::find(out.joint_ids.begin(), out.joint_ids.end(), agent.id) != out.joint_ids.end()) continue;
            LocalFrame f = frame_of(agent);
            AgentPrediction a;
            a.id = agent.id;
            a.network = false;
            for (const Vec2& p : constant_velocity_local(agent, scene.dt, static_cast<int>(T))) {
                a.mu.push_back(to_global(f, p));
                a.sigma.push_back({cv_sigma, cv_sigma});
                a.yaw.push_back(f.heading);
            }
            m.agents.push_back(std::move(a));
        }
        pred.modes.push_back(std::move(m));
    }
    return pred;
}

PredictionSet predict(const Scene& scene, const PredNet& net) {
    validate(scene);
    NoGradGuard guard;
    PredictionSet pred = to_prediction_set(net.forward(scene), scene);
    validate(pred);
    return pred;
}

}  // namespace cogdrive
