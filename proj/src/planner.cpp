#include "cogdrive/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "cogdrive/frames.hpp"
#include "cogdrive/qp.hpp"
#include "json_util.hpp"

namespace cogdrive {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Configuration

void VehicleGeometry::validate() const {
    if (!(wheelbase > 0.0)) throw ValidationError("geometry: wheelbase must be > 0");
    if (!(r_F > 0.0) || !(r_R > 0.0)) throw ValidationError("geometry: disc radii must be > 0");
    if (!(disc_offset >= 0.0)) throw ValidationError("geometry: disc_offset must be >= 0");
}

std::array<Vec2, 2> VehicleGeometry::discs(Vec2 centre, double heading) const {
    Vec2 axis{std::cos(heading), std::sin(heading)};
    double s = disc_offset * wheelbase;
    return {centre + axis * s, centre - axis * s};
}

void PlannerConfig::validate() const {
    if (!(dt > 0.0)) throw ValidationError("planner: dt must be > 0");
    if (horizon < 2) throw ValidationError("planner: horizon must be >= 2");
    if (branch_time < 1 || branch_time >= horizon)
        throw ValidationError("planner: branch_time must be in [1, horizon)");
    if (replan_period < 1) throw ValidationError("planner: replan_period must be >= 1");
    if (branch_time <= replan_period)
        throw ValidationError("planner: branch_time must exceed replan_period");
    if (!(a_min < 0.0 && a_max > 0.0)) throw ValidationError("planner: need a_min < 0 < a_max");
    if (!(delta_max > 0.0 && delta_max < kPi / 2)) throw ValidationError("planner: delta_max must be in (0, pi/2)");
    for (double q : Q)
        if (!(q > 0.0)) throw ValidationError("planner: Q must be positive definite");
    for (double r : R)
        if (!(r > 0.0)) throw ValidationError("planner: R must be positive definite");
    if (kappa < 0.0 || corridor_range <= 0.0 || separation_buffer < 0.0 || constraint_range <= 0.0)
        throw ValidationError("planner: kappa, buffer >= 0 and ranges > 0 required");
    if (!(trust_a > 0.0) || !(trust_delta > 0.0)) throw ValidationError("planner: trust limits must be > 0");
    if (!(linearization_tol > 0.0)) throw ValidationError("planner: linearization_tol must be > 0");
    if (sqp_iterations < 1 || qp_iterations < 1) throw ValidationError("planner: iteration caps must be >= 1");
    if (!(convergence_tol > 0.0)) throw ValidationError("planner: convergence_tol must be > 0");
    geometry.validate();
}

std::string planner_config_to_json(const PlannerConfig& c) {
    detail::Json j;
    j["dt"] = c.dt;
    j["horizon"] = c.horizon;
    j["branch_time"] = c.branch_time;
    j["replan_period"] = c.replan_period;
    j["a_min"] = c.a_min;
    j["a_max"] = c.a_max;
    j["delta_max"] = c.delta_max;
    j["Q"] = c.Q;
    j["R"] = c.R;
    j["kappa"] = c.kappa;
    j["corridor_range"] = c.corridor_range;
    j["separation_buffer"] = c.separation_buffer;
    j["constraint_range"] = c.constraint_range;
    j["trust_a"] = c.trust_a;
    j["trust_delta"] = c.trust_delta;
    j["linearization_tol"] = c.linearization_tol;
    j["sqp_iterations"] = c.sqp_iterations;
    j["qp_iterations"] = c.qp_iterations;
    j["convergence_tol"] = c.convergence_tol;
    j["probability_weighted_branches"] = c.probability_weighted_branches;
    detail::Json offsets = detail::Json::array();
    for (const Vec2& o : c.candidate_offsets) offsets.push_back({o.x, o.y});
    j["candidate_offsets"] = offsets;
    j["geometry"] = {{"wheelbase", c.geometry.wheelbase},
                     {"r_F", c.geometry.r_F},
                     {"r_R", c.geometry.r_R},
                     {"disc_offset", c.geometry.disc_offset}};
    return j.dump();
}

PlannerConfig planner_config_from_json(std::string_view text) {
    detail::Json j = detail::parse_json(text, "planner config");
    if (!j.is_object()) throw ValidationError("planner config: expected an object");
    PlannerConfig c;
    for (const auto& [key, v] : j.items()) {
        const std::string where = "planner." + key;
        auto number = [&](double& dst) { dst = detail::number_at(v, where); };
        auto integer = [&](int& dst) {
            if (!v.is_number_integer()) throw ValidationError(where + ": expected an integer");
            dst = v.get<int>();
        };
        auto fixed_array = [&](auto& dst) {
            if (!v.is_array() || v.size() != dst.size())
                throw ValidationError(where + ": expected " + std::to_string(dst.size()) + " numbers");
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = detail::number_at(v[i], where);
        };
        if (key == "dt") number(c.dt);
        else if (key == "horizon") integer(c.horizon);
        else if (key == "branch_time") integer(c.branch_time);
        else if (key == "replan_period") integer(c.replan_period);
        else if (key == "a_min") number(c.a_min);
        else if (key == "a_max") number(c.a_max);
        else if (key == "delta_max") number(c.delta_max);
        else if (key == "Q") fixed_array(c.Q);
        else if (key == "R") fixed_array(c.R);
        else if (key == "kappa") number(c.kappa);
        else if (key == "corridor_range") number(c.corridor_range);
        else if (key == "separation_buffer") number(c.separation_buffer);
        else if (key == "constraint_range") number(c.constraint_range);
        else if (key == "trust_a") number(c.trust_a);
        else if (key == "trust_delta") number(c.trust_delta);
        else if (key == "linearization_tol") number(c.linearization_tol);
        else if (key == "sqp_iterations") integer(c.sqp_iterations);
        else if (key == "qp_iterations") integer(c.qp_iterations);
        else if (key == "convergence_tol") number(c.convergence_tol);
        else if (key == "probability_weighted_branches") {
            if (!v.is_boolean()) throw ValidationError(where + ": expected a boolean");
            c.probability_weighted_branches = v.get<bool>();
        } else if (key == "candidate_offsets") {
            if (!v.is_array()) throw ValidationError(where + ": expected an array of [lon, lat] pairs");
            c.candidate_offsets.clear();
            for (const auto& o : v) {
                if (!o.is_array() || o.size() != 2) throw ValidationError(where + ": expected [lon, lat] pairs");
                c.candidate_offsets.push_back({detail::number_at(o[0], where), detail::number_at(o[1], where)});
            }
        } else if (key == "geometry") {
            if (!v.is_object()) throw ValidationError(where + ": expected an object");
            for (const auto& [gk, gv] : v.items()) {
                double value = detail::number_at(gv, where + "." + gk);
                if (gk == "wheelbase") c.geometry.wheelbase = value;
                else if (gk == "r_F") c.geometry.r_F = value;
                else if (gk == "r_R") c.geometry.r_R = value;
                else if (gk == "disc_offset") c.geometry.disc_offset = value;
                else throw ValidationError("planner.geometry: unknown key '" + gk + "'");
            }
        } else {
            throw ValidationError("planner: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Dynamics and geometry

EgoState dynamics_step(const EgoState& x, const Control& u, double dt, double wheelbase) {
    EgoState n;
    n.x = x.x + x.v * std::cos(x.psi) * dt;
    n.y = x.y + x.v * std::sin(x.psi) * dt;
    n.v = std::max(0.0, x.v + u.a * dt);
    n.psi = wrap_angle(x.psi + x.v / wheelbase * std::tan(u.delta) * dt);
    return n;
}

EgoState ego_state_of(const AgentHistory& agent) {
    const AgentState& s = agent.current();
    return {s.pose.x, s.pose.y, s.speed, s.pose.heading};
}

HyperplaneConstraint hyperplane(Vec2 ego_pos, Vec2 neighbor_pos, double r_i, double r_j, int timestep,
                                std::string neighbor_id) {
    Vec2 d = neighbor_pos - ego_pos;
    double len = d.norm();
    if (!(len > 1e-6))
        throw DegenerateGeometryError("hyperplane: ego and " + (neighbor_id.empty() ? std::string("neighbour") : neighbor_id) +
                                      " coincide at step " + std::to_string(timestep));
    HyperplaneConstraint h;
    h.normal = d * (1.0 / len);
    h.offset = len - (r_i + r_j);
    h.anchor = ego_pos;
    h.timestep = timestep;
    h.neighbor_id = std::move(neighbor_id);
    return h;
}

std::string_view to_string(PlanStatus status) {
    switch (status) {
        case PlanStatus::optimal: return "optimal";
        case PlanStatus::max_iter: return "max_iter";
        case PlanStatus::infeasible: return "infeasible";
        case PlanStatus::fallback: return "fallback";
    }
    return "infeasible";
}

PlanStatus parse_plan_status(std::string_view text) {
    for (auto s : {PlanStatus::optimal, PlanStatus::max_iter, PlanStatus::infeasible, PlanStatus::fallback})
        if (to_string(s) == text) return s;
    throw ValidationError("unknown plan status '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Nominal initialisation

namespace {

Control clip(const Control& u, const PlannerConfig& c) {
    return {std::clamp(u.a, c.a_min, c.a_max), std::clamp(u.delta, -c.delta_max, c.delta_max)};
}

// States and controls that follow positions p[1..T] from the current state.
Reference reference_from_positions(const EgoState& ego, const std::vector<Vec2>& p, const std::vector<double>& yaw,
                                   const std::vector<Vec2>& sigma, const PlannerConfig& c) {
    const std::size_t T = p.size();
    Reference r;
    r.sigma = sigma;
    r.states.resize(T + 1);
    r.states[0] = ego;
    // Speeds by finite differences of the predicted positions, then a centred
    // moving average: per-step prediction jitter otherwise turns into
    // alternating reference accelerations.
    std::vector<double> raw(T + 1, ego.v);
    for (std::size_t t = 1; t < T; ++t) raw[t] = (p[t] - p[t - 1]).norm() / c.dt;
    if (T >= 2) raw[T] = raw[T - 1];
    constexpr std::size_t kHalfWindow = 2;
    for (std::size_t t = 1; t <= T; ++t) {
        EgoState& s = r.states[t];
        s.x = p[t - 1].x;
        s.y = p[t - 1].y;
        s.psi = wrap_angle(yaw[t - 1]);
        std::size_t lo = t > kHalfWindow ? t - kHalfWindow : 1, hi = std::min(T, t + kHalfWindow);
        double sum = 0.0;
        for (std::size_t i = lo; i <= hi; ++i) sum += raw[i];
        s.v = sum / static_cast<double>(hi - lo + 1);
    }
    r.controls.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        const EgoState& a = r.states[t];
        const EgoState& b = r.states[t + 1];
        Control u;
        u.a = (b.v - a.v) / c.dt;
        if (a.v > 0.5) u.delta = std::atan(c.geometry.wheelbase * wrap_angle(b.psi - a.psi) / (a.v * c.dt));
        r.controls[t] = clip(u, c);
    }
    return r;
}

}  // namespace

NominalInit nominal_init(const PredictionSet& pred, const EgoState& ego, const PlannerConfig& config) {
    validate(pred);
    const std::size_t T = static_cast<std::size_t>(config.horizon);
    if (pred.horizon() < T)
        throw ValidationError("prediction horizon " + std::to_string(pred.horizon()) + " is shorter than the planning horizon " +
                              std::to_string(T));
    std::vector<Vec2> p(T);
    std::vector<double> yaw(T);
    std::vector<Vec2> sigma(T);
    std::vector<Vec2> heading_sum(T);
    for (const auto& mode : pred.modes) {
        const AgentPrediction& e = mode.agent(pred.ego_id);
        for (std::size_t t = 0; t < T; ++t) {
            p[t] = p[t] + e.mu[t] * mode.prob;
            sigma[t] = sigma[t] + e.sigma[t] * mode.prob;
            heading_sum[t] = heading_sum[t] + Vec2{std::cos(e.yaw[t]), std::sin(e.yaw[t])} * mode.prob;
        }
    }
    for (std::size_t t = 0; t < T; ++t)
        yaw[t] = heading_sum[t].norm() > 1e-12 ? std::atan2(heading_sum[t].y, heading_sum[t].x)
                                               : (t == 0 ? ego.psi : yaw[t - 1]);

    NominalInit out;
    out.reference = reference_from_positions(ego, p, yaw, sigma, config);
    for (const Vec2& off : config.candidate_offsets) {
        std::vector<Vec2> q(T);
        for (std::size_t t = 0; t < T; ++t) {
            double ramp = static_cast<double>(t + 1) / static_cast<double>(T);
            Vec2 h{std::cos(yaw[t]), std::sin(yaw[t])};
            Vec2 n{-h.y, h.x};
            q[t] = p[t] + (h * off.x + n * off.y) * ramp;
        }
        out.candidates.push_back(reference_from_positions(ego, q, yaw, sigma, config));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corridor

namespace {

// Distance along the unit axis direction `dir` from `c` to the first road-edge
// segment, or `range` when nothing is hit.
double cast(Vec2 c, Vec2 dir, const std::vector<MapPolyline>& map, double range) {
    double best = range;
    for (const auto& pl : map) {
        if (pl.semantics != PolylineSemantics::road_edge) continue;
        for (std::size_t i = 0; i + 1 < pl.points.size(); ++i) {
            Vec2 a = pl.points[i], e = pl.points[i + 1] - pl.points[i];
            double den = dir.cross(e);
            if (std::abs(den) < 1e-12) continue;  // parallel
            Vec2 w = a - c;
            double s = w.cross(e) / den;    // along the ray
            double u = w.cross(dir) / den;  // along the segment
            if (s >= 0.0 && u >= 0.0 && u <= 1.0) best = std::min(best, s);
        }
    }
    return best;
}

// Where the rays for a reference disc start. A reference that has drifted
// across a road edge (the predicted ego trajectory extrapolates any lateral
// motion) would otherwise get a box on the far side of that edge; the origin
// is pulled back along the segment from the nearest lane centre to just
// inside the first edge crossed.
Vec2 ray_origin(Vec2 c, const std::vector<MapPolyline>& map) {
    std::optional<Vec2> nearest;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& pl : map) {
        if (pl.semantics != PolylineSemantics::lane_center) continue;
        for (std::size_t i = 0; i + 1 < pl.points.size(); ++i) {
            Vec2 a = pl.points[i], e = pl.points[i + 1] - pl.points[i];
            double len2 = e.dot(e);
            double u = len2 > 0.0 ? std::clamp((c - a).dot(e) / len2, 0.0, 1.0) : 0.0;
            Vec2 q = a + e * u;
            double d = (c - q).norm();
            if (d < best) {
                best = d;
                nearest = q;
            }
        }
    }
    if (!nearest || best < 1e-9) return c;
    Vec2 dir = (c - *nearest) * (1.0 / best);
    double hit = cast(*nearest, dir, map, best);
    if (hit >= best) return c;
    constexpr double kInside = 1e-3;
    return *nearest + dir * std::max(0.0, hit - kInside);
}

}  // namespace

Corridor build_corridor(const Reference& reference, const std::vector<MapPolyline>& map, const PlannerConfig& config) {
    const auto& g = config.geometry;
    const auto radii = g.radii();
    Corridor out;
    for (std::size_t t = 1; t < reference.states.size(); ++t) {
        const EgoState& s = reference.states[t];
        auto discs = g.discs(s.position(), s.psi);
        Vec2 sigma = t - 1 < reference.sigma.size() ? reference.sigma[t - 1] : Vec2{};
        Box box;
        for (int d = 0; d < 2; ++d) {
            Vec2 c = ray_origin(discs[static_cast<std::size_t>(d)], map);
            double r = radii[static_cast<std::size_t>(d)];
            double px = cast(c, {1, 0}, map, config.corridor_range) - r;
            double nx = cast(c, {-1, 0}, map, config.corridor_range) - r;
            double py = cast(c, {0, 1}, map, config.corridor_range) - r;
            double ny = cast(c, {0, -1}, map, config.corridor_range) - r;
            // A reference disc closer than r to an edge gives a box that excludes
            // it; the box is still usable as long as it is not empty.
            std::size_t ix = static_cast<std::size_t>(2 * d), iy = ix + 1;
            box.lo[ix] = c.x - nx - config.kappa * sigma.x;
            box.hi[ix] = c.x + px + config.kappa * sigma.x;
            box.lo[iy] = c.y - ny - config.kappa * sigma.y;
            box.hi[iy] = c.y + py + config.kappa * sigma.y;
            if (box.lo[ix] > box.hi[ix] || box.lo[iy] > box.hi[iy])
                throw ValidationError("corridor: no room for the " + std::string(d == 0 ? "front" : "rear") +
                                      " disc at step " + std::to_string(t) + " between the road edges");
        }
        out.boxes.push_back(box);
    }
    return out;
}

std::vector<std::vector<std::vector<Obstacle>>> obstacles_of(const PredictionSet& pred, const VehicleGeometry& geometry,
                                                             int horizon) {
    const std::size_t T = static_cast<std::size_t>(horizon);
    if (pred.horizon() < T) throw ValidationError("prediction is shorter than the planning horizon");
    std::vector<std::vector<std::vector<Obstacle>>> out(pred.modes.size(), std::vector<std::vector<Obstacle>>(T));
    for (std::size_t k = 0; k < pred.modes.size(); ++k)
        for (const auto& a : pred.modes[k].agents) {
            if (a.id == pred.ego_id) continue;
            for (std::size_t t = 0; t < T; ++t)
                out[k][t].push_back({a.id, static_cast<int>(k), geometry.discs(a.mu[t], a.yaw[t]), geometry.radii()});
        }
    return out;
}

// ---------------------------------------------------------------------------
// Sequential QP over a tree of controls

namespace {

struct Node {
    int parent = -1;  // -1 is the fixed start state
    int t = 0;        // time step of this state, >= 1
    int control = 0;  // control applied at the parent
    double weight = 1.0;
    std::vector<Obstacle> obstacles;
    std::optional<Box> box;
};

struct Problem {
    EgoState start;
    std::vector<Node> nodes;  // parents precede children
    std::vector<EgoState> x_ref;  // per node
    std::vector<Control> u_ref;   // per control
    std::vector<double> u_weight;
    std::vector<HyperplaneConstraint> fixed;
    std::size_t root_nodes = 0;  // nodes [0, root_nodes) form the root
    const PlannerConfig* cfg = nullptr;

    std::size_t num_controls() const { return u_ref.size(); }
};

struct Violation {
    double total = 0.0;
    double worst = 0.0;
    double root_worst = 0.0;
    std::string first;
};

// Row bookkeeping for reporting the constraint set that blocked a QP.
struct RowTag {
    enum Kind { bound, halfspace, fixed, corridor } kind = bound;
    int t = 0;
    std::string id;
    int mode = -1;
};

std::string describe(const RowTag& tag) {
    switch (tag.kind) {
        case RowTag::bound: return "control bounds at step " + std::to_string(tag.t);
        case RowTag::halfspace:
            return "separation from " + tag.id + " (mode " + std::to_string(tag.mode) + ") at step " + std::to_string(tag.t);
        case RowTag::fixed: return "halfspace " + tag.id + " at step " + std::to_string(tag.t);
        case RowTag::corridor: return "corridor at step " + std::to_string(tag.t);
    }
    return "unknown";
}

std::vector<EgoState> rollout(const Problem& pb, const std::vector<Control>& u) {
    std::vector<EgoState> z(pb.nodes.size());
    const double L = pb.cfg->geometry.wheelbase;
    for (std::size_t i = 0; i < pb.nodes.size(); ++i) {
        const Node& n = pb.nodes[i];
        const EgoState& from = n.parent < 0 ? pb.start : z[static_cast<std::size_t>(n.parent)];
        z[i] = dynamics_step(from, u[static_cast<std::size_t>(n.control)], pb.cfg->dt, L);
    }
    return z;
}

std::array<double, 4> state_error(const EgoState& z, const EgoState& r) {
    return {z.x - r.x, z.y - r.y, z.v - r.v, wrap_angle(z.psi - r.psi)};
}

double cost(const Problem& pb, const std::vector<EgoState>& z, const std::vector<Control>& u) {
    const auto& Q = pb.cfg->Q;
    const auto& R = pb.cfg->R;
    double c = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        auto e = state_error(z[i], pb.x_ref[i]);
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += Q[static_cast<std::size_t>(k)] * e[static_cast<std::size_t>(k)] * e[static_cast<std::size_t>(k)];
        c += pb.nodes[i].weight * s;
    }
    for (std::size_t j = 0; j < u.size(); ++j) {
        double da = u[j].a - pb.u_ref[j].a, dd = u[j].delta - pb.u_ref[j].delta;
        c += pb.u_weight[j] * (R[0] * da * da + R[1] * dd * dd);
    }
    return c;
}

Violation violation(const Problem& pb, const std::vector<EgoState>& z) {
    const auto& g = pb.cfg->geometry;
    const auto radii = g.radii();
    Violation v;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const Node& n = pb.nodes[i];
        auto note = [&](double amount, auto&& what) {
            if (amount <= 0.0) return;
            v.total += amount;
            v.worst = std::max(v.worst, amount);
            if (i < pb.root_nodes) v.root_worst = std::max(v.root_worst, amount);
            if (v.first.empty()) v.first = what();
        };
        auto discs = g.discs(z[i].position(), z[i].psi);
        for (const auto& ob : n.obstacles)
            for (std::size_t e = 0; e < 2; ++e)
                for (std::size_t o = 0; o < 2; ++o) {
                    double gap = (ob.discs[o] - discs[e]).norm() - (radii[e] + ob.radii[o]);
                    note(-gap, [&] {
                        return "separation from " + ob.id + " (mode " + std::to_string(ob.mode) + ") at step " +
                               std::to_string(n.t);
                    });
                }
        for (const auto& h : pb.fixed)
            if (h.timestep == n.t)
                for (std::size_t e = 0; e < 2; ++e)
                    note(h.violation(discs[e]), [&] { return "halfspace " + h.neighbor_id + " at step " + std::to_string(n.t); });
        if (n.box)
            for (std::size_t e = 0; e < 2; ++e) {
                double cx = discs[e].x, cy = discs[e].y;
                double over = std::max({n.box->lo[2 * e] - cx, cx - n.box->hi[2 * e], n.box->lo[2 * e + 1] - cy,
                                        cy - n.box->hi[2 * e + 1]});
                note(over, [&] { return "corridor at step " + std::to_string(n.t); });
            }
    }
    return v;
}

struct Linearization {
    MatrixXd S;  // (4 * nodes) x (2 * controls), state sensitivity to control increments
};

Linearization linearize(const Problem& pb, const std::vector<EgoState>& z, const std::vector<Control>& u) {
    const std::size_t N = pb.nodes.size();
    const Eigen::Index n = static_cast<Eigen::Index>(2 * pb.num_controls());
    const double dt = pb.cfg->dt, L = pb.cfg->geometry.wheelbase;
    Linearization lin;
    lin.S = MatrixXd::Zero(static_cast<Eigen::Index>(4 * N), n);
    for (std::size_t i = 0; i < N; ++i) {
        const Node& nd = pb.nodes[i];
        const EgoState& x = nd.parent < 0 ? pb.start : z[static_cast<std::size_t>(nd.parent)];
        const Control& c = u[static_cast<std::size_t>(nd.control)];
        const double moving = x.v + c.a * dt > 0.0 ? 1.0 : 0.0;
        Eigen::Matrix4d A;
        A << 1, 0, std::cos(x.psi) * dt, -x.v * std::sin(x.psi) * dt,
             0, 1, std::sin(x.psi) * dt, x.v * std::cos(x.psi) * dt,
             0, 0, moving, 0,
             0, 0, std::tan(c.delta) * dt / L, 1;
        const double cd = std::cos(c.delta);
        Eigen::Matrix<double, 4, 2> B;
        B << 0, 0,
             0, 0,
             moving * dt, 0,
             0, x.v / (L * cd * cd) * dt;
        auto rows = lin.S.middleRows(static_cast<Eigen::Index>(4 * i), 4);
        if (nd.parent >= 0) rows = A * lin.S.middleRows(static_cast<Eigen::Index>(4 * nd.parent), 4);
        rows.middleCols(static_cast<Eigen::Index>(2 * nd.control), 2) += B;
    }
    return lin;
}

// d(disc centre)/d(state) for a disc at signed offset s along the body axis.
Eigen::Matrix<double, 2, 4> disc_jacobian(const EgoState& z, double s) {
    Eigen::Matrix<double, 2, 4> J;
    J << 1, 0, 0, -s * std::sin(z.psi),
         0, 1, 0, s * std::cos(z.psi);
    return J;
}

struct QpBuild {
    MatrixXd H;
    VectorXd g;
    MatrixXd A;
    VectorXd b;
    std::vector<RowTag> tags;
    Eigen::Index n_step = 0;  // leading variables are control increments, then theta if present
};

constexpr double kRelaxPenalty = 1e6;
constexpr double kRelaxCurvature = 1.0;

QpBuild build_qp(const Problem& pb, const std::vector<EgoState>& z, const std::vector<Control>& u,
                 const Linearization& lin) {
    const PlannerConfig& c = *pb.cfg;
    const auto& geom = c.geometry;
    const auto radii = geom.radii();
    const double s_off = geom.disc_offset * geom.wheelbase;
    const std::size_t N = pb.nodes.size();
    const std::size_t nc = pb.num_controls();
    const Eigen::Index n = static_cast<Eigen::Index>(2 * nc);

    QpBuild q;
    q.H = MatrixXd::Zero(n, n);
    q.g = VectorXd::Zero(n);
    for (std::size_t i = 0; i < N; ++i) {
        auto Si = lin.S.middleRows(static_cast<Eigen::Index>(4 * i), 4);
        auto e = state_error(z[i], pb.x_ref[i]);
        Eigen::Vector4d qd(c.Q[0], c.Q[1], c.Q[2], c.Q[3]);
        Eigen::Vector4d ev(e[0], e[1], e[2], e[3]);
        const double w = 2.0 * pb.nodes[i].weight;
        q.H.noalias() += w * Si.transpose() * qd.asDiagonal() * Si;
        q.g.noalias() += w * Si.transpose() * (qd.asDiagonal() * ev);
    }
    for (std::size_t j = 0; j < nc; ++j) {
        const double w = 2.0 * pb.u_weight[j];
        const Eigen::Index a = static_cast<Eigen::Index>(2 * j);
        q.H(a, a) += w * c.R[0];
        q.H(a + 1, a + 1) += w * c.R[1];
        q.g[a] += w * c.R[0] * (u[j].a - pb.u_ref[j].a);
        q.g[a + 1] += w * c.R[1] * (u[j].delta - pb.u_ref[j].delta);
    }

    std::vector<VectorXd> rows;
    std::vector<double> rhs;
    VectorXd reach(n);  // trust-region half-widths per variable
    for (Eigen::Index j = 0; j < n; j += 2) {
        reach[j] = c.trust_a;
        reach[j + 1] = c.trust_delta;
    }
    auto add_row = [&](VectorXd row, double bound, RowTag tag) {
        // A row that no step inside the trust region can reach is dropped.
        if (tag.kind != RowTag::bound && bound > row.cwiseAbs().dot(reach)) return;
        rows.push_back(std::move(row));
        rhs.push_back(bound);
        q.tags.push_back(std::move(tag));
    };
    // Control bounds intersected with the trust region.
    for (std::size_t j = 0; j < nc; ++j) {
        const Eigen::Index a = static_cast<Eigen::Index>(2 * j);
        const int t = 0;
        auto unit = [&](Eigen::Index k, double sign) {
            VectorXd r = VectorXd::Zero(n);
            r[k] = sign;
            return r;
        };
        add_row(unit(a, 1.0), std::min(c.a_max - u[j].a, c.trust_a), {RowTag::bound, t, {}, -1});
        add_row(unit(a, -1.0), std::min(u[j].a - c.a_min, c.trust_a), {RowTag::bound, t, {}, -1});
        add_row(unit(a + 1, 1.0), std::min(c.delta_max - u[j].delta, c.trust_delta), {RowTag::bound, t, {}, -1});
        add_row(unit(a + 1, -1.0), std::min(u[j].delta + c.delta_max, c.trust_delta), {RowTag::bound, t, {}, -1});
    }
    for (std::size_t i = 0; i < N; ++i) {
        const Node& nd = pb.nodes[i];
        auto Si = lin.S.middleRows(static_cast<Eigen::Index>(4 * i), 4);
        auto discs = geom.discs(z[i].position(), z[i].psi);
        for (std::size_t e = 0; e < 2; ++e) {
            const double s = e == 0 ? s_off : -s_off;
            MatrixXd G = disc_jacobian(z[i], s) * Si;  // 2 x n
            for (const auto& ob : nd.obstacles)
                for (std::size_t o = 0; o < 2; ++o) {
                    if ((ob.discs[o] - discs[e]).norm() > c.constraint_range) continue;
                    HyperplaneConstraint h;
                    try {
                        h = hyperplane(discs[e], ob.discs[o], radii[e], ob.radii[o], nd.t, ob.id);
                    } catch (const DegenerateGeometryError&) {
                        continue;  // coincident centres: left to the exact check, which rejects the iterate
                    }
                    VectorXd row = G.transpose() * Eigen::Vector2d(h.normal.x, h.normal.y);
                    add_row(std::move(row), h.offset - c.separation_buffer, {RowTag::halfspace, nd.t, ob.id, ob.mode});
                }
            for (const auto& h : pb.fixed) {
                if (h.timestep != nd.t) continue;
                VectorXd row = G.transpose() * Eigen::Vector2d(h.normal.x, h.normal.y);
                add_row(std::move(row), -h.violation(discs[e]), {RowTag::fixed, nd.t, h.neighbor_id, -1});
            }
            if (nd.box) {
                const Box& bx = *nd.box;
                const double cx = discs[e].x, cy = discs[e].y;
                add_row(G.row(0).transpose(), bx.hi[2 * e] - cx, {RowTag::corridor, nd.t, {}, -1});
                add_row(-G.row(0).transpose(), cx - bx.lo[2 * e], {RowTag::corridor, nd.t, {}, -1});
                add_row(G.row(1).transpose(), bx.hi[2 * e + 1] - cy, {RowTag::corridor, nd.t, {}, -1});
                add_row(-G.row(1).transpose(), cy - bx.lo[2 * e + 1], {RowTag::corridor, nd.t, {}, -1});
            }
        }
    }
    // Rows the current iterate already violates are relaxed by one shared
    // variable theta in [0, 1]: a x + b theta <= b, i.e. the violation may shrink
    // by the fraction theta only. theta = 1 with a zero step is always feasible,
    // and a heavy penalty keeps theta at 0 whenever the rows can be met.
    std::vector<std::size_t> elastic;
    for (std::size_t r = 0; r < rows.size(); ++r)
        if (q.tags[r].kind != RowTag::bound && rhs[r] < 0.0) elastic.push_back(r);
    const Eigen::Index ne = elastic.empty() ? 0 : 1;
    const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
    q.n_step = n;
    if (ne) {
        q.H.conservativeResize(n + 1, n + 1);
        q.H.row(n).setZero();
        q.H.col(n).setZero();
        q.H(n, n) = kRelaxCurvature;
        q.g.conservativeResize(n + 1);
        q.g[n] = kRelaxPenalty;
    }
    q.A = MatrixXd::Zero(m + 2 * ne, n + ne);
    q.b.resize(m + 2 * ne);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        q.A.row(static_cast<Eigen::Index>(r)).head(n) = rows[r].transpose();
        q.b[static_cast<Eigen::Index>(r)] = rhs[r];
    }
    if (ne) {
        for (std::size_t r : elastic) q.A(static_cast<Eigen::Index>(r), n) = rhs[r];
        q.A(m, n) = -1.0;  // theta >= 0
        q.b[m] = 0.0;
        q.A(m + 1, n) = 1.0;  // theta <= 1
        q.b[m + 1] = 1.0;
        q.tags.push_back({RowTag::bound, 0, {}, -1});
        q.tags.push_back({RowTag::bound, 0, {}, -1});
    }
    return q;
}

struct SqpResult {
    bool feasible = false;
    bool root_feasible = false;
    bool converged = false;
    std::vector<EgoState> z;
    std::vector<Control> u;
    double cost = 0.0;
    SolveReport report;
};

SqpResult run_sqp(const Problem& pb, std::vector<Control> u) {
    const PlannerConfig& c = *pb.cfg;
    for (auto& ui : u) ui = clip(ui, c);
    SqpResult res;
    std::vector<EgoState> z = rollout(pb, u);
    double J = cost(pb, z, u);
    Violation viol = violation(pb, z);
    bool feasible = viol.worst <= 1e-9;
    SolveReport& rep = res.report;
    if (feasible) rep.cost_history.push_back(J);
    const bool started_infeasible = !feasible;

    for (int it = 0; it < c.sqp_iterations; ++it) {
        ++rep.sqp_iterations;
        Linearization lin = linearize(pb, z, u);
        QpBuild qp = build_qp(pb, z, u, lin);
        QpResult sol = solve_dense_qp(qp.H, qp.g, qp.A, qp.b, c.qp_iterations);
        rep.qp_iterations += sol.iterations;
        rep.complementarity = complementarity_residual(sol, qp.A, qp.b);
        rep.stationarity = stationarity_residual(sol, qp.H, qp.g, qp.A);
        if (sol.status == QpStatus::infeasible) {
            if (!feasible)
                rep.violated = sol.blocking_row >= 0 ? describe(qp.tags[static_cast<std::size_t>(sol.blocking_row)])
                                                     : viol.first;
            break;
        }

        // Backtracking on the exact rollout. Once feasible, an iterate must stay
        // feasible and may not raise the cost; before that it must reduce the
        // total violation.
        bool accepted = false;
        double moved = 0.0;
        for (double alpha = 1.0; alpha >= 1.0 / 256.0; alpha *= 0.5) {
            std::vector<Control> u_new(u.size());
            for (std::size_t j = 0; j < u.size(); ++j)
                u_new[j] = clip({u[j].a + alpha * sol.x[static_cast<Eigen::Index>(2 * j)],
                                 u[j].delta + alpha * sol.x[static_cast<Eigen::Index>(2 * j + 1)]},
                                c);
            std::vector<EgoState> z_new = rollout(pb, u_new);
            VectorXd dz = lin.S * (alpha * sol.x.head(qp.n_step));
            double lin_err = 0.0, step = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) {
                const Eigen::Index r = static_cast<Eigen::Index>(4 * i);
                Vec2 predicted{z[i].x + dz[r], z[i].y + dz[r + 1]};
                lin_err = std::max(lin_err, (z_new[i].position() - predicted).norm());
                step = std::max(step, (z_new[i].position() - z[i].position()).norm());
            }
            if (lin_err > c.linearization_tol) continue;
            double J_new = cost(pb, z_new, u_new);
            Violation v_new = violation(pb, z_new);
            bool f_new = v_new.worst <= 1e-9;
            bool ok = feasible ? (f_new && J_new <= J) : (f_new || v_new.total < viol.total * (1.0 - 1e-4 * alpha));
            if (!ok) continue;
            rep.linearization_error = std::max(rep.linearization_error, lin_err);
            if (!feasible) ++rep.restoration_iterations;
            if (!feasible && f_new) rep.restored = started_infeasible;
            u = std::move(u_new);
            z = std::move(z_new);
            J = J_new;
            viol = v_new;
            feasible = f_new;
            if (feasible) rep.cost_history.push_back(J);
            moved = step;
            accepted = true;
            break;
        }
        if (!accepted) {
            // No step improves the exact problem within the linearisation tolerance.
            res.converged = feasible;
            break;
        }
        if (feasible && moved < c.convergence_tol) {
            res.converged = true;
            break;
        }
    }
    if (!feasible && rep.violated.empty()) rep.violated = viol.first;
    res.feasible = feasible;
    res.root_feasible = viol.root_worst <= 1e-9;
    res.z = std::move(z);
    res.u = std::move(u);
    res.cost = J;

    // Margins on the returned trajectory, for the report.
    const auto radii = c.geometry.radii();
    double margin = std::numeric_limits<double>::infinity();
    double box_over = 0.0;
    for (std::size_t i = 0; i < res.z.size(); ++i) {
        auto discs = c.geometry.discs(res.z[i].position(), res.z[i].psi);
        for (const auto& ob : pb.nodes[i].obstacles)
            for (std::size_t e = 0; e < 2; ++e)
                for (std::size_t o = 0; o < 2; ++o)
                    margin = std::min(margin, (ob.discs[o] - discs[e]).norm() - (radii[e] + ob.radii[o]));
        if (const auto& bx = pb.nodes[i].box)
            for (std::size_t e = 0; e < 2; ++e)
                box_over = std::max({box_over, bx->lo[2 * e] - discs[e].x, discs[e].x - bx->hi[2 * e],
                                     bx->lo[2 * e + 1] - discs[e].y, discs[e].y - bx->hi[2 * e + 1]});
    }
    rep.min_separation_margin = std::isfinite(margin) ? margin : 0.0;
    rep.corridor_violation = box_over;
    return res;
}

PlanStatus status_of(const SqpResult& r) {
    if (!r.feasible) return PlanStatus::infeasible;
    return r.converged ? PlanStatus::optimal : PlanStatus::max_iter;
}

}  // namespace

QpSolution solve_qp(const EgoState& start, const Reference& reference, const QpConstraints& constraints,
                    const PlannerConfig& config, const std::vector<Control>* initial) {
    config.validate();
    const std::size_t T = reference.controls.size();
    if (T == 0 || reference.states.size() != T + 1) throw ValidationError("solve_qp: reference needs T + 1 states and T controls");
    if (!constraints.obstacles.empty() && constraints.obstacles.size() != T)
        throw ValidationError("solve_qp: obstacles must cover every step");
    if (constraints.corridor && constraints.corridor->boxes.size() != T)
        throw ValidationError("solve_qp: corridor must cover every step");
    if (initial && initial->size() != T) throw ValidationError("solve_qp: initial controls must cover every step");
    if (constraints.corridor)
        for (const Box& b : constraints.corridor->boxes)
            for (std::size_t k = 0; k < 4; ++k)
                if (!(b.lo[k] <= b.hi[k])) throw ValidationError("solve_qp: corridor box with lo > hi");

    Problem pb;
    pb.cfg = &config;
    pb.start = start;
    pb.fixed = constraints.hyperplanes;
    for (std::size_t t = 1; t <= T; ++t) {
        Node n;
        n.parent = static_cast<int>(t) - 2;
        n.t = static_cast<int>(t);
        n.control = static_cast<int>(t - 1);
        if (!constraints.obstacles.empty()) n.obstacles = constraints.obstacles[t - 1];
        if (constraints.corridor) n.box = constraints.corridor->boxes[t - 1];
        pb.nodes.push_back(std::move(n));
        pb.x_ref.push_back(reference.states[t]);
    }
    pb.u_ref = reference.controls;
    pb.root_nodes = pb.nodes.size();
    pb.u_weight.assign(T, 1.0);

    SqpResult r = run_sqp(pb, initial ? *initial : reference.controls);
    QpSolution out;
    out.status = status_of(r);
    out.states.push_back(start);
    out.states.insert(out.states.end(), r.z.begin(), r.z.end());
    out.controls = r.u;
    out.cost = r.cost;
    out.report = r.report;
    return out;
}

// ---------------------------------------------------------------------------
// Trajectory tree

int TrajectoryTree::horizon() const {
    int T = static_cast<int>(root_controls.size());
    if (!branches.empty()) T += static_cast<int>(branches.front().controls.size());
    return T;
}

std::vector<EgoState> TrajectoryTree::path(std::size_t k) const {
    std::vector<EgoState> p = root_states;
    if (k < branches.size()) p.insert(p.end(), branches[k].states.begin() + 1, branches[k].states.end());
    return p;
}

std::vector<Control> TrajectoryTree::controls(std::size_t k) const {
    std::vector<Control> u = root_controls;
    if (k < branches.size()) u.insert(u.end(), branches[k].controls.begin(), branches[k].controls.end());
    return u;
}

namespace {

Problem tree_problem(const PredictionSet& pred, const EgoState& ego, const Reference& ref,
                     const std::optional<Corridor>& corridor, const PlannerConfig& c) {
    const int T = c.horizon, Tb = c.branch_time;
    const auto obstacles = obstacles_of(pred, c.geometry, T);
    const std::size_t K = pred.modes.size();
    Problem pb;
    pb.cfg = &c;
    pb.start = ego;
    auto box_at = [&](int t) -> std::optional<Box> {
        if (!corridor) return std::nullopt;
        return corridor->boxes[static_cast<std::size_t>(t - 1)];
    };
    for (int t = 1; t <= Tb; ++t) {
        Node n;
        n.parent = t - 2;
        n.t = t;
        n.control = t - 1;
        for (std::size_t k = 0; k < K; ++k) {
            const auto& obs = obstacles[k][static_cast<std::size_t>(t - 1)];
            n.obstacles.insert(n.obstacles.end(), obs.begin(), obs.end());
        }
        n.box = box_at(t);
        pb.nodes.push_back(std::move(n));
        pb.x_ref.push_back(ref.states[static_cast<std::size_t>(t)]);
    }
    pb.root_nodes = pb.nodes.size();
    for (int t = 0; t < Tb; ++t) {
        pb.u_ref.push_back(ref.controls[static_cast<std::size_t>(t)]);
        pb.u_weight.push_back(1.0);
    }
    for (std::size_t k = 0; k < K; ++k) {
        const double w = c.probability_weighted_branches ? pred.modes[k].prob : 1.0;
        for (int t = Tb + 1; t <= T; ++t) {
            Node n;
            n.parent = t == Tb + 1 ? Tb - 1 : static_cast<int>(pb.nodes.size()) - 1;
            n.t = t;
            n.control = static_cast<int>(pb.u_ref.size());
            n.weight = w;
            n.obstacles = obstacles[k][static_cast<std::size_t>(t - 1)];
            n.box = box_at(t);
            pb.nodes.push_back(std::move(n));
            pb.x_ref.push_back(ref.states[static_cast<std::size_t>(t)]);
            pb.u_ref.push_back(ref.controls[static_cast<std::size_t>(t - 1)]);
            pb.u_weight.push_back(w);
        }
    }
    return pb;
}

// Tree control vector (root then branches) from per-branch full-horizon sequences.
std::vector<Control> tree_controls(const std::vector<std::vector<Control>>& per_branch, const PlannerConfig& c) {
    const std::size_t Tb = static_cast<std::size_t>(c.branch_time), T = static_cast<std::size_t>(c.horizon);
    std::vector<Control> u(per_branch.front().begin(), per_branch.front().begin() + static_cast<std::ptrdiff_t>(Tb));
    for (const auto& seq : per_branch) u.insert(u.end(), seq.begin() + static_cast<std::ptrdiff_t>(Tb), seq.begin() + static_cast<std::ptrdiff_t>(T));
    return u;
}

TrajectoryTree tree_from(const PredictionSet& pred, const EgoState& ego, const SqpResult& r, const PlannerConfig& c) {
    const std::size_t Tb = static_cast<std::size_t>(c.branch_time), T = static_cast<std::size_t>(c.horizon);
    const std::size_t per = T - Tb;
    TrajectoryTree tree;
    tree.status = status_of(r);
    tree.branch_time = c.branch_time;
    tree.dt = c.dt;
    tree.t0 = pred.t0;
    tree.root_states.push_back(ego);
    tree.root_states.insert(tree.root_states.end(), r.z.begin(), r.z.begin() + static_cast<std::ptrdiff_t>(Tb));
    tree.root_controls.assign(r.u.begin(), r.u.begin() + static_cast<std::ptrdiff_t>(Tb));
    for (std::size_t k = 0; k < pred.modes.size(); ++k) {
        Branch b;
        b.mode = static_cast<int>(k);
        b.prob = pred.modes[k].prob;
        b.states.push_back(tree.root_states.back());
        auto zs = r.z.begin() + static_cast<std::ptrdiff_t>(Tb + k * per);
        b.states.insert(b.states.end(), zs, zs + static_cast<std::ptrdiff_t>(per));
        auto us = r.u.begin() + static_cast<std::ptrdiff_t>(Tb + k * per);
        b.controls.assign(us, us + static_cast<std::ptrdiff_t>(per));
        tree.branches.push_back(std::move(b));
    }
    tree.cost = r.cost;
    tree.report = r.report;
    return tree;
}

constexpr int kBrakingStart = -2;

TrajectoryTree plan_from_starts(const PredictionSet& pred, const EgoState& ego, const std::vector<MapPolyline>& map,
                                const PlannerConfig& config, const std::vector<Control>* warm) {
    config.validate();
    validate(pred);
    NominalInit init = nominal_init(pred, ego, config);
    std::optional<Corridor> corridor;
    try {
        corridor = build_corridor(init.reference, map, config);
    } catch (const ValidationError& e) {
        TrajectoryTree t = emergency_tree(pred, ego, config);
        t.report.violated = e.what();
        return t;
    }
    Problem pb = tree_problem(pred, ego, init.reference, corridor, config);
    const std::size_t K = pred.modes.size();

    std::vector<std::pair<int, std::vector<Control>>> starts;
    if (warm) starts.push_back({-1, *warm});
    starts.push_back({-1, tree_controls(std::vector<std::vector<Control>>(K, init.reference.controls), config)});
    for (std::size_t m = 0; m < init.candidates.size(); ++m)
        starts.push_back({static_cast<int>(m),
                          tree_controls(std::vector<std::vector<Control>>(K, init.candidates[m].controls), config)});
    // Full braking last: often feasible when every offset start is not.
    starts.push_back({kBrakingStart, std::vector<Control>(pb.num_controls(), Control{config.a_min, 0.0})});

    // The first start that yields a feasible tree wins. A tree whose root is
    // feasible but with a violated branch is kept as the infeasible answer: its
    // root is still safe against every mode. Without a feasible root, brake.
    std::optional<TrajectoryTree> root_only;
    std::string first_violation;
    for (auto& [candidate, u0] : starts) {
        SqpResult r = run_sqp(pb, u0);
        if (first_violation.empty()) first_violation = r.report.violated;
        if (!r.root_feasible) continue;
        TrajectoryTree tree = tree_from(pred, ego, r, config);
        tree.report.candidate = candidate;
        if (r.feasible) return tree;
        if (!root_only) root_only = std::move(tree);
    }
    if (root_only) return *root_only;
    TrajectoryTree t = emergency_tree(pred, ego, config);
    t.report.violated = first_violation;
    return t;
}

}  // namespace

TrajectoryTree plan_tree(const PredictionSet& pred, const EgoState& ego, const std::vector<MapPolyline>& map,
                         const PlannerConfig& config) {
    return plan_from_starts(pred, ego, map, config, nullptr);
}

TrajectoryTree replan_step(const TrajectoryTree& previous, int elapsed, const PredictionSet& pred, const EgoState& ego,
                           const std::vector<MapPolyline>& map, const PlannerConfig& config) {
    if (elapsed < 0) throw ValidationError("replan_step: elapsed must be >= 0");
    if (previous.root_controls.empty()) return plan_tree(pred, ego, map, config);
    const std::size_t T = static_cast<std::size_t>(config.horizon);
    std::size_t best = 0;
    for (std::size_t k = 1; k < previous.branches.size(); ++k)
        if (previous.branches[k].prob > previous.branches[best].prob) best = k;

    // Each new branch continues the previous branch of the same index (or the
    // most probable one), shifted by the elapsed steps; the tail repeats the last control.
    std::vector<std::vector<Control>> per_branch;
    for (std::size_t k = 0; k < pred.modes.size(); ++k) {
        std::vector<Control> prev = previous.controls(k < previous.branches.size() ? k : best);
        std::vector<Control> seq(T);
        for (std::size_t t = 0; t < T; ++t) {
            std::size_t src = std::min(t + static_cast<std::size_t>(elapsed), prev.size() - 1);
            seq[t] = prev[src];
        }
        per_branch.push_back(std::move(seq));
    }
    // The root follows the most probable previous branch.
    std::vector<Control> prev_best = previous.controls(best);
    for (std::size_t t = 0; t < static_cast<std::size_t>(config.branch_time); ++t)
        per_branch.front()[t] = prev_best[std::min(t + static_cast<std::size_t>(elapsed), prev_best.size() - 1)];
    std::vector<Control> warm = tree_controls(per_branch, config);
    return plan_from_starts(pred, ego, map, config, &warm);
}

TrajectoryTree emergency_tree(const PredictionSet& pred, const EgoState& ego, const PlannerConfig& config) {
    const int T = config.horizon, Tb = config.branch_time;
    const Control brake{config.a_min, 0.0};
    TrajectoryTree tree;
    tree.status = PlanStatus::fallback;
    tree.branch_time = Tb;
    tree.dt = config.dt;
    tree.t0 = pred.t0;
    tree.root_states.push_back(ego);
    for (int t = 0; t < Tb; ++t) {
        tree.root_controls.push_back(brake);
        tree.root_states.push_back(dynamics_step(tree.root_states.back(), brake, config.dt, config.geometry.wheelbase));
    }
    for (std::size_t k = 0; k < std::max<std::size_t>(pred.modes.size(), 1); ++k) {
        Branch b;
        b.mode = static_cast<int>(k);
        b.prob = k < pred.modes.size() ? pred.modes[k].prob : 1.0;
        b.states.push_back(tree.root_states.back());
        for (int t = Tb; t < T; ++t) {
            b.controls.push_back(brake);
            b.states.push_back(dynamics_step(b.states.back(), brake, config.dt, config.geometry.wheelbase));
        }
        tree.branches.push_back(std::move(b));
    }
    return tree;
}

double tree_separation_margin(const TrajectoryTree& tree, const PredictionSet& pred, const VehicleGeometry& geometry) {
    const auto radii = geometry.radii();
    double margin = std::numeric_limits<double>::infinity();
    auto check = [&](const EgoState& s, std::size_t t, std::size_t k) {
        if (t == 0 || t > pred.horizon()) return;
        auto ego = geometry.discs(s.position(), s.psi);
        for (const auto& a : pred.modes[k].agents) {
            if (a.id == pred.ego_id) continue;
            auto other = geometry.discs(a.mu[t - 1], a.yaw[t - 1]);
            for (std::size_t e = 0; e < 2; ++e)
                for (std::size_t o = 0; o < 2; ++o)
                    margin = std::min(margin, (other[o] - ego[e]).norm() - (radii[e] + radii[o]));
        }
    };
    for (std::size_t t = 1; t < tree.root_states.size(); ++t)
        for (std::size_t k = 0; k < pred.modes.size(); ++k) check(tree.root_states[t], t, k);
    const std::size_t Tb = static_cast<std::size_t>(tree.branch_time);
    for (std::size_t k = 0; k < tree.branches.size() && k < pred.modes.size(); ++k)
        for (std::size_t i = 1; i < tree.branches[k].states.size(); ++i) check(tree.branches[k].states[i], Tb + i, k);
    return margin;
}

// ---------------------------------------------------------------------------
// Plan document

namespace {

detail::Json states_json(const std::vector<EgoState>& s) {
    detail::Json a = detail::Json::array();
    for (const auto& x : s) a.push_back({x.x, x.y, x.v, x.psi});
    return a;
}

detail::Json controls_json(const std::vector<Control>& u) {
    detail::Json a = detail::Json::array();
    for (const auto& c : u) a.push_back({c.a, c.delta});
    return a;
}

std::vector<EgoState> states_from(const detail::Json& j, const std::string& where) {
    if (!j.is_array()) throw ValidationError(where + ": expected an array");
    std::vector<EgoState> out;
    for (const auto& r : j) {
        if (!r.is_array() || r.size() != 4) throw ValidationError(where + ": states are [x, y, v, psi]");
        out.push_back({detail::number_at(r[0], where), detail::number_at(r[1], where), detail::number_at(r[2], where),
                       detail::number_at(r[3], where)});
    }
    return out;
}

std::vector<Control> controls_from(const detail::Json& j, const std::string& where) {
    if (!j.is_array()) throw ValidationError(where + ": expected an array");
    std::vector<Control> out;
    for (const auto& r : j) {
        if (!r.is_array() || r.size() != 2) throw ValidationError(where + ": controls are [a, delta]");
        out.push_back({detail::number_at(r[0], where), detail::number_at(r[1], where)});
    }
    return out;
}

}  // namespace

std::string dump_plan(const TrajectoryTree& tree) {
    detail::Json j;
    j["format"] = kPlanFormat;
    j["status"] = to_string(tree.status);
    j["t0"] = tree.t0;
    j["dt"] = tree.dt;
    j["branch_time"] = tree.branch_time;
    j["cost"] = tree.cost;
    j["root"] = {{"states", states_json(tree.root_states)}, {"controls", controls_json(tree.root_controls)}};
    detail::Json branches = detail::Json::array();
    for (const auto& b : tree.branches)
        branches.push_back({{"mode", b.mode},
                            {"prob", b.prob},
                            {"states", states_json(b.states)},
                            {"controls", controls_json(b.controls)}});
    j["branches"] = branches;
    const SolveReport& r = tree.report;
    j["report"] = {{"sqp_iterations", r.sqp_iterations},
                   {"qp_iterations", r.qp_iterations},
                   {"cost_history", r.cost_history},
                   {"restored", r.restored},
                   {"restoration_iterations", r.restoration_iterations},
                   {"complementarity", r.complementarity},
                   {"stationarity", r.stationarity},
                   {"linearization_error", r.linearization_error},
                   {"min_separation_margin", r.min_separation_margin},
                   {"corridor_violation", r.corridor_violation},
                   {"violated", r.violated},
                   {"candidate", r.candidate}};
    return j.dump(1);
}

void save_plan(const TrajectoryTree& tree, const std::filesystem::path& path) {
    detail::write_file_atomic(path, dump_plan(tree) + "\n");
}

TrajectoryTree parse_plan(std::string_view text) {
    detail::Json j = detail::parse_json(text, "plan");
    detail::check_format(j, kPlanFormat);
    TrajectoryTree t;
    t.status = parse_plan_status(detail::string_at(j, "status", "plan"));
    t.t0 = detail::number_at(detail::require(j, "t0", "plan"), "plan.t0");
    t.dt = detail::number_at(detail::require(j, "dt", "plan"), "plan.dt");
    const auto& tb = detail::require(j, "branch_time", "plan");
    if (!tb.is_number_integer()) throw ValidationError("plan.branch_time: expected an integer");
    t.branch_time = tb.get<int>();
    if (j.contains("cost")) t.cost = detail::number_at(j["cost"], "plan.cost");
    const auto& root = detail::require(j, "root", "plan");
    t.root_states = states_from(detail::require(root, "states", "plan.root"), "plan.root.states");
    t.root_controls = controls_from(detail::require(root, "controls", "plan.root"), "plan.root.controls");
    if (t.root_states.size() != t.root_controls.size() + 1 || static_cast<int>(t.root_controls.size()) != t.branch_time)
        throw ValidationError("plan.root: expected branch_time controls and branch_time + 1 states");
    const auto& branches = detail::require(j, "branches", "plan");
    if (!branches.is_array()) throw ValidationError("plan.branches: expected an array");
    for (const auto& bj : branches) {
        Branch b;
        const auto& mode = detail::require(bj, "mode", "plan.branches");
        if (!mode.is_number_integer()) throw ValidationError("plan.branches.mode: expected an integer");
        b.mode = mode.get<int>();
        b.prob = detail::number_at(detail::require(bj, "prob", "plan.branches"), "plan.branches.prob");
        b.states = states_from(detail::require(bj, "states", "plan.branches"), "plan.branches.states");
        b.controls = controls_from(detail::require(bj, "controls", "plan.branches"), "plan.branches.controls");
        if (b.states.size() != b.controls.size() + 1) throw ValidationError("plan.branches: states must be controls + 1");
        if (b.states.front() != t.root_states.back())
            throw ValidationError("plan.branches: branch does not start at the root terminal state");
        t.branches.push_back(std::move(b));
    }
    if (j.contains("report")) {
        const auto& r = j["report"];
        SolveReport& rep = t.report;
        auto num = [&](const char* k, double& dst) {
            if (r.contains(k)) dst = detail::number_at(r[k], std::string("plan.report.") + k);
        };
        auto integer = [&](const char* k, int& dst) {
            if (r.contains(k) && r[k].is_number_integer()) dst = r[k].get<int>();
        };
        integer("sqp_iterations", rep.sqp_iterations);
        integer("qp_iterations", rep.qp_iterations);
        integer("restoration_iterations", rep.restoration_iterations);
        integer("candidate", rep.candidate);
        if (r.contains("cost_history") && r["cost_history"].is_array())
            for (const auto& c : r["cost_history"]) rep.cost_history.push_back(detail::number_at(c, "plan.report.cost_history"));
        if (r.contains("restored") && r["restored"].is_boolean()) rep.restored = r["restored"].get<bool>();
        num("complementarity", rep.complementarity);
        num("stationarity", rep.stationarity);
        num("linearization_error", rep.linearization_error);
        num("min_separation_margin", rep.min_separation_margin);
        num("corridor_violation", rep.corridor_violation);
        if (r.contains("violated") && r["violated"].is_string()) rep.violated = r["violated"].get<std::string>();
    }
    return t;
}

TrajectoryTree load_plan(const std::filesystem::path& path) { return parse_plan(detail::read_file(path)); }

}  // namespace cogdrive
