#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cogdrive/prednet.hpp"
#include "cogdrive/scene.hpp"

namespace cogdrive {

struct EgoState {
    double x = 0.0;
    double y = 0.0;
    double v = 0.0;    // m/s, >= 0
    double psi = 0.0;  // heading, (-pi, pi]

    friend bool operator==(const EgoState&, const EgoState&) = default;
    Vec2 position() const { return {x, y}; }
};

struct Control {
    double a = 0.0;      // m/s^2
    double delta = 0.0;  // steering angle, rad

    friend bool operator==(const Control&, const Control&) = default;
};

struct VehicleGeometry {
    double wheelbase = 2.8;
    double r_F = 1.2;
    double r_R = 1.2;
    double disc_offset = 0.35;  // disc centres at +-disc_offset * wheelbase from the centre

    void validate() const;
    /// Front then rear disc centre.
    std::array<Vec2, 2> discs(Vec2 centre, double heading) const;
    std::array<double, 2> radii() const { return {r_F, r_R}; }
};

struct HyperplaneConstraint {
    Vec2 normal;      // unit, points from the ego disc towards the neighbour
    double offset = 0.0;
    Vec2 anchor;      // ego disc position the constraint was built at
    int timestep = 0;
    std::string neighbor_id;

    /// normal . (p - anchor) - offset; <= 0 when satisfied.
    double violation(Vec2 p) const { return normal.dot(p - anchor) - offset; }
};

/// Separating halfspace for a disc at `ego_pos` (radius r_i) against a disc at
/// `neighbor_pos` (radius r_j). Throws DegenerateGeometryError below 1e-6 m.
HyperplaneConstraint hyperplane(Vec2 ego_pos, Vec2 neighbor_pos, double r_i, double r_j, int timestep,
                                std::string neighbor_id = {});

struct Box {
    std::array<double, 4> lo{};  // [xF, yF, xR, yR]
    std::array<double, 4> hi{};
};

/// Corridor boxes for steps 1..T (index t-1).
struct Corridor {
    std::vector<Box> boxes;
};

struct PlannerConfig {
    double dt = 0.1;
    int horizon = 30;        // T
    int branch_time = 10;    // T_b
    int replan_period = 5;
    double a_min = -4.0;
    double a_max = 2.5;
    double delta_max = 0.6;
    std::array<double, 4> Q{1.0, 1.0, 0.1, 0.1};
    std::array<double, 2> R{0.5, 2.0};
    double kappa = 2.0;                // corridor inflation per unit of predicted std-dev
    double corridor_range = 30.0;      // ray length when no road edge is hit
    double separation_buffer = 0.3;    // extra clearance demanded by the linearised halfspaces
    double constraint_range = 15.0;    // halfspaces only for disc pairs closer than this
    double trust_a = 2.0;              // per-iteration step limits on the controls
    double trust_delta = 0.2;
    double linearization_tol = 0.05;   // max position error of the linear model for an accepted step
    int sqp_iterations = 20;
    int qp_iterations = 200;
    double convergence_tol = 1e-4;     // max position change that ends the iteration
    bool probability_weighted_branches = false;
    std::vector<Vec2> candidate_offsets{{-3.0, 0.0}, {-6.0, 0.0}, {3.0, 0.0}, {0.0, 0.5}, {0.0, -0.5}};
    VehicleGeometry geometry;

    void validate() const;
};

std::string planner_config_to_json(const PlannerConfig& config);
/// Unknown keys are rejected.
PlannerConfig planner_config_from_json(std::string_view text);

/// Kinematic bicycle, explicit Euler on position and heading.
EgoState dynamics_step(const EgoState& x, const Control& u, double dt, double wheelbase);
EgoState ego_state_of(const AgentHistory& agent);

/// Desired ego states for steps 0..T plus the controls that would produce them.
struct Reference {
    std::vector<EgoState> states;   // T + 1, states[0] is the current state
    std::vector<Control> controls;  // T
    std::vector<Vec2> sigma;        // T, predicted ego std-dev per step (zero if unknown)
};

struct NominalInit {
    Reference reference;
    std::vector<Reference> candidates;
};

/// Probability-weighted mean of the per-mode ego trajectories and deterministic
/// perturbations of it (longitudinal offset along the path, lateral offset to
/// its left), both ramped in linearly over the horizon.
NominalInit nominal_init(const PredictionSet& pred, const EgoState& ego, const PlannerConfig& config);

/// Ray-cast axis-aligned box around each reference disc centre, limited by the
/// road edges minus the disc radius and inflated by kappa * sigma. A disc centre
/// beyond a road edge (seen from its nearest lane centre) is cast from just
/// inside that edge instead. Throws ValidationError when a box is empty (the
/// road is narrower than the disc).
Corridor build_corridor(const Reference& reference, const std::vector<MapPolyline>& map,
                        const PlannerConfig& config);

/// Predicted disc occupancy of one agent at one step.
struct Obstacle {
    std::string id;
    int mode = 0;
    std::array<Vec2, 2> discs;
    std::array<double, 2> radii;
};

enum class PlanStatus { optimal, max_iter, infeasible, fallback };
std::string_view to_string(PlanStatus status);
PlanStatus parse_plan_status(std::string_view text);

struct SolveReport {
    int sqp_iterations = 0;
    int qp_iterations = 0;
    std::vector<double> cost_history;   // exact cost after every accepted iterate
    bool restored = false;              // iterate became feasible after starting infeasible
    int restoration_iterations = 0;
    double complementarity = 0.0;       // of the last QP solved
    double stationarity = 0.0;
    double linearization_error = 0.0;   // max over accepted steps
    double min_separation_margin = 0.0; // min over constrained pairs of distance - (r_i + r_j)
    double corridor_violation = 0.0;    // max box violation of the returned states
    std::string violated;               // first violated constraint set when infeasible
    int candidate = -1;                 // -1 reference or warm start, -2 full braking, otherwise candidate index
};

struct QpSolution {
    PlanStatus status = PlanStatus::optimal;
    std::vector<EgoState> states;   // T + 1, exact rollout of `controls`
    std::vector<Control> controls;  // T
    double cost = 0.0;
    SolveReport report;
};

struct QpConstraints {
    std::vector<HyperplaneConstraint> hyperplanes;  // fixed, applied to both ego discs
    std::vector<std::vector<Obstacle>> obstacles;   // per step 1..T, refreshed halfspaces
    std::optional<Corridor> corridor;
};

/// Sequential QP on a single trajectory: linearise the dynamics about the
/// current iterate, solve the QP in the control increments, line-search on the
/// exact rollout, until the positions move less than convergence_tol.
QpSolution solve_qp(const EgoState& start, const Reference& reference, const QpConstraints& constraints,
                    const PlannerConfig& config, const std::vector<Control>* initial = nullptr);

struct Branch {
    int mode = 0;
    double prob = 0.0;
    std::vector<EgoState> states;   // steps T_b..T; states.front() is the root terminal state
    std::vector<Control> controls;  // steps T_b..T-1
};

struct TrajectoryTree {
    PlanStatus status = PlanStatus::optimal;
    int branch_time = 0;
    double dt = 0.1;
    double t0 = 0.0;
    std::vector<EgoState> root_states;   // steps 0..T_b
    std::vector<Control> root_controls;  // steps 0..T_b-1
    std::vector<Branch> branches;
    double cost = 0.0;
    SolveReport report;

    int horizon() const;
    /// Root followed by branch `k`, steps 0..T.
    std::vector<EgoState> path(std::size_t k) const;
    std::vector<Control> controls(std::size_t k) const;
    bool accepted() const { return status == PlanStatus::optimal || status == PlanStatus::max_iter; }
};

/// Obstacles per mode and step 1..T from a prediction (every non-ego agent).
std::vector<std::vector<std::vector<Obstacle>>> obstacles_of(const PredictionSet& pred,
                                                             const VehicleGeometry& geometry, int horizon);

/// Root over [0, T_b] constrained against every mode, branch k over (T_b, T]
/// against mode k only. Falls back to maximal braking when no start yields a
/// feasible tree.
TrajectoryTree plan_tree(const PredictionSet& pred, const EgoState& ego, const std::vector<MapPolyline>& map,
                         const PlannerConfig& config);

/// plan_tree warm-started from `previous` shifted by `elapsed` steps.
TrajectoryTree replan_step(const TrajectoryTree& previous, int elapsed, const PredictionSet& pred,
                           const EgoState& ego, const std::vector<MapPolyline>& map, const PlannerConfig& config);

/// Maximal braking along the current heading, status fallback.
TrajectoryTree emergency_tree(const PredictionSet& pred, const EgoState& ego, const PlannerConfig& config);

/// Smallest distance - (r_i + r_j) between any ego disc on the tree and any
/// disc of an applicable predicted agent (all modes on the root, mode k on branch k).
double tree_separation_margin(const TrajectoryTree& tree, const PredictionSet& pred,
                              const VehicleGeometry& geometry);

inline constexpr std::string_view kPlanFormat = "cogdrive-plan/1";
std::string dump_plan(const TrajectoryTree& tree);
void save_plan(const TrajectoryTree& tree, const std::filesystem::path& path);
TrajectoryTree parse_plan(std::string_view text);
TrajectoryTree load_plan(const std::filesystem::path& path);

}  // namespace cogdrive
