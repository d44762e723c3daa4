#include <gtest/gtest.h>

#include <random>

#include "cogdrive/planner.hpp"
#include "cogdrive/qp.hpp"
#include "../support/test_support.hpp"

using namespace cogdrive;
namespace ct = cogdrive::testing;

// ---------------------------------------------------------------------------
// Dense QP

TEST(Qp, RandomProblemsSatisfyKkt) {
    std::mt19937 rng(1);
    std::normal_distribution<double> n(0, 1);
    int solved = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const int dim = 2 + trial % 12, rows = trial % 25;
        Eigen::MatrixXd M(dim, dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) M(i, j) = n(rng);
        Eigen::MatrixXd H = M * M.transpose() + 0.1 * Eigen::MatrixXd::Identity(dim, dim);
        Eigen::VectorXd g(dim), b(rows);
        Eigen::MatrixXd A(rows, dim);
        for (int i = 0; i < dim; ++i) g[i] = n(rng) * 5;
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < dim; ++j) A(i, j) = n(rng);
            b[i] = std::abs(n(rng));  // x = 0 is feasible
        }
        QpResult r = solve_dense_qp(H, g, A, b, 500);
        ASSERT_EQ(r.status, QpStatus::optimal) << "trial " << trial;
        ++solved;
        for (int i = 0; i < rows; ++i) EXPECT_LE(A.row(i).dot(r.x), b[i] + 1e-9);
        if (rows > 0) {
            EXPECT_GE(r.lambda.minCoeff(), -1e-12);
        }
        EXPECT_LT(stationarity_residual(r, H, g, A), 1e-8);
        EXPECT_LT(complementarity_residual(r, A, b), 1e-9);
        EXPECT_NEAR(r.objective, 0.5 * r.x.dot(H * r.x) + g.dot(r.x), 1e-9);
    }
    EXPECT_EQ(solved, 300);
}

TEST(Qp, UnconstrainedIsNewtonStep) {
    Eigen::MatrixXd H(2, 2);
    H << 2, 0, 0, 4;
    Eigen::VectorXd g(2);
    g << -2, -8;
    QpResult r = solve_dense_qp(H, g, Eigen::MatrixXd(0, 2), Eigen::VectorXd(0));
    EXPECT_NEAR(r.x[0], 1.0, 1e-14);
    EXPECT_NEAR(r.x[1], 2.0, 1e-14);
}

TEST(Qp, ActiveBound) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd g(2);
    g << -3, 0;
    Eigen::MatrixXd A(1, 2);
    A << 1, 0;
    Eigen::VectorXd b(1);
    b << 1;
    QpResult r = solve_dense_qp(H, g, A, b);
    EXPECT_NEAR(r.x[0], 1.0, 1e-14);
    EXPECT_NEAR(r.lambda[0], 2.0, 1e-12);
}

TEST(Qp, InfeasibleIsReported) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(1, 1);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(1);
    Eigen::MatrixXd A(2, 1);
    A << 1, -1;
    Eigen::VectorXd b(2);
    b << -1, -1;  // x <= -1 and x >= 1
    QpResult r = solve_dense_qp(H, g, A, b);
    EXPECT_EQ(r.status, QpStatus::infeasible);
    EXPECT_GE(r.blocking_row, 0);
}

// ---------------------------------------------------------------------------
// Geometry and dynamics

TEST(Planner, HyperplaneSeparatesDiscs) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-10, 10);
    for (int i = 0; i < 500; ++i) {
        Vec2 e{u(rng), u(rng)}, o{u(rng), u(rng)};
        if ((e - o).norm() < 1e-3) continue;
        HyperplaneConstraint h = hyperplane(e, o, 1.2, 1.2, 3, "x");
        EXPECT_NEAR(h.normal.norm(), 1.0, 1e-12);
        // Any ego position satisfying the halfspace keeps both discs apart.
        for (int k = 0; k < 20; ++k) {
            Vec2 p{u(rng), u(rng)};
            if (h.violation(p) <= 0.0) {
                EXPECT_GE((p - o).norm(), 2.4 - 1e-9);
            }
        }
    }
    EXPECT_THROW(hyperplane({1, 1}, {1, 1 + 1e-8}, 1, 1, 0), DegenerateGeometryError);
}

TEST(Planner, DiscCentres) {
    VehicleGeometry g;
    auto d = g.discs({1, 2}, kPi / 2);
    const double off = g.disc_offset * g.wheelbase;
    EXPECT_NEAR(d[0].x, 1.0, 1e-12);
    EXPECT_NEAR(d[0].y, 2.0 + off, 1e-12);
    EXPECT_NEAR(d[1].y, 2.0 - off, 1e-12);
}

TEST(Planner, DynamicsMatchesOracle) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 1000; ++i) {
        EgoState s{u(rng) * 100, u(rng) * 100, 5 + 5 * u(rng), u(rng) * kPi};
        Control c{u(rng) * 4, u(rng) * 0.6};
        EgoState a = dynamics_step(s, c, 0.1, 2.8), b = ct::bicycle(s, c.a, c.delta, 0.1, 2.8);
        EXPECT_NEAR(a.x, b.x, 1e-12);
        EXPECT_NEAR(a.y, b.y, 1e-12);
        EXPECT_NEAR(a.v, b.v, 1e-12);
        EXPECT_NEAR(std::remainder(a.psi - b.psi, kTwoPi), 0.0, 1e-12);
    }
    // speed never goes negative
    EXPECT_EQ(dynamics_step({0, 0, 0.1, 0}, {-4, 0}, 0.1, 2.8).v, 0.0);
}

TEST(Planner, ConfigJsonRejectsUnknownKeys) {
    PlannerConfig c;
    c.kappa = 1.5;
    c.candidate_offsets = {{1, 2}};
    PlannerConfig back = planner_config_from_json(planner_config_to_json(c));
    EXPECT_EQ(back.kappa, 1.5);
    EXPECT_EQ(back.candidate_offsets.size(), 1u);
    EXPECT_THROW(planner_config_from_json(R"({"kapa": 1})"), ValidationError);
    PlannerConfig bad;
    bad.branch_time = 3;  // must exceed the replanning period
    EXPECT_THROW(bad.validate(), ValidationError);
    bad = PlannerConfig{};
    bad.branch_time = bad.horizon;
    EXPECT_THROW(bad.validate(), ValidationError);
}

// ---------------------------------------------------------------------------
// Trees

namespace {

std::vector<MapPolyline> straight_road() {
    return {{"c", {{-50, 0}, {300, 0}}, PolylineSemantics::lane_center},
            {"l", {{-50, 4}, {300, 4}}, PolylineSemantics::road_edge},
            {"r", {{-50, -4}, {300, -4}}, PolylineSemantics::road_edge}};
}

// Ego cruising along x; an optional crossing agent per mode.
PredictionSet cruise(std::vector<std::optional<double>> crosser_speed, std::vector<double> probs) {
    PredictionSet p;
    p.ego_id = "ego";
    p.joint_ids = {"ego", "o"};
    for (std::size_t k = 0; k < probs.size(); ++k) {
        ModePrediction m;
        m.prob = probs[k];
        AgentPrediction e{"ego", true, {}, {}, {}};
        for (int t = 1; t <= 30; ++t) {
            e.mu.push_back({0.8 * t, 0});
            e.sigma.push_back({0.2, 0.2});
            e.yaw.push_back(0.0);
        }
        m.agents.push_back(e);
        AgentPrediction o{"o", true, {}, {}, {}};
        for (int t = 1; t <= 30; ++t) {
            double v = crosser_speed[k].value_or(0.0);
            o.mu.push_back({20.0, crosser_speed[k] ? -20.0 + v * 0.1 * t : 80.0});
            o.sigma.push_back({0.2, 0.2});
            o.yaw.push_back(kPi / 2);
        }
        m.agents.push_back(o);
        p.modes.push_back(m);
    }
    return p;
}

}  // namespace

TEST(Planner, FreeRoadTracksTheReference) {
    PlannerConfig c;
    PredictionSet p = cruise({std::nullopt}, {1.0});
    TrajectoryTree t = plan_tree(p, {0, 0, 8, 0}, straight_road(), c);
    ASSERT_TRUE(t.accepted());
    EXPECT_EQ(t.branches.size(), 1u);
    EXPECT_EQ(static_cast<int>(t.root_states.size()), c.branch_time + 1);
    EXPECT_EQ(t.horizon(), c.horizon);
    EXPECT_LT(ct::tree_rollout_error(t, c.geometry.wheelbase), 1e-12);
}

TEST(Planner, ContingencyTreeAgainstTwoModes) {
    PlannerConfig c;
    // mode 0: the crosser goes through at the ego's arrival time, mode 1: it stays away
    PredictionSet p = cruise({8.0, std::nullopt}, {0.4, 0.6});
    TrajectoryTree t = plan_tree(p, {0, 0, 8, 0}, straight_road(), c);
    ASSERT_TRUE(t.accepted()) << t.report.violated;
    ASSERT_EQ(t.branches.size(), 2u);
    for (const auto& b : t.branches) EXPECT_EQ(b.states.front(), t.root_states.back());
    EXPECT_GE(ct::tree_min_clearance(t, p, c.geometry), -1e-6);
    EXPECT_NEAR(tree_separation_margin(t, p, c.geometry), ct::tree_min_clearance(t, p, c.geometry), 1e-9);
    // the branch for the clear road travels further
    EXPECT_GT(t.branches[1].states.back().x, t.branches[0].states.back().x);
    EXPECT_LT(t.report.complementarity, 1e-6);
    const auto& h = t.report.cost_history;
    if (!t.report.restored) {
        for (std::size_t i = 1; i < h.size(); ++i) {
            EXPECT_LE(h[i], h[i - 1] + 1e-9);
        }
    }
}

TEST(Planner, BlockedRootFallsBackToBraking) {
    PlannerConfig c;
    // a stopped vehicle right in front in every mode
    PredictionSet p = cruise({std::nullopt, std::nullopt}, {0.5, 0.5});
    for (auto& m : p.modes)
        for (auto& pos : m.agents[1].mu) pos = {4.5, 0.0};
    TrajectoryTree t = plan_tree(p, {0, 0, 10, 0}, straight_road(), c);
    EXPECT_FALSE(t.accepted());
    EXPECT_FALSE(t.report.violated.empty());
    if (t.status == PlanStatus::fallback) {
        for (std::size_t i = 0; i < t.root_controls.size(); ++i) EXPECT_EQ(t.root_controls[i].a, c.a_min);
    }
}

TEST(Planner, EmergencyTreeBrakesAlongHeading) {
    PlannerConfig c;
    PredictionSet p = cruise({std::nullopt, std::nullopt}, {0.5, 0.5});
    TrajectoryTree t = emergency_tree(p, {0, 0, 6, 0.3}, c);
    EXPECT_EQ(t.status, PlanStatus::fallback);
    EXPECT_EQ(t.branches.size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) {
        auto path = t.path(k);
        EXPECT_EQ(path.back().v, 0.0);
        for (const auto& s : path) EXPECT_NEAR(s.psi, 0.3, 1e-12);
    }
    EXPECT_LT(ct::tree_rollout_error(t, c.geometry.wheelbase), 1e-12);
}

TEST(Planner, ReplanWarmStartKeepsSafety) {
    PlannerConfig c;
    PredictionSet p = cruise({8.0, std::nullopt}, {0.4, 0.6});
    TrajectoryTree t = plan_tree(p, {0, 0, 8, 0}, straight_road(), c);
    ASSERT_TRUE(t.accepted());
    EgoState next = t.root_states[static_cast<std::size_t>(c.replan_period)];
    PredictionSet shifted = p;
    for (auto& m : shifted.modes)
        for (auto& a : m.agents) {
            a.mu.erase(a.mu.begin(), a.mu.begin() + c.replan_period);
            a.sigma.erase(a.sigma.begin(), a.sigma.begin() + c.replan_period);
            a.yaw.erase(a.yaw.begin(), a.yaw.begin() + c.replan_period);
            for (int i = 0; i < c.replan_period; ++i) {
                a.mu.push_back(a.mu.back());
                a.sigma.push_back(a.sigma.back());
                a.yaw.push_back(a.yaw.back());
            }
        }
    TrajectoryTree r = replan_step(t, c.replan_period, shifted, next, straight_road(), c);
    ASSERT_TRUE(r.accepted());
    EXPECT_EQ(r.root_states.front(), next);
    EXPECT_GE(ct::tree_min_clearance(r, shifted, c.geometry), -1e-6);
}

TEST(Planner, CorridorRespectsRoadEdges) {
    PlannerConfig c;
    PredictionSet p = cruise({std::nullopt}, {1.0});
    NominalInit init = nominal_init(p, {0, 0, 8, 0}, c);
    Corridor cor = build_corridor(init.reference, straight_road(), c);
    ASSERT_EQ(cor.boxes.size(), static_cast<std::size_t>(c.horizon));
    for (const auto& b : cor.boxes) {
        EXPECT_LE(b.hi[1], 4.0 - c.geometry.r_F + 1e-9 + c.kappa * 0.2);
        EXPECT_GE(b.lo[1], -4.0 + c.geometry.r_F - 1e-9 - c.kappa * 0.2);
        EXPECT_LE(b.lo[0], b.hi[0]);
    }
    // a road narrower than a disc has no corridor
    std::vector<MapPolyline> narrow = {{"c", {{-50, 0}, {300, 0}}, PolylineSemantics::lane_center},
                                       {"l", {{-50, 0.5}, {300, 0.5}}, PolylineSemantics::road_edge},
                                       {"r", {{-50, -0.5}, {300, -0.5}}, PolylineSemantics::road_edge}};
    PlannerConfig tight = c;
    tight.kappa = 0.0;
    EXPECT_THROW(build_corridor(init.reference, narrow, tight), ValidationError);
}

TEST(Planner, NominalInitUsesProbabilityWeightedMean) {
    PlannerConfig c;
    PredictionSet p = cruise({std::nullopt, std::nullopt}, {0.25, 0.75});
    for (std::size_t t = 0; t < 30; ++t) p.modes[1].agents[0].mu[t].x += 4.0;
    NominalInit init = nominal_init(p, {0, 0, 8, 0}, c);
    ASSERT_EQ(init.reference.states.size(), 31u);
    EXPECT_NEAR(init.reference.states.back().x, 0.8 * 30 + 3.0, 1.0);
    EXPECT_EQ(init.candidates.size(), c.candidate_offsets.size());
}

TEST(Planner, PlanJsonRoundTrip) {
    PlannerConfig c;
    PredictionSet p = cruise({8.0, std::nullopt}, {0.4, 0.6});
    TrajectoryTree t = plan_tree(p, {0, 0, 8, 0}, straight_road(), c);
    TrajectoryTree back = parse_plan(dump_plan(t));
    EXPECT_EQ(back.status, t.status);
    EXPECT_EQ(back.root_states, t.root_states);
    EXPECT_EQ(back.root_controls, t.root_controls);
    ASSERT_EQ(back.branches.size(), t.branches.size());
    for (std::size_t k = 0; k < t.branches.size(); ++k) EXPECT_EQ(back.branches[k].states, t.branches[k].states);
    EXPECT_THROW(parse_plan(R"({"format":"cogdrive-plan/1"})"), ValidationError);
}

TEST(Planner, FixturesFromGeneratorAreSafe) {
    PlannerConfig c;
    for (std::uint64_t seed = 0; seed < 10; ++seed)
        for (auto tpl : {SceneTemplate::crossing, SceneTemplate::merge}) {
            auto f = ct::two_mode_fixture(tpl, 123 + seed);
            const Scene& s = f.scenario.scene;
            TrajectoryTree t = plan_tree(f.pred, ego_state_of(s.ego()), s.map, c);
            if (!t.accepted()) continue;
            EXPECT_GE(ct::tree_min_clearance(t, f.pred, c.geometry), -1e-6) << to_string(tpl) << " " << seed;
            EXPECT_LT(t.report.linearization_error, c.linearization_tol + 1e-12);
        }
}
