#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "cogdrive/frames.hpp"
#include "cogdrive/scene.hpp"
#include "../support/test_support.hpp"

using namespace cogdrive;
namespace ct = cogdrive::testing;

namespace {

Scenario sample(SceneTemplate t = SceneTemplate::crossing, std::uint64_t seed = 1) {
    GeneratorConfig g;
    g.templ = t;
    return synth_scene(g, seed);
}

}  // namespace

TEST(Scene, GeneratedScenesValidate) {
    for (auto t : {SceneTemplate::straight_follow, SceneTemplate::unprotected_left, SceneTemplate::merge,
                   SceneTemplate::crossing})
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            GeneratorConfig g;
            g.templ = t;
            g.background_agents = static_cast<int>(seed % 3);
            g.window_offset_max = 20;
            Scenario s = synth_scene(g, seed);
            EXPECT_NO_THROW(validate(s.scene, *s.futures)) << to_string(t) << " seed " << seed;
            EXPECT_EQ(s.scene.history_length(), 10u);
            EXPECT_EQ(s.futures->horizon(), 30u);
            ASSERT_TRUE(s.label);
            EXPECT_EQ(s.label->template_name, to_string(t));
        }
}

TEST(Scene, GeneratorIsDeterministicPerSeed) {
    EXPECT_EQ(sample(SceneTemplate::merge, 9), sample(SceneTemplate::merge, 9));
    EXPECT_NE(sample(SceneTemplate::merge, 9), sample(SceneTemplate::merge, 10));
}

TEST(Scene, ForcedOutcomeKeepsHistory) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        GeneratorConfig g;
        g.force_outcome = "yield";
        Scenario y = synth_scene(g, seed);
        g.force_outcome = "pass";
        Scenario p = synth_scene(g, seed);
        EXPECT_EQ(y.scene, p.scene);
        EXPECT_NE(y.futures, p.futures);
        EXPECT_EQ(y.label->outcome, "yield");
        EXPECT_EQ(p.label->outcome, "pass");
    }
}

TEST(Scene, BothOutcomesOccur) {
    int yields = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) yields += sample(SceneTemplate::crossing, seed).label->outcome == "yield";
    EXPECT_GT(yields, 25);
    EXPECT_LT(yields, 75);
}

TEST(Scene, JsonRoundTripIsExact) {
    GeneratorConfig g;
    g.background_agents = 2;
    Scenario s = synth_scene(g, 3);
    EXPECT_EQ(parse_scenario(dump_scenario(s)), s);
    const auto path = std::filesystem::temp_directory_path() / "cogdrive_scene_roundtrip.json";
    save_scenario(s.scene, s.futures, path, s.label);
    EXPECT_EQ(load_scenario(path), s);
    std::filesystem::remove(path);
}

TEST(Scene, ValidationNamesTheInvariant) {
    Scenario base = sample();
    auto expect_error = [](const Scene& s, const std::string& fragment) {
        try {
            validate(s);
            ADD_FAILURE() << "expected failure containing '" << fragment << "'";
        } catch (const ValidationError& e) {
            EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
        }
    };
    {
        Scene s = base.scene;
        s.agents[1].id = s.agents[0].id;
        expect_error(s, "duplicate agent id");
    }
    {
        Scene s = base.scene;
        s.agents[0].states[3].pose.heading = 4.0;
        expect_error(s, "heading not normalized");
    }
    {
        Scene s = base.scene;
        s.agents[0].states[2].t += 0.05;
        expect_error(s, "timestep");
    }
    {
        Scene s = base.scene;
        s.ego_id = "nobody";
        expect_error(s, "ego_id");
    }
    {
        Scene s = base.scene;
        s.agents[0].states.resize(1);
        expect_error(s, "history length");
    }
    {
        Scene s = base.scene;
        s.map[0].points[1] = s.map[0].points[0];
        expect_error(s, "consecutive points");
    }
    {
        Scene s = base.scene;
        s.agents[1].states[0].speed = -1.0;
        expect_error(s, "negative speed");
    }
}

TEST(Scene, FuturesMustContinueTheGrid) {
    Scenario s = sample();
    GroundTruthFutures f = *s.futures;
    f.agents[0].states.pop_back();
    EXPECT_THROW(validate(s.scene, f), ValidationError);
    f = *s.futures;
    f.agents[0].states[0].t += 0.1;
    EXPECT_THROW(validate(s.scene, f), ValidationError);
}

TEST(Scene, ParserRejectsBadDocuments) {
    Scenario s = sample();
    std::string text = dump_scenario(s);
    EXPECT_THROW(parse_scenario("{"), ValidationError);
    EXPECT_THROW(parse_scenario(R"({"format":"cogdrive-scene/9"})"), ValidationError);
    std::string wrong_kind = text;
    auto pos = wrong_kind.find("\"vehicle\"");
    ASSERT_NE(pos, std::string::npos);
    wrong_kind.replace(pos, 9, "\"tank\"");
    EXPECT_THROW(parse_scenario(wrong_kind), ValidationError);
    EXPECT_THROW(load_scenario("/nonexistent/scene.json"), ValidationError);
}

TEST(Scene, TemplateNames) {
    for (auto t : {SceneTemplate::straight_follow, SceneTemplate::unprotected_left, SceneTemplate::merge,
                   SceneTemplate::crossing})
        EXPECT_EQ(parse_template(to_string(t)), t);
    try {
        parse_template("roundabout");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("crossing"), std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// Frames

TEST(Frames, LocalGlobalInverse) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 200; ++i) {
        const auto m = ct::random_motion(rng);
        LocalFrame f{{m.tx, m.ty}, m.theta};
        Pose2 p{std::uniform_real_distribution<double>(-50, 50)(rng), 3.0, 0.7};
        Pose2 back = to_global(f, to_local(f, p));
        EXPECT_NEAR(back.x, p.x, 1e-12);
        EXPECT_NEAR(back.y, p.y, 1e-12);
        EXPECT_NEAR(back.heading, p.heading, 1e-12);
        EXPECT_GT(back.heading, -kPi);
        EXPECT_LE(back.heading, kPi);
    }
}

TEST(Frames, PolylineFrameAtArcLengthMidpoint) {
    MapPolyline pl{"p", {{0, 0}, {1, 0}, {1, 3}}, PolylineSemantics::lane_center};
    LocalFrame f = frame_of(pl);
    EXPECT_NEAR(f.origin.x, 1.0, 1e-12);
    EXPECT_NEAR(f.origin.y, 1.0, 1e-12);
    EXPECT_NEAR(f.heading, kPi / 2, 1e-12);
}

TEST(Frames, PolylineMidpointOnVertexTakesEarlierSegment) {
    MapPolyline pl{"p", {{0, 0}, {2, 0}, {2, 2}}, PolylineSemantics::lane_center};
    EXPECT_NEAR(frame_of(pl).heading, 0.0, 1e-12);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 100; ++i) {
        const auto m = ct::random_motion(rng);
        MapPolyline q = pl;
        for (auto& p : q.points) p = m.apply(p);
        EXPECT_NEAR(std::remainder(frame_of(q).heading - m.theta, kTwoPi), 0.0, 1e-9);
    }
}

TEST(Frames, AgentFrameIsLastPose) {
    Scenario s = sample();
    const auto& a = s.scene.agents[1];
    LocalFrame f = frame_of(a);
    EXPECT_EQ(f.origin, a.current().pose.position());
    EXPECT_EQ(f.heading, a.current().pose.heading);
}

TEST(Frames, RelFeatureValues) {
    LocalFrame a{{0, 0}, 0.0}, b{{0, 2}, kPi / 2};
    RelPosFeature r = rel_feature(a, b);
    EXPECT_NEAR(r[0], 1.0, 1e-12);  // sin dtheta
    EXPECT_NEAR(r[1], 0.0, 1e-12);
    EXPECT_NEAR(r[2], 1.0, 1e-12);  // b is to the left of a
    EXPECT_NEAR(r[3], 0.0, 1e-12);
    EXPECT_NEAR(r[4], 2.0, 1e-12);
}

TEST(Frames, CoincidentOriginsHaveZeroBearing) {
    LocalFrame a{{5, 5}, 0.3}, b{{5, 5}, -1.0}, c{{5 + 1e-14, 5 - 1e-14}, -1.0};
    EXPECT_EQ(rel_feature(a, b)[2], 0.0);
    EXPECT_EQ(rel_feature(a, b)[3], 1.0);
    EXPECT_EQ(rel_feature(a, c)[2], 0.0);
    std::vector<LocalFrame> fs{a, b};
    RelPosTensor t = rel_features(fs);
    EXPECT_EQ(t.at(0, 0), (RelPosFeature{0, 1, 0, 1, 0}));
}

TEST(Frames, InstanceOrderAgentsThenPolylines) {
    Scenario s = sample();
    auto fs = instance_frames(s.scene);
    ASSERT_EQ(fs.size(), s.scene.agents.size() + s.scene.map.size());
    EXPECT_EQ(fs.front(), frame_of(s.scene.agents.front()));
    EXPECT_EQ(fs.back(), frame_of(s.scene.map.back()));
}
