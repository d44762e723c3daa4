// cogdrive: data generation, training, prediction, planning, evaluation and
// closed-loop simulation from one binary.
//
// Exit codes: 0 success, 2 invalid input, 3 runtime or solver failure,
// 4 safety violation under --strict.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cogdrive/metrics.hpp"
#include "cogdrive/planner.hpp"
#include "cogdrive/prednet.hpp"
#include "cogdrive/run_config.hpp"
#include "cogdrive/scene.hpp"
#include "cogdrive/simloop.hpp"
#include "cogdrive/training.hpp"

namespace fs = std::filesystem;
using namespace cogdrive;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitFailure = 3;
constexpr int kExitUnsafe = 4;

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw RuntimeFailure("cannot write '" + tmp.string() + "'");
        out << text;
        if (!out) throw RuntimeFailure("I/O failure writing '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

// Writes to `path`, or to stdout when no path was given.
void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") std::cout << text;
    else write_text(path, text);
}

std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 of (seed, index): neighbouring seeds give unrelated scenes.
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::vector<Scenario> load_all(const std::vector<fs::path>& files) {
    std::vector<Scenario> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back(load_scenario(f));
    return out;
}

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool strict = false;
};

RunConfig resolve(const Globals& g) {
    RunConfig rc;
    if (!g.config.empty()) rc = merge_run_config(rc, read_text(g.config));
    if (g.seed) {
        rc.seed = *g.seed;
        rc.train.seed = *g.seed;
        rc.sim.seed = *g.seed;
    }
    if (g.threads) rc.threads = *g.threads;
    if (g.strict) rc.strict = true;
    rc.validate();
    return rc;
}

int cmd_gen(const RunConfig& rc, const std::string& templ, int count, const fs::path& out) {
    if (count < 1) throw ValidationError("gen: count must be >= 1");
    GeneratorConfig g = rc.generator;
    g.templ = parse_template(templ);
    const fs::path scenes = out / "scenes";
    fs::create_directories(scenes);
    nlohmann::json manifest;
    manifest["format"] = std::string(kManifestFormat);
    manifest["train"] = nlohmann::json::array({"scenes"});
    manifest["checkpoint"] = "model.ckpt";
    manifest["loss_curve"] = "loss.jsonl";
    for (int i = 0; i < count; ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%04d.json", std::string(to_string(g.templ)).c_str(), i);
        Scenario s = synth_scene(g, scene_seed(rc.seed, static_cast<std::uint64_t>(i)));
        write_text(scenes / name, dump_scenario(s));
    }
    write_text(out / "manifest.json", manifest.dump(1) + "\n");
    std::cout << "wrote " << count << " scenes to " << scenes.string() << "\n";
    return 0;
}

int cmd_train(const RunConfig& rc, const Globals& g, const fs::path& manifest_path) {
    TrainManifest m = load_manifest(manifest_path);
    NetConfig net = m.net.value_or(rc.net);
    TrainConfig tc = m.train_config.value_or(rc.train);
    if (g.seed) tc.seed = *g.seed;
    net.validate();
    tc.validate();
    const auto train_set = samples_from(load_all(expand_dataset(m.train)));
    const auto val_set = samples_from(load_all(expand_dataset(m.val)));
    if (train_set.empty()) throw ValidationError("train: no training scenes in " + manifest_path.string());
    std::string curve;
    TrainResult r = train(train_set, val_set, net, tc, [&](const EpochRecord& e) {
        std::string line = to_jsonl(e);
        std::cout << line << "\n" << std::flush;
        curve += line + "\n";
    });
    if (m.checkpoint.has_parent_path()) fs::create_directories(m.checkpoint.parent_path());
    r.best.save(m.checkpoint);
    if (!m.loss_curve.empty()) write_text(m.loss_curve, curve);
    std::cerr << "best epoch " << r.best_epoch << ", checkpoint " << m.checkpoint.string() << "\n";
    return 0;
}

int cmd_predict(const fs::path& scene_path, const fs::path& ckpt, const std::string& out) {
    Scenario s = load_scenario(scene_path);
    PredNet net = PredNet::load(ckpt);
    emit(out, dump_prediction(predict(s.scene, net)));
    return 0;
}

int cmd_plan(const RunConfig& rc, const fs::path& scene_path, const fs::path& pred_path, const std::string& out) {
    Scenario s = load_scenario(scene_path);
    PredictionSet pred = load_prediction(pred_path);
    TrajectoryTree tree = plan_tree(pred, ego_state_of(s.scene.ego()), s.scene.map, rc.planner);
    emit(out, dump_plan(tree) + "\n");
    if (!tree.accepted()) {
        std::cerr << "plan status " << to_string(tree.status) << ": " << tree.report.violated << "\n";
        if (rc.strict) return kExitUnsafe;
    }
    return 0;
}

int cmd_sim(const RunConfig& rc, const std::vector<fs::path>& inputs, const fs::path& ckpt, const std::string& log_path,
            const std::string& report_path, bool timing) {
    std::vector<SimEpisode> episodes;
    for (const auto& f : expand_dataset(inputs)) episodes.push_back({f.stem().string(), load_scenario(f)});
    PredNet net = PredNet::load(ckpt);
    auto logs = batch_eval(episodes, network_predictor(net), rc.planner, rc.sim, rc.threads);
    std::string text;
    for (const auto& l : logs) text += dump_simlog(l, timing);
    SimReport report = summarize(logs);
    if (!log_path.empty()) write_text(log_path, text);
    emit(report_path, dump_simreport(report, timing) + "\n");
    std::cerr << report.episodes << " episodes: " << report.completed << " completed, " << report.collisions
              << " collisions, " << report.timeouts << " timeouts, " << report.infeasible << " infeasible, "
              << report.fallbacks << " fallback trees\n";
    if (rc.strict && report.collisions > 0) return kExitUnsafe;
    return 0;
}

int cmd_eval(const RunConfig& rc, const std::vector<fs::path>& preds, const std::vector<fs::path>& scenes,
             const std::string& out) {
    if (preds.size() != scenes.size())
        throw ValidationError("eval: " + std::to_string(preds.size()) + " prediction files for " +
                              std::to_string(scenes.size()) + " scene files");
    std::vector<PredictionSet> ps;
    std::vector<GroundTruthFutures> gts;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        Scenario s = load_scenario(scenes[i]);
        if (!s.futures) throw ValidationError("eval: '" + scenes[i].string() + "' has no ground-truth futures");
        ps.push_back(load_prediction(preds[i]));
        gts.push_back(*s.futures);
        names.push_back(scenes[i].stem().string());
    }
    MetricsReport report = evaluate(ps, gts, names, rc.metrics);
    emit(out, dump_metrics(report, rc.metrics));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cogdrive: multimodal prediction and trajectory-tree planning"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "cogdrive-config/1 file merged over the defaults")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "seed for generation, training and simulation");
    app.add_option("--threads", g.threads, "worker threads for episode fan-out")->check(CLI::PositiveNumber);
    app.add_flag("--strict", g.strict, "exit 4 on a collision or a plan that is not accepted");

    std::string templ, out, ckpt, log_path, report_path;
    int count = 0;
    fs::path manifest, scene_path, pred_path;
    std::vector<fs::path> inputs, pred_files, scene_files;
    bool timing = false;

    auto* gen = app.add_subcommand("gen", "generate synthetic scenarios and a training manifest");
    gen->add_option("template", templ, "straight_follow | unprotected_left | merge | crossing")->required();
    gen->add_option("count", count, "number of scenes")->required();
    gen->add_option("--out", out, "output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "train a predictor from a cogdrive-train/1 manifest");
    train_cmd->add_option("manifest", manifest)->required();

    auto* predict_cmd = app.add_subcommand("predict", "write a cogdrive-pred/1 prediction for one scene");
    predict_cmd->add_option("scene", scene_path)->required();
    predict_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
    predict_cmd->add_option("--out", out, "output file (stdout when omitted)");

    auto* plan_cmd = app.add_subcommand("plan", "write a cogdrive-plan/1 trajectory tree");
    plan_cmd->add_option("scene", scene_path)->required();
    plan_cmd->add_option("pred", pred_path)->required();
    plan_cmd->add_option("--out", out, "output file (stdout when omitted)");

    auto* sim_cmd = app.add_subcommand("sim", "closed-loop episodes on scenario files or directories");
    sim_cmd->add_option("scenarios", inputs)->required();
    sim_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
    sim_cmd->add_option("--log", log_path, "simlog output file");
    sim_cmd->add_option("--report", report_path, "report output file (stdout when omitted)");
    sim_cmd->add_flag("--timing", timing, "include wall times in the simlog and report");

    auto* eval_cmd = app.add_subcommand("eval", "prediction metrics against ground-truth futures");
    eval_cmd->add_option("--pred", pred_files, "prediction files")->required();
    eval_cmd->add_option("--scenes", scene_files, "scene files, same order as --pred")->required();
    eval_cmd->add_option("--out", out, "output file (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitInvalid;
    }

    try {
        RunConfig rc = resolve(g);
        if (*gen) return cmd_gen(rc, templ, count, out);
        if (*train_cmd) return cmd_train(rc, g, manifest);
        if (*predict_cmd) return cmd_predict(scene_path, ckpt, out);
        if (*plan_cmd) return cmd_plan(rc, scene_path, pred_path, out);
        if (*sim_cmd) return cmd_sim(rc, inputs, ckpt, log_path, report_path, timing);
        if (*eval_cmd) return cmd_eval(rc, pred_files, scene_files, out);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitInvalid;
}
