#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dqv/harness.hpp"
#include "dqv/report.hpp"

#include "test_util.hpp"

using namespace dqv;

namespace {

ExperimentConfig small_config(const fs::path& out, Algorithm alg = Algorithm::dqv) {
    ExperimentConfig c;
    c.env = "gridworld-3x3";
    c.env_options.max_steps = 50;
    c.agent.algorithm = alg;
    c.agent.trunk = {16};
    c.agent.head_width = 16;
    c.agent.batch_size = 16;
    c.agent.target_sync_period = 50;
    c.total_steps = 600;
    c.seeds = {1, 2};
    c.eval_interval = 200;
    c.eval_episodes = 2;
    c.final_eval_episodes = 5;
    c.output_dir = out;
    c.replay_capacity = 1000;
    c.warmup = 64;
    c.diagnostics.every = 200;
    c.diagnostics.episodes = 2;
    c.diagnostics.v_vs_q_samples = 50;
    c.diagnostics.baseline_episodes = 5;
    c.workers = 1;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(DQV_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

// Hand-written run directory: each seed logs the given eval curve.
void write_fake_run(const fs::path& dir, const std::string& env, const std::string& alg,
                    const std::vector<std::vector<double>>& evals, const std::vector<double>& finals,
                    std::optional<double> oracle, std::size_t interval = 100) {
    fs::create_directories(dir);
    std::vector<std::uint64_t> seeds;
    nlohmann::json summary_seeds = nlohmann::json::array();
    for (std::size_t k = 0; k < evals.size(); ++k) {
        seeds.push_back(k + 1);
        fs::create_directories(seed_dir(dir, k + 1));
        std::ofstream log(seed_dir(dir, k + 1) / "log.jsonl");
        for (std::size_t i = 0; i < evals[k].size(); ++i) {
            RunRecord r{"step", (i + 1) * interval, i, std::nullopt, 0.1, std::nullopt, std::nullopt, evals[k][i],
                        std::nullopt};
            log << to_json(r).dump() << '\n';
        }
        summary_seeds.push_back({{"seed", k + 1}, {"diverged", false}, {"final_return", finals[k]}});
    }
    const std::size_t total = evals.empty() ? interval : evals[0].size() * interval;
    detail::write_json_file(dir / "config.json", {{"env_name", env},
                                                  {"agent", {{"algorithm", alg}}},
                                                  {"total_steps", total},
                                                  {"eval_interval", interval},
                                                  {"seeds", seeds}});
    detail::write_json_file(dir / "summary.json",
                            {{"seeds", summary_seeds},
                             {"oracle_initial_value", oracle ? nlohmann::json(*oracle) : nlohmann::json(nullptr)}});
}

} // namespace

TEST(ExperimentConfig, DefaultsValidate) { EXPECT_NO_THROW(ExperimentConfig{}.validate()); }

TEST(ExperimentConfig, RejectsInconsistentSettings) {
    auto c = small_config("unused");
    c.seeds = {};
    EXPECT_THROW(c.validate(), InvalidConfiguration);
    c = small_config("unused");
    c.seeds = {3, 3};
    EXPECT_THROW(c.validate(), InvalidConfiguration);
    c = small_config("unused");
    c.total_steps = 10;
    EXPECT_THROW(c.validate(), InvalidConfiguration);
    c = small_config("unused");
    c.warmup = 8;
    EXPECT_THROW(c.validate(), InvalidConfiguration);
    c = small_config("unused");
    c.agent.batch_size = 2000;
    c.warmup = 2000;
    c.total_steps = 3000;
    EXPECT_THROW(c.validate(), InvalidConfiguration);
    c = small_config("unused");
    c.eval_interval = 0;
    EXPECT_THROW(c.validate(), InvalidConfiguration);
    c = small_config("unused");
    c.agent.gamma = 1.5;
    EXPECT_THROW(c.validate(), InvalidConfiguration);
}

TEST(ExperimentConfig, JsonRoundTripAndRejection) {
    auto c = small_config("some/dir", Algorithm::dqv_max);
    auto back = experiment_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_THROW(experiment_config_from_json({{"totl_steps", 5}}), InvalidConfiguration);
    EXPECT_THROW(experiment_config_from_json({{"replay", {{"size", 5}}}}), InvalidConfiguration);
    EXPECT_THROW(experiment_config_from_json({{"diagnostics", {{"often", true}}}}), InvalidConfiguration);
    EXPECT_THROW(experiment_config_from_json({{"total_steps", "many"}}), InvalidConfiguration);
    EXPECT_THROW(experiment_config_from_json(nlohmann::json::array()), InvalidConfiguration);
}

TEST(ExperimentConfig, ExplicitDecayOverridesAutomatic) {
    ExperimentConfig c;
    c.total_steps = 20'000;
    EXPECT_EQ(c.effective_agent().epsilon.decay_steps, 2'000u);
    auto d = experiment_config_from_json({{"agent", {{"epsilon", {{"decay_steps", 77}}}}}}, c);
    EXPECT_EQ(d.effective_agent().epsilon.decay_steps, 77u);
}

TEST(EnvRegistry, NamesResolve) {
    auto g = make_env_source("gridworld-4x3-slip0.1-step-0.01");
    ASSERT_TRUE(g.mdp);
    EXPECT_EQ(g.mdp->num_states, 12u);
    EXPECT_EQ(g.num_actions(), 4u);
    auto ch = make_env_source("chain-5");
    EXPECT_NEAR(*ch.oracle_initial_value(0.9), 0.729, 1e-9);
    auto b = make_env_source("bias-6-noise0.5");
    EXPECT_EQ(b.num_actions(), 6u);
    EXPECT_NEAR(*b.oracle_initial_value(0.99), 0.0, 1e-12);
    auto cp = make_env_source("cartpole");
    EXPECT_FALSE(cp.mdp);
    EXPECT_FALSE(cp.oracle_initial_value(0.99));
    EXPECT_EQ(cp.make(1)->observation_dim(), 4u);
    EXPECT_NEAR(*make_env_source("gridworld-5x5").oracle_initial_value(0.99), 0.9320653479, 1e-9);
}

TEST(EnvRegistry, BadNamesAreConfigErrors) {
    EXPECT_THROW(make_env_source("mountaincar"), InvalidConfiguration);
    EXPECT_THROW(make_env_source("gridworld-1x1"), InvalidConfiguration);
    EXPECT_THROW(make_env_source("gridworld-3x3-slip1.5"), InvalidConfiguration);
    EXPECT_THROW(make_env_source("bias-1"), InvalidConfiguration);
    EXPECT_THROW(load_mdp_file("/nonexistent/mdp.json"), IoError);
}

TEST(RunRecordSchema, ValidatesShape) {
    RunRecord r{"episode", 10, 1, 0.5, 0.9, std::nullopt, 0.25, std::nullopt, std::nullopt};
    auto j = to_json(r);
    EXPECT_TRUE(valid_run_record(j));
    EXPECT_EQ(j.size(), 8u);
    auto back = run_record_from_json(j);
    EXPECT_EQ(to_json(back), j);
    auto extra = j;
    extra["note"] = "x";
    EXPECT_FALSE(valid_run_record(extra));
    auto wrong = j;
    wrong["kind"] = "update";
    EXPECT_FALSE(valid_run_record(wrong));
    auto neg = j;
    neg["step"] = -1;
    EXPECT_FALSE(valid_run_record(neg));
    auto missing = j;
    missing.erase("loss_q");
    EXPECT_FALSE(valid_run_record(missing));
    r.wall_ms = 3.0;
    EXPECT_TRUE(valid_run_record(to_json(r)));
}

TEST(RunExperiment, WritesArtifactsWithValidLogs) {
    auto dir = test::temp_dir("artifacts");
    auto cfg = small_config(dir);
    auto summary = run_experiment(cfg);
    EXPECT_EQ(summary.diverged(), 0u);
    ASSERT_EQ(summary.seeds.size(), 2u);
    EXPECT_TRUE(summary.oracle_initial_value);
    for (auto name : {"config.json", "summary.json"}) EXPECT_TRUE(fs::exists(dir / name)) << name;
    for (auto seed : cfg.seeds) {
        auto sd = seed_dir(dir, seed);
        for (auto name : {"log.jsonl", "trace.csv", "checkpoint.json", "diagnostics.json"})
            EXPECT_TRUE(fs::exists(sd / name)) << name;
        auto recs = read_run_log(sd / "log.jsonl");
        ASSERT_FALSE(recs.empty());
        std::size_t prev_step = 0, evals = 0;
        for (const auto& r : recs) {
            EXPECT_GE(r.step, prev_step);
            prev_step = r.step;
            EXPECT_GE(r.epsilon, 0.0);
            EXPECT_LE(r.epsilon, 1.0);
            if (r.kind == "step") {
                ++evals;
                EXPECT_EQ(r.step % cfg.eval_interval, 0u);
                EXPECT_TRUE(r.eval_return);
            } else {
                EXPECT_TRUE(r.episode_return);
            }
            EXPECT_FALSE(r.wall_ms);
        }
        EXPECT_EQ(evals, 3u);
        auto trace = detail::read_trace_csv(sd / "trace.csv");
        ASSERT_EQ(trace.size(), 3u);
        EXPECT_EQ(trace.back().first, 600u);
        auto diag = detail::read_json_file(sd / "diagnostics.json");
        EXPECT_TRUE(diag["v_vs_q"].contains("fraction_v_exceeds_maxq"));
        EXPECT_TRUE(diag["bias"].contains("oracle_initial_value_extension"));
        // the restored checkpoint evaluates like the trained agent
        auto agent = Agent::from_json(detail::read_json_file(sd / "checkpoint.json"));
        EXPECT_EQ(agent.config().algorithm, Algorithm::dqv);
    }
    auto cfgj = detail::read_json_file(dir / "config.json");
    EXPECT_EQ(cfgj["env_name"], "gridworld-3x3");
    EXPECT_TRUE(cfgj.contains("mdp"));
    fs::remove_all(dir);
}

TEST(RunExperiment, RerunIsByteIdentical) {
    auto a = test::temp_dir("rerun-a"), b = test::temp_dir("rerun-b");
    auto ca = small_config(a, Algorithm::dqv_max), cb = small_config(b, Algorithm::dqv_max);
    cb.workers = 2;
    run_experiment(ca);
    run_experiment(cb);
    for (auto seed : ca.seeds)
        for (auto name : {"log.jsonl", "trace.csv", "checkpoint.json", "diagnostics.json"})
            EXPECT_EQ(slurp(seed_dir(a, seed) / name), slurp(seed_dir(b, seed) / name)) << name;
    EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(RunExperiment, DifferentSeedsDiffer) {
    auto a = test::temp_dir("seeds");
    run_experiment(small_config(a));
    EXPECT_NE(slurp(seed_dir(a, 1) / "log.jsonl"), slurp(seed_dir(a, 2) / "log.jsonl"));
    fs::remove_all(a);
}

TEST(RunExperiment, UnwritableOutputFailsBeforeTraining) {
    auto base = test::temp_dir("unwritable");
    fs::create_directories(base);
    std::ofstream(base / "file") << "x";
    auto cfg = small_config(base / "file" / "run");
    cfg.total_steps = 5'000'000;
    cfg.warmup = 64;
    auto t0 = std::chrono::steady_clock::now();
    EXPECT_THROW(run_experiment(cfg), IoError);
    EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(5));
    fs::remove_all(base);
}

TEST(RunExperiment, ConfigErrorsBeforeOutput) {
    auto dir = test::temp_dir("badcfg");
    auto cfg = small_config(dir);
    cfg.env = "no-such-env";
    EXPECT_THROW(run_experiment(cfg), InvalidConfiguration);
    EXPECT_FALSE(fs::exists(dir));
}

TEST(RunExperiment, DivergenceIsRecorded) {
    auto dir = test::temp_dir("diverge");
    auto cfg = small_config(dir, Algorithm::dqn);
    cfg.env = "cartpole";
    cfg.seeds = {1};
    cfg.total_steps = 3000;
    cfg.agent.optimizer = {OptimizerKind::sgd, 1e6};
    auto s = run_experiment(cfg);
    EXPECT_EQ(s.diverged(), 1u);
    EXPECT_TRUE(fs::exists(seed_dir(dir, 1) / "diverged.json"));
    EXPECT_FALSE(fs::exists(seed_dir(dir, 1) / "checkpoint.json"));
    auto sj = detail::read_json_file(dir / "summary.json");
    EXPECT_EQ(sj["diverged"], 1);
    EXPECT_TRUE(sj["median_final_return"].is_null());
    fs::remove_all(dir);
}

TEST(RunExperiment, ReplayDumpAndPeriodicCheckpoints) {
    auto dir = test::temp_dir("dump");
    auto cfg = small_config(dir);
    cfg.seeds = {4};
    cfg.checkpoint_interval = 300;
    cfg.dump_replay = dir / "replay";
    cfg.log_wall_time = true;
    run_experiment(cfg);
    EXPECT_TRUE(fs::exists(seed_dir(dir, 4) / "checkpoint-300.json"));
    EXPECT_TRUE(fs::exists(seed_dir(dir, 4) / "checkpoint-600.json"));
    std::ifstream in(dir / "replay.4.jsonl");
    std::size_t lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    EXPECT_EQ(lines, 600u);
    for (const auto& r : read_run_log(seed_dir(dir, 4) / "log.jsonl")) EXPECT_TRUE(r.wall_ms);
    fs::remove_all(dir);
}

TEST(Plot, WritesDeterministicCurves) {
    auto dir = test::temp_dir("plot-run"), out = test::temp_dir("plot-out");
    run_experiment(small_config(dir));
    auto paths = emit_learning_curves(dir, out);
    EXPECT_EQ(paths.size(), 3u);
    for (const auto& p : paths) {
        auto svg = slurp(p);
        EXPECT_EQ(svg.rfind("<svg", 0), 0u);
        EXPECT_NE(svg.find("navy"), std::string::npos);
    }
    EXPECT_TRUE(fs::exists(out / "curves.csv"));
    auto first = slurp(paths[0]);
    emit_learning_curves(dir, out);
    EXPECT_EQ(slurp(paths[0]), first);
    fs::remove_all(dir);
    fs::remove_all(out);
}

TEST(Plot, MedianStaysInsideSeedEnvelope) {
    Rng rng(5);
    std::vector<Series> seeds(5);
    for (auto& s : seeds)
        for (int i = 0; i < 20; ++i) {
            s.x.push_back(i);
            s.y.push_back(uniform01(rng));
        }
    seeds[2].x.push_back(99); // only one seed has this point
    seeds[2].y.push_back(0.0);
    auto m = detail::median_series(seeds);
    ASSERT_EQ(m.x.size(), 20u);
    for (std::size_t i = 0; i < m.x.size(); ++i) {
        double lo = 1e9, hi = -1e9;
        for (const auto& s : seeds) {
            lo = std::min(lo, s.y[i]);
            hi = std::max(hi, s.y[i]);
        }
        EXPECT_GE(m.y[i], lo);
        EXPECT_LE(m.y[i], hi);
    }
}

TEST(Plot, SinglePointDrawsMarker) {
    auto dir = test::temp_dir("plot-single"), out = test::temp_dir("plot-single-out");
    write_fake_run(dir, "chain-3", "dqv", {{0.5}}, {0.5}, 0.9);
    auto paths = emit_learning_curves(dir, out);
    ASSERT_EQ(paths.size(), 1u);
    auto svg = slurp(paths[0]);
    EXPECT_NE(svg.find("<circle"), std::string::npos);
    EXPECT_EQ(svg.find("<polyline"), std::string::npos);
    fs::remove_all(dir);
    fs::remove_all(out);
}

TEST(Plot, EmptyRunWritesNothing) {
    auto dir = test::temp_dir("plot-empty"), out = test::temp_dir("plot-empty-out");
    write_fake_run(dir, "chain-3", "dqv", {{}}, {0.0}, 0.9);
    EXPECT_THROW(emit_learning_curves(dir, out), IoError);
    EXPECT_FALSE(fs::exists(out));
    fs::remove_all(dir);
}

TEST(Plot, CorruptLogIsIoError) {
    auto dir = test::temp_dir("plot-corrupt"), out = test::temp_dir("plot-corrupt-out");
    write_fake_run(dir, "chain-3", "dqv", {{0.1, 0.2}, {0.3, 0.4}}, {0.2, 0.4}, 0.9);
    std::ofstream(seed_dir(dir, 2) / "log.jsonl", std::ios::app) << "{not json\n";
    fs::remove(seed_dir(dir, 1) / "log.jsonl");
    try {
        emit_learning_curves(dir, out);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("seed-1"), std::string::npos);
        EXPECT_NE(msg.find("seed-2"), std::string::npos);
    }
    EXPECT_FALSE(fs::exists(out));
    EXPECT_THROW(load_run(dir / "missing"), IoError);
    fs::remove_all(dir);
}

TEST(Compare, IdenticalRunsTie) {
    auto a = test::temp_dir("cmp-a"), b = test::temp_dir("cmp-b");
    write_fake_run(a, "chain-3", "dqv", {{0.1, 0.9}, {0.2, 0.95}}, {0.9, 0.95}, 1.0);
    write_fake_run(b, "chain-3", "dqn", {{0.1, 0.9}, {0.2, 0.95}}, {0.9, 0.95}, 1.0);
    auto c = compare_runs({a, b});
    ASSERT_EQ(c.rows.size(), 2u);
    EXPECT_EQ(c.rows[0].rank_return, 1);
    EXPECT_EQ(c.rows[1].rank_return, 1);
    EXPECT_EQ(c.rows[0].rank_steps, 1);
    EXPECT_EQ(c.rows[1].rank_steps, 1);
    EXPECT_GE(*c.rows[1].p_return, 0.5);
    EXPECT_NE(comparison_text(c).find("[1st]"), std::string::npos);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Compare, DominantRunRanksFirstOnBoth) {
    auto fast = test::temp_dir("cmp-fast"), slow = test::temp_dir("cmp-slow"), none = test::temp_dir("cmp-none");
    std::vector<std::vector<double>> fe, se, ne;
    std::vector<double> ff, sf, nf;
    for (int k = 0; k < 6; ++k) {
        double d = 0.001 * k;
        fe.push_back({0.5, 0.95 + d, 0.97 + d, 0.98 + d});
        se.push_back({0.1, 0.3, 0.92 + d, 0.93 + d});
        ne.push_back({0.0, 0.1, 0.2, 0.3 + d});
        ff.push_back(0.98 + d);
        sf.push_back(0.93 + d);
        nf.push_back(0.3 + d);
    }
    write_fake_run(fast, "chain-3", "dqv", fe, ff, 1.0);
    write_fake_run(slow, "chain-3", "dqn", se, sf, 1.0);
    write_fake_run(none, "chain-3", "ddqn", ne, nf, 1.0);
    auto c = compare_runs({slow, none, fast});
    EXPECT_NEAR(*c.threshold, 0.9, 1e-12);
    const auto &s = c.rows[0], &n = c.rows[1], &f = c.rows[2];
    EXPECT_EQ(f.rank_return, 1);
    EXPECT_EQ(s.rank_return, 2);
    EXPECT_EQ(n.rank_return, 0);
    EXPECT_EQ(*f.steps_to_threshold, 200u);
    EXPECT_EQ(*s.steps_to_threshold, 300u);
    EXPECT_FALSE(n.steps_to_threshold);
    EXPECT_EQ(f.rank_steps, 1);
    EXPECT_EQ(s.rank_steps, 2);
    EXPECT_EQ(n.per_seed_steps.front(), 500.0);
    // complete separation with 6 vs 6 seeds: exact p = 1 / C(12, 6)
    EXPECT_NEAR(*s.p_return, 1.0 / 924.0, 1e-12);
    EXPECT_LT(*s.p_steps, 0.01);
    EXPECT_FALSE(f.p_return);
    auto csv = comparison_csv(c);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    fs::remove_all(fast);
    fs::remove_all(slow);
    fs::remove_all(none);
}

TEST(Compare, RejectsMismatchedOrTooFewRuns) {
    auto a = test::temp_dir("cmp-env-a"), b = test::temp_dir("cmp-env-b");
    write_fake_run(a, "chain-3", "dqv", {{0.5}}, {0.5}, 1.0);
    write_fake_run(b, "chain-4", "dqv", {{0.5}}, {0.5}, 1.0);
    EXPECT_THROW(compare_runs({a, b}), InvalidArgument);
    EXPECT_THROW(compare_runs({a}), InvalidArgument);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Cli, ExitCodes) {
    auto dir = test::temp_dir("cli");
    fs::create_directories(dir);
    EXPECT_EQ(run_cli("oracle --env chain-4 --gamma 0.9"), 0);
    EXPECT_EQ(run_cli("--no-such-flag"), 2);
    EXPECT_EQ(run_cli("train --agent sarsa --out " + (dir / "x").string()), 2);
    std::ofstream(dir / "bad.json") << R"({"total_steps": 100, "unknown": 1})";
    EXPECT_EQ(run_cli("train --config " + (dir / "bad.json").string()), 2);
    EXPECT_EQ(run_cli("train --env gridworld-1x1 --out " + (dir / "y").string()), 2);
    EXPECT_EQ(run_cli("oracle --env cartpole"), 2);
    EXPECT_EQ(run_cli("plot --run " + (dir / "missing").string() + " --out " + (dir / "p").string()), 1);

    nlohmann::json div = to_json(small_config(dir / "div", Algorithm::dqn));
    div["env"] = "cartpole";
    div["seeds"] = {1};
    div["total_steps"] = 3000;
    div["agent"]["optimizer"] = "sgd";
    div["agent"]["learning_rate"] = 1e6;
    std::ofstream(dir / "div.json") << div.dump();
    EXPECT_EQ(run_cli("train --config " + (dir / "div.json").string()), 3);
    fs::remove_all(dir);
}

TEST(Cli, TrainThenDiagnosePlotCompare) {
    auto dir = test::temp_dir("cli-flow");
    fs::create_directories(dir);
    auto cfg = to_json(small_config(dir / "run-a"));
    std::ofstream(dir / "cfg.json") << cfg.dump();
    ASSERT_EQ(run_cli("train --config " + (dir / "cfg.json").string()), 0);
    ASSERT_EQ(run_cli("train --config " + (dir / "cfg.json").string() + " --agent dqn --out " +
                      (dir / "run-b").string()),
              0);
    EXPECT_EQ(run_cli("diagnose --v-vs-q --run " + (dir / "run-a").string()), 0);
    auto d = detail::read_json_file(dir / "run-a" / "diagnose.json");
    EXPECT_EQ(d["seeds"].size(), 2u);
    EXPECT_TRUE(d["seeds"][0]["v_vs_q"].is_object());
    EXPECT_EQ(run_cli("plot --run " + (dir / "run-a").string() + " --out " + (dir / "plots").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "plots" / "gridworld-3x3_eval_return.svg"));
    EXPECT_EQ(run_cli("compare " + (dir / "run-a").string() + " " + (dir / "run-b").string() + " --csv " +
                      (dir / "cmp.csv").string()),
              0);
    EXPECT_TRUE(fs::exists(dir / "cmp.csv"));
    EXPECT_EQ(run_cli("train --config " + (dir / "cfg.json").string() + " --eval-from " +
                      (seed_dir(dir / "run-a", 1) / "checkpoint.json").string()),
              0);
    fs::remove_all(dir);
}
