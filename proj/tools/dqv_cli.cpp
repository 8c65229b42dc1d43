// Command-line front end: train, diagnose, plot, compare, oracle.

#include <iostream>

#include "CLI11.hpp"

#include "dqv/harness.hpp"
#include "dqv/report.hpp"

namespace {

using namespace dqv;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t pos = 0;
            auto v = std::stoull(tok, &pos);
            if (pos != tok.size()) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw InvalidConfiguration("bad seed list '" + s + "'");
        }
    }
    return out;
}

// Rebuilds the config and environment a finished run was trained with.
std::pair<ExperimentConfig, EnvSource> load_run_setup(const fs::path& dir) {
    auto j = detail::read_json_file(dir / "config.json");
    EnvSource src;
    src.name = j.value("env_name", std::string());
    ExperimentConfig cfg;
    if (j.contains("mdp")) src.mdp = mdp_from_json(j["mdp"]);
    j.erase("env_name");
    j.erase("mdp");
    j.erase("env_file");
    cfg = experiment_config_from_json(j);
    src.options = cfg.env_options;
    if (src.name.empty()) src.name = cfg.env;
    return {cfg, src};
}

int cmd_train(const std::string& config, const std::optional<std::string>& agent,
              const std::optional<std::string>& env, const std::optional<std::string>& env_file,
              const std::optional<std::string>& seeds, const std::optional<std::size_t>& steps,
              const std::optional<std::string>& out, const std::optional<std::string>& eval_from,
              const std::optional<std::string>& dump_replay) {
    ExperimentConfig cfg = config.empty() ? ExperimentConfig{} : load_experiment_config(config);
    if (agent) cfg.agent.algorithm = algorithm_from_string(*agent);
    if (env) {
        cfg.env = *env;
        cfg.env_file.reset();
    }
    if (env_file) cfg.env_file = *env_file;
    if (seeds) cfg.seeds = parse_seeds(*seeds);
    if (steps) cfg.total_steps = *steps;
    if (out) cfg.output_dir = *out;
    if (dump_replay) cfg.dump_replay = *dump_replay;

    if (eval_from) {
        auto src = resolve_env(cfg);
        Agent a = Agent::from_json(detail::read_json_file(*eval_from));
        auto e = src.make(cfg.seeds.front());
        Rng rng(cfg.seeds.front());
        auto r = rollout(a, *e, a.config().gamma, cfg.final_eval_episodes, 0.0, rng);
        nlohmann::json j = {{"checkpoint", *eval_from},
                            {"env", src.name},
                            {"episodes", r.episodes},
                            {"avg_initial_return", r.avg_initial_return},
                            {"avg_visited_return", r.avg_visited_return},
                            {"avg_undiscounted", r.avg_undiscounted},
                            {"truncated", r.truncated}};
        if (auto o = src.oracle_initial_value(a.config().gamma)) j["oracle_initial_value"] = *o;
        std::cout << j.dump(2) << '\n';
        return kExitOk;
    }

    auto summary = run_experiment(cfg);
    std::cout << to_json(summary).dump(2) << '\n';
    if (summary.diverged() > 0) {
        std::cerr << summary.diverged() << " seed(s) diverged\n";
        return kExitDiverged;
    }
    return kExitOk;
}

int cmd_diagnose(const std::string& run, bool bias_mdp, bool v_vs_q, std::size_t bias_seeds) {
    auto [cfg, src] = load_run_setup(run);
    nlohmann::json report;
    report["env"] = src.name;
    bool diverged = false;
    for (auto seed : cfg.seeds) {
        auto ck = seed_dir(run, seed) / "checkpoint.json";
        nlohmann::json entry = {{"seed", seed}};
        if (!fs::exists(ck)) {
            entry["diverged"] = true;
            diverged = true;
            report["seeds"].push_back(entry);
            continue;
        }
        Agent agent = Agent::from_json(detail::read_json_file(ck));
        auto env = src.make(detail::mix(seed, 7));
        Rng rng(detail::mix(seed, 8));
        const auto& d = cfg.diagnostics;
        auto base = compute_true_value_baseline(agent, *env, cfg.agent.gamma, d.baseline_episodes, rng);
        auto est = rollout(agent, *env, cfg.agent.gamma, d.episodes, d.eval_epsilon, rng);
        entry["baseline"] = base.value;
        entry["baseline_truncated_episodes"] = base.truncated;
        entry["avg_max_q"] = est.avg_max_q;
        entry["gap"] = est.avg_max_q - base.value;
        if (auto o = src.oracle_initial_value(cfg.agent.gamma)) entry["oracle_initial_value_extension"] = *o;
        if (v_vs_q) {
            if (agent.has_v())
                entry["v_vs_q"] = to_json(v_vs_maxq_report(agent, *env, d.v_vs_q_samples, d.v_vs_q_margin, rng));
            else
                entry["v_vs_q"] = "agent has no V head";
        }
        report["seeds"].push_back(entry);
    }
    if (bias_mdp) {
        BiasExperimentConfig bc;
        bc.agent = cfg.agent;
        bc.agent.epsilon.decay_steps = bc.total_steps / 10;
        auto mdp = make_bias_mdp(8, 1.0);
        auto res = bias_ordering_experiment(
            mdp, {Algorithm::dqn, Algorithm::ddqn, Algorithm::dqv, Algorithm::dqv_max}, bias_seeds, bc);
        report["bias_ordering"] = to_json(res);
    }
    detail::write_json_file(fs::path(run) / "diagnose.json", report);
    std::cout << report.dump(2) << '\n';
    return diverged ? kExitDiverged : kExitOk;
}

int cmd_oracle(const std::string& env, const std::optional<std::string>& env_file, double gamma,
               const std::optional<std::string>& dump) {
    EnvSource src = env_file ? EnvSource{"file", load_mdp_file(*env_file), {}} : make_env_source(env);
    if (!src.mdp) throw InvalidConfiguration("oracle needs a tabular environment");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidConfiguration("gamma must be in [0, 1)");
    auto vi = value_iteration(*src.mdp, gamma, 1e-12);
    auto j = oracle_to_json(*src.mdp, vi, gamma);
    j["env"] = src.name;
    if (dump) {
        std::ofstream o(*dump);
        if (!o) throw IoError("cannot write " + *dump);
        o << j.dump(2) << '\n';
    }
    double v0 = 0.0;
    for (StateId s = 0; s < src.mdp->num_states; ++s) v0 += src.mdp->initial[s] * vi.v[s];
    std::cout << "env " << src.name << "  gamma " << gamma << "  iterations " << vi.iterations << "  V*(s0) "
              << std::setprecision(10) << v0 << '\n';
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dqv: value-based deep RL experiments"};
    app.require_subcommand(1);

    std::string config;
    std::optional<std::string> agent, env, env_file, seeds, out, eval_from, dump_replay;
    std::optional<std::size_t> steps;
    auto* train = app.add_subcommand("train", "train agents over one or more seeds");
    train->add_option("--config", config, "JSON config file");
    train->add_option("--agent", agent, "dqv|dqv-max|dqn|ddqn|hard-dqv|dueling-dqv");
    train->add_option("--env", env, "environment name");
    train->add_option("--env-file", env_file, "JSON MDP file");
    train->add_option("--seeds", seeds, "comma-separated seeds");
    train->add_option("--steps", steps, "total environment steps");
    train->add_option("--out", out, "output directory");
    train->add_option("--eval-from", eval_from, "evaluate a checkpoint instead of training");
    train->add_option("--dump-replay", dump_replay, "write the final replay buffer as JSONL (prefix)");

    std::string run_dir;
    bool bias = false, vq = false;
    std::size_t bias_seeds = 20;
    auto* diagnose = app.add_subcommand("diagnose", "recompute diagnostics from a finished run");
    diagnose->add_option("--run", run_dir, "run directory")->required();
    diagnose->add_flag("--bias-mdp", bias, "also run the overestimation ordering experiment");
    diagnose->add_flag("--v-vs-q", vq, "report V(s) against max_a Q(s, a)");
    diagnose->add_option("--bias-seeds", bias_seeds, "seeds per algorithm for --bias-mdp");

    std::string plot_run, plot_out;
    auto* plot = app.add_subcommand("plot", "write SVG learning curves");
    plot->add_option("--run", plot_run, "run directory")->required();
    plot->add_option("--out", plot_out, "output directory")->required();

    std::vector<std::string> cmp_dirs;
    std::optional<std::string> cmp_csv;
    auto* compare = app.add_subcommand("compare", "compare run directories over one environment");
    compare->add_option("dirs", cmp_dirs, "run directories")->required();
    compare->add_option("--csv", cmp_csv, "CSV output path (default comparison.csv)");

    std::string oracle_env = "gridworld-5x5";
    std::optional<std::string> oracle_file, dump_oracle;
    double gamma = 0.99;
    auto* oracle = app.add_subcommand("oracle", "solve a tabular environment exactly");
    oracle->add_option("--env", oracle_env, "environment name");
    oracle->add_option("--env-file", oracle_file, "JSON MDP file");
    oracle->add_option("--gamma", gamma, "discount factor");
    oracle->add_option("--dump-oracle", dump_oracle, "write V*, Q* and the greedy policy as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train)
            return cmd_train(config, agent, env, env_file, seeds, steps, out, eval_from, dump_replay);
        if (*diagnose) return cmd_diagnose(run_dir, bias, vq, bias_seeds);
        if (*plot) {
            for (const auto& p : emit_learning_curves(plot_run, plot_out)) std::cout << p.string() << '\n';
            return kExitOk;
        }
        if (*compare) {
            std::vector<fs::path> dirs(cmp_dirs.begin(), cmp_dirs.end());
            auto c = compare_runs(dirs);
            std::cout << comparison_text(c);
            fs::path csv = cmp_csv.value_or("comparison.csv");
            std::ofstream f(csv);
            if (!f) throw IoError("cannot write " + csv.string());
            f << comparison_csv(c);
            return kExitOk;
        }
        if (*oracle) return cmd_oracle(oracle_env, oracle_file, gamma, dump_oracle);
    } catch (const InvalidConfiguration& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}
