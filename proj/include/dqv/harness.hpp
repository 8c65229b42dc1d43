#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <atomic>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "dqv/agents.hpp"
#include "dqv/diagnostics.hpp"
#include "dqv/environment.hpp"
#include "dqv/mdp.hpp"
#include "dqv/stats.hpp"
#include "dqv/tabular.hpp"
#include "dqv/trainer.hpp"

namespace dqv {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Environment registry
// ---------------------------------------------------------------------------

/// A named environment: either a tabular MDP or the cart-pole task.
/// Names: gridworld-<W>x<H>[-slip<P>][-step<R>], chain-<N>, bias-<K>[-noise<S>],
/// cartpole. File-backed MDPs use the name "file:<path>".
struct EnvSource {
    std::string name;
    std::optional<MdpSpec> mdp;
    EnvOptions options;

    std::unique_ptr<Environment> make(std::uint64_t seed) const {
        if (mdp) return mdp_as_environment(*mdp, seed, options);
        return make_cartpole_like(seed, options);
    }

    std::size_t num_actions() const { return mdp ? mdp->num_actions : 2; }

    /// Optimal expected discounted return from the initial distribution, when
    /// a tabular oracle exists.
    std::optional<double> oracle_initial_value(double gamma) const {
        if (!mdp || gamma >= 1.0) return std::nullopt;
        auto vi = value_iteration(*mdp, gamma, 1e-10);
        double v = 0.0;
        for (StateId s = 0; s < mdp->num_states; ++s) v += mdp->initial[s] * vi.v[s];
        return v;
    }
};

inline EnvSource make_env_source(const std::string& name, EnvOptions opts = {}) {
    EnvSource src{name, std::nullopt, opts};
    std::smatch m;
    static const std::regex grid(R"(gridworld-(\d+)x(\d+)(?:-slip([0-9.]+))?(?:-step(-?[0-9.]+))?)");
    static const std::regex chain(R"(chain-(\d+))");
    static const std::regex bias(R"(bias-(\d+)(?:-noise([0-9.]+))?)");
    try {
        if (std::regex_match(name, m, grid)) {
            double slip = m[3].matched ? std::stod(m[3]) : 0.0;
            double step = m[4].matched ? std::stod(m[4]) : 0.0;
            src.mdp = make_gridworld(std::stoul(m[1]), std::stoul(m[2]), 1.0, step, slip);
        } else if (std::regex_match(name, m, chain)) {
            src.mdp = make_gridworld(std::stoul(m[1]), 1, 1.0, 0.0, 0.0);
        } else if (std::regex_match(name, m, bias)) {
            src.mdp = make_bias_mdp(std::stoul(m[1]), m[2].matched ? std::stod(m[2]) : 1.0);
        } else if (name != "cartpole") {
            throw InvalidConfiguration("unknown environment '" + name + "'");
        }
    } catch (const InvalidArgument& e) {
        throw InvalidConfiguration("environment '" + name + "': " + e.what());
    }
    return src;
}

inline MdpSpec load_mdp_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open MDP file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfiguration("MDP file " + path.string() + " is not valid JSON: " + e.what());
    }
    try {
        return mdp_from_json(j);
    } catch (const InvalidArgument& e) {
        throw InvalidConfiguration("MDP file " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DiagnosticsConfig {
    bool enabled = true;
    std::size_t every = 5'000;   // estimate checkpoint cadence in env steps
    std::size_t episodes = 10;   // n evaluation episodes per checkpoint
    double eval_epsilon = 0.05;
    bool v_vs_q = true;
    std::size_t v_vs_q_samples = 500;
    double v_vs_q_margin = 0.0;
    std::size_t baseline_episodes = 100;
};

struct ExperimentConfig {
    std::string env = "gridworld-5x5";
    std::optional<std::string> env_file;
    EnvOptions env_options;
    AgentConfig agent;
    std::size_t total_steps = 50'000;
    std::vector<std::uint64_t> seeds{1};
    std::size_t eval_interval = 5'000;
    std::size_t eval_episodes = 10;
    std::size_t final_eval_episodes = 100;
    fs::path output_dir = "runs/default";
    std::size_t replay_capacity = 100'000;
    std::size_t warmup = 1'000;
    DiagnosticsConfig diagnostics;
    std::size_t checkpoint_interval = 0; // 0 = final checkpoint only
    bool log_wall_time = false;          // wall_ms breaks byte-identical logs, so it is opt-in
    std::optional<fs::path> dump_replay;
    std::size_t workers = 0; // 0 = one per seed, capped by hardware threads
    bool auto_epsilon_decay = true; // decay over 10% of total_steps unless the config sets decay_steps

    /// The agent config actually trained with.
    AgentConfig effective_agent() const {
        AgentConfig a = agent;
        if (auto_epsilon_decay) a.epsilon.decay_steps = std::max<std::size_t>(1, total_steps / 10);
        return a;
    }

    void validate() const {
        if (seeds.empty()) throw InvalidConfiguration("seeds must be non-empty");
        if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
            throw InvalidConfiguration("seeds must be distinct");
        if (total_steps < warmup) throw InvalidConfiguration("total_steps must be at least the replay warmup");
        if (replay_capacity == 0) throw InvalidConfiguration("replay capacity must be positive");
        if (agent.batch_size > replay_capacity)
            throw InvalidConfiguration("batch_size exceeds replay capacity");
        if (warmup < agent.batch_size) throw InvalidConfiguration("warmup must be at least batch_size");
        if (eval_interval == 0 || eval_episodes == 0 || final_eval_episodes == 0)
            throw InvalidConfiguration("evaluation cadence and episode counts must be positive");
        if (diagnostics.enabled && (diagnostics.every == 0 || diagnostics.episodes == 0))
            throw InvalidConfiguration("diagnostics cadence and episodes must be positive");
        effective_agent().validate();
    }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["env"] = c.env;
    j["env_file"] = c.env_file ? nlohmann::json(*c.env_file) : nlohmann::json(nullptr);
    j["max_steps"] = c.env_options.max_steps;
    j["clip_rewards"] = c.env_options.clip_rewards;
    j["agent"] = to_json(c.effective_agent());
    j["total_steps"] = c.total_steps;
    j["seeds"] = c.seeds;
    j["eval_interval"] = c.eval_interval;
    j["eval_episodes"] = c.eval_episodes;
    j["final_eval_episodes"] = c.final_eval_episodes;
    j["output_dir"] = c.output_dir.string();
    j["replay"] = {{"capacity", c.replay_capacity}, {"warmup", c.warmup}};
    const auto& d = c.diagnostics;
    j["diagnostics"] = {{"enabled", d.enabled},          {"every", d.every},
                        {"episodes", d.episodes},        {"eval_epsilon", d.eval_epsilon},
                        {"v_vs_q", d.v_vs_q},            {"v_vs_q_samples", d.v_vs_q_samples},
                        {"v_vs_q_margin", d.v_vs_q_margin}, {"baseline_episodes", d.baseline_episodes}};
    j["checkpoint_interval"] = c.checkpoint_interval;
    j["log_wall_time"] = c.log_wall_time;
    j["workers"] = c.workers;
    return j;
}

/// Overlays the keys of j on `c`. Unknown keys raise InvalidConfiguration.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig c = {}) {
    static const std::set<std::string> known = {
        "env", "env_file", "max_steps", "clip_rewards", "agent", "total_steps", "seeds", "eval_interval",
        "eval_episodes", "final_eval_episodes", "output_dir", "replay", "diagnostics", "checkpoint_interval",
        "log_wall_time", "workers"};
    if (!j.is_object()) throw InvalidConfiguration("config must be a JSON object");
    try {
        for (const auto& [k, v] : j.items())
            if (!known.count(k)) throw InvalidConfiguration("unknown config key '" + k + "'");
        if (j.contains("env")) c.env = j["env"].get<std::string>();
        if (j.contains("env_file")) {
            if (j["env_file"].is_null())
                c.env_file.reset();
            else
                c.env_file = j["env_file"].get<std::string>();
        }
        if (j.contains("max_steps")) c.env_options.max_steps = j["max_steps"].get<std::size_t>();
        if (j.contains("clip_rewards")) c.env_options.clip_rewards = j["clip_rewards"].get<bool>();
        if (j.contains("agent")) {
            c.agent = agent_config_from_json(j["agent"], c.agent);
            const auto& a = j["agent"];
            if (a.contains("epsilon") && a["epsilon"].is_object() && a["epsilon"].contains("decay_steps"))
                c.auto_epsilon_decay = false;
        }
        if (j.contains("total_steps")) c.total_steps = j["total_steps"].get<std::size_t>();
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        if (j.contains("eval_interval")) c.eval_interval = j["eval_interval"].get<std::size_t>();
        if (j.contains("eval_episodes")) c.eval_episodes = j["eval_episodes"].get<std::size_t>();
        if (j.contains("final_eval_episodes")) c.final_eval_episodes = j["final_eval_episodes"].get<std::size_t>();
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
        if (j.contains("replay")) {
            const auto& r = j["replay"];
            for (const auto& [k, v] : r.items())
                if (k != "capacity" && k != "warmup") throw InvalidConfiguration("unknown replay key '" + k + "'");
            c.replay_capacity = r.value("capacity", c.replay_capacity);
            c.warmup = r.value("warmup", c.warmup);
        }
        if (j.contains("diagnostics")) {
            const auto& d = j["diagnostics"];
            static const std::set<std::string> dk = {"enabled",        "every",         "episodes",
                                                     "eval_epsilon",   "v_vs_q",        "v_vs_q_samples",
                                                     "v_vs_q_margin", "baseline_episodes"};
            for (const auto& [k, v] : d.items())
                if (!dk.count(k)) throw InvalidConfiguration("unknown diagnostics key '" + k + "'");
            auto& o = c.diagnostics;
            o.enabled = d.value("enabled", o.enabled);
            o.every = d.value("every", o.every);
            o.episodes = d.value("episodes", o.episodes);
            o.eval_epsilon = d.value("eval_epsilon", o.eval_epsilon);
            o.v_vs_q = d.value("v_vs_q", o.v_vs_q);
            o.v_vs_q_samples = d.value("v_vs_q_samples", o.v_vs_q_samples);
            o.v_vs_q_margin = d.value("v_vs_q_margin", o.v_vs_q_margin);
            o.baseline_episodes = d.value("baseline_episodes", o.baseline_episodes);
        }
        if (j.contains("checkpoint_interval")) c.checkpoint_interval = j["checkpoint_interval"].get<std::size_t>();
        if (j.contains("log_wall_time")) c.log_wall_time = j["log_wall_time"].get<bool>();
        if (j.contains("workers")) c.workers = j["workers"].get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfiguration(std::string("malformed config: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfiguration("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfiguration("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(j);
}

inline EnvSource resolve_env(const ExperimentConfig& c) {
    if (c.env_file) {
        EnvSource src{"file:" + fs::path(*c.env_file).filename().string(), load_mdp_file(*c.env_file),
                      c.env_options};
        return src;
    }
    return make_env_source(c.env, c.env_options);
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

/// One JSONL log row. kind = "episode" for each completed episode, "step" for
/// the periodic evaluation records (every eval_interval env steps).
struct RunRecord {
    std::string kind;
    std::size_t step = 0;
    std::size_t episode = 0;
    std::optional<double> episode_return;
    double epsilon = 0.0;
    std::optional<double> loss_v;
    std::optional<double> loss_q;
    std::optional<double> eval_return; // step records: greedy discounted return from the initial state
    std::optional<double> wall_ms;
};

inline nlohmann::json to_json(const RunRecord& r) {
    auto opt = [](const std::optional<double>& x) { return x ? nlohmann::json(*x) : nlohmann::json(nullptr); };
    nlohmann::json j = {{"kind", r.kind},         {"step", r.step},         {"episode", r.episode},
                        {"episode_return", opt(r.episode_return)},         {"epsilon", r.epsilon},
                        {"loss_v", opt(r.loss_v)}, {"loss_q", opt(r.loss_q)}, {"eval_return", opt(r.eval_return)}};
    if (r.wall_ms) j["wall_ms"] = *r.wall_ms;
    return j;
}

/// Checks one parsed log line against the RunRecord schema.
inline bool valid_run_record(const nlohmann::json& j) {
    auto num_or_null = [&](const char* k) { return j.contains(k) && (j[k].is_number() || j[k].is_null()); };
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) return false;
    auto kind = j["kind"].get<std::string>();
    if (kind != "episode" && kind != "step") return false;
    if (!j.contains("step") || !j["step"].is_number_unsigned()) return false;
    if (!j.contains("episode") || !j["episode"].is_number_unsigned()) return false;
    if (!j.contains("epsilon") || !j["epsilon"].is_number()) return false;
    for (auto k : {"episode_return", "loss_v", "loss_q", "eval_return"})
        if (!num_or_null(k)) return false;
    if (j.contains("wall_ms") && !j["wall_ms"].is_number()) return false;
    return j.size() == 8 || (j.size() == 9 && j.contains("wall_ms"));
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
    if (!valid_run_record(j)) throw IoError("log line does not match the RunRecord schema");
    auto opt = [&](const char* k) -> std::optional<double> {
        return j[k].is_null() ? std::nullopt : std::optional<double>(j[k].get<double>());
    };
    RunRecord r;
    r.kind = j["kind"].get<std::string>();
    r.step = j["step"].get<std::size_t>();
    r.episode = j["episode"].get<std::size_t>();
    r.episode_return = opt("episode_return");
    r.epsilon = j["epsilon"].get<double>();
    r.loss_v = opt("loss_v");
    r.loss_q = opt("loss_q");
    r.eval_return = opt("eval_return");
    if (j.contains("wall_ms")) r.wall_ms = j["wall_ms"].get<double>();
    return r;
}

inline std::vector<RunRecord> read_run_log(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open log " + path.string());
    std::vector<RunRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(run_record_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Running experiments
// ---------------------------------------------------------------------------

struct SeedResult {
    std::uint64_t seed = 0;
    bool diverged = false;
    std::string error;
    double final_return = 0.0;       // greedy discounted return from the initial state
    double final_undiscounted = 0.0; // greedy undiscounted episode return
    std::optional<double> final_gap;
    std::optional<double> fraction_v_exceeds_maxq;
};

struct ExperimentSummary {
    std::string env;
    Algorithm algorithm = Algorithm::dqv;
    std::vector<SeedResult> seeds;
    std::optional<double> oracle_initial_value;
    std::size_t diverged() const {
        std::size_t n = 0;
        for (const auto& s : seeds) n += s.diverged ? 1 : 0;
        return n;
    }
    std::vector<double> final_returns() const {
        std::vector<double> out;
        for (const auto& s : seeds)
            if (!s.diverged) out.push_back(s.final_return);
        return out;
    }
};

inline nlohmann::json to_json(const ExperimentSummary& s) {
    nlohmann::json j;
    j["env"] = s.env;
    j["algorithm"] = to_string(s.algorithm);
    auto arr = nlohmann::json::array();
    for (const auto& r : s.seeds) {
        nlohmann::json e = {{"seed", r.seed},
                            {"diverged", r.diverged},
                            {"final_return", r.final_return},
                            {"final_undiscounted", r.final_undiscounted}};
        if (!r.error.empty()) e["error"] = r.error;
        if (r.final_gap) e["final_gap"] = *r.final_gap;
        if (r.fraction_v_exceeds_maxq) e["fraction_v_exceeds_maxq"] = *r.fraction_v_exceeds_maxq;
        arr.push_back(e);
    }
    j["seeds"] = arr;
    auto fr = s.final_returns();
    j["median_final_return"] = fr.empty() ? nlohmann::json(nullptr) : nlohmann::json(stats::median(fr));
    j["diverged"] = s.diverged();
    j["oracle_initial_value"] =
        s.oracle_initial_value ? nlohmann::json(*s.oracle_initial_value) : nlohmann::json(nullptr);
    return j;
}

inline fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / ("seed-" + std::to_string(seed)); }

namespace detail {

inline void write_json_file(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline void ensure_writable_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    auto probe = dir / ".write-probe";
    {
        std::ofstream p(probe);
        if (!p) throw IoError("output directory " + dir.string() + " is not writable");
    }
    fs::remove(probe, ec);
}

// Derived per-purpose seeds so that streams never overlap.
inline std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + salt;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace detail

/// Runs one seed end to end and writes its log, trace, checkpoint(s) and
/// diagnostics under <output_dir>/seed-<seed>/.
inline SeedResult run_seed(const ExperimentConfig& cfg, const EnvSource& src, std::uint64_t seed) {
    SeedResult res;
    res.seed = seed;
    const fs::path dir = seed_dir(cfg.output_dir, seed);
    fs::create_directories(dir);
    std::ofstream log(dir / "log.jsonl");
    if (!log) throw IoError("cannot write " + (dir / "log.jsonl").string());

    auto env = src.make(detail::mix(seed, 1));
    auto eval_env = src.make(detail::mix(seed, 2));
    auto diag_env = src.make(detail::mix(seed, 3));
    const AgentConfig agent_cfg = cfg.effective_agent();
    Agent agent(agent_cfg, env->observation_dim(), env->num_actions(), seed);
    ReplayBuffer buffer(cfg.replay_capacity, cfg.warmup);
    Rng rng(detail::mix(seed, 4)), eval_rng(detail::mix(seed, 5)), diag_rng(detail::mix(seed, 6));
    Trainer trainer(agent, *env, buffer, rng);
    EstimateTrace trace;
    const auto t0 = std::chrono::steady_clock::now();
    auto wall = [&]() -> std::optional<double> {
        if (!cfg.log_wall_time) return std::nullopt;
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    };
    const double gamma = cfg.agent.gamma;

    TrainHooks hooks;
    hooks.on_episode = [&](const EpisodeEnd& e) {
        RunRecord r{"episode", e.step, e.episode, e.episode_return, e.epsilon, e.last_update.loss_v,
                    e.last_update.loss_q, std::nullopt, wall()};
        log << to_json(r).dump() << '\n';
    };
    hooks.on_step = [&](std::size_t step) {
        if (step % cfg.eval_interval == 0) {
            auto ev = rollout(agent, *eval_env, gamma, cfg.eval_episodes, 0.0, eval_rng);
            RunRecord r{"step",
                        step,
                        trainer.episodes(),
                        std::nullopt,
                        epsilon_at(agent_cfg.epsilon, step),
                        trainer.last_update().loss_v,
                        trainer.last_update().loss_q,
                        ev.avg_initial_return,
                        wall()};
            log << to_json(r).dump() << '\n';
        }
        if (cfg.diagnostics.enabled && (step % cfg.diagnostics.every == 0 || step == cfg.total_steps))
            record_estimate_checkpoint(agent, *diag_env, cfg.diagnostics.episodes, step, diag_rng, trace,
                                       cfg.diagnostics.eval_epsilon);
        if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0)
            detail::write_json_file(dir / ("checkpoint-" + std::to_string(step) + ".json"), agent.to_json());
    };

    try {
        trainer.run(cfg.total_steps, hooks);
    } catch (const NumericError& e) {
        res.diverged = true;
        res.error = e.what();
        log.flush();
        detail::write_json_file(dir / "diverged.json",
                                {{"seed", seed}, {"step", trainer.steps()}, {"error", e.what()}});
        return res;
    }
    log.flush();

    auto fin = rollout(agent, *eval_env, gamma, cfg.final_eval_episodes, 0.0, eval_rng);
    res.final_return = fin.avg_initial_return;
    res.final_undiscounted = fin.avg_undiscounted;
    detail::write_json_file(dir / "checkpoint.json", agent.to_json());

    nlohmann::json diag;
    diag["final_eval"] = {{"episodes", fin.episodes},
                          {"avg_initial_return", fin.avg_initial_return},
                          {"avg_visited_return", fin.avg_visited_return},
                          {"avg_undiscounted", fin.avg_undiscounted},
                          {"truncated", fin.truncated}};
    if (cfg.diagnostics.enabled && !trace.empty()) {
        auto base = compute_true_value_baseline(agent, *diag_env, gamma, cfg.diagnostics.baseline_episodes, diag_rng);
        auto report = make_bias_report(trace, base.value);
        res.final_gap = report.final_gap;
        diag["bias"] = to_json(report);
        diag["bias"]["baseline_visited_states"] = base.visited;
        diag["bias"]["baseline_truncated_episodes"] = base.truncated;
        if (auto oracle = src.oracle_initial_value(gamma))
            diag["bias"]["oracle_initial_value_extension"] = *oracle;
        std::ofstream csv(dir / "trace.csv");
        csv << "step,avg_max_q,baseline,seed,algorithm,env\n";
        for (const auto& c : report.trace.points())
            csv << c.training_step << ',' << nlohmann::json(c.avg_max_q).dump() << ','
                << nlohmann::json(base.value).dump() << ',' << seed << ',' << to_string(cfg.agent.algorithm) << ','
                << src.name << '\n';
    }
    if (cfg.diagnostics.enabled && cfg.diagnostics.v_vs_q && agent.has_v()) {
        auto rep = v_vs_maxq_report(agent, *diag_env, cfg.diagnostics.v_vs_q_samples, cfg.diagnostics.v_vs_q_margin,
                                    diag_rng);
        res.fraction_v_exceeds_maxq = rep.fraction_v_exceeds_maxq;
        diag["v_vs_q"] = to_json(rep);
    }
    detail::write_json_file(dir / "diagnostics.json", diag);
    if (cfg.dump_replay) {
        fs::path p = *cfg.dump_replay;
        p += "." + std::to_string(seed) + ".jsonl";
        std::ofstream out(p);
        if (!out) throw IoError("cannot write " + p.string());
        buffer.write_jsonl(out);
    }
    return res;
}

/// Validates the config, checks the output directory, runs every seed (in
/// parallel worker threads) and writes config.json and summary.json.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    EnvSource src = resolve_env(cfg);
    {
        // build one agent up front so that shape errors surface as config errors
        auto probe = src.make(0);
        Agent check(cfg.effective_agent(), probe->observation_dim(), probe->num_actions(), 0);
    }
    detail::ensure_writable_dir(cfg.output_dir);
    auto resolved = to_json(cfg);
    resolved["env_name"] = src.name;
    if (src.mdp) resolved["mdp"] = to_json(*src.mdp);
    detail::write_json_file(cfg.output_dir / "config.json", resolved);

    ExperimentSummary summary;
    summary.env = src.name;
    summary.algorithm = cfg.agent.algorithm;
    summary.oracle_initial_value = src.oracle_initial_value(cfg.agent.gamma);
    summary.seeds.resize(cfg.seeds.size());

    std::size_t workers = cfg.workers;
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(cfg.seeds.size());
    auto work = [&] {
        for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
            try {
                summary.seeds[i] = run_seed(cfg, src, cfg.seeds[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    detail::write_json_file(cfg.output_dir / "summary.json", to_json(summary));
    return summary;
}

} // namespace dqv
