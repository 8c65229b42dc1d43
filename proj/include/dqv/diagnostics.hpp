#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "dqv/agents.hpp"
#include "dqv/environment.hpp"
#include "dqv/mdp.hpp"
#include "dqv/stats.hpp"
#include "dqv/trainer.hpp"

namespace dqv {

struct EstimateCheckpoint {
    std::size_t training_step = 0;
    double avg_max_q = 0.0;
    std::size_t eval_episodes = 0;
};

class EstimateTrace {
public:
    void append(EstimateCheckpoint c) {
        require(c.eval_episodes >= 1, "checkpoint needs at least one evaluation episode");
        require(points_.empty() || c.training_step > points_.back().training_step,
                "trace steps must be strictly increasing");
        points_.push_back(c);
    }
    const std::vector<EstimateCheckpoint>& points() const { return points_; }
    bool empty() const { return points_.empty(); }
    const EstimateCheckpoint& back() const { return points_.back(); }

private:
    std::vector<EstimateCheckpoint> points_;
};

/// Rolls out n_episodes with the current policy (epsilon-greedy at
/// eval_epsilon) and averages max_a Q over every visited state.
inline EstimateCheckpoint record_estimate_checkpoint(const Agent& agent, Environment& env, std::size_t n_episodes,
                                                     std::size_t training_step, Rng& rng, EstimateTrace& trace,
                                                     double eval_epsilon = 0.05) {
    require(n_episodes >= 1, "need at least one evaluation episode");
    auto r = rollout(agent, env, agent.config().gamma, n_episodes, eval_epsilon, rng);
    EstimateCheckpoint c{training_step, r.avg_max_q, n_episodes};
    trace.append(c);
    return c;
}

struct Baseline {
    double value = 0.0;
    std::size_t visited = 0;
    std::size_t truncated = 0; // episodes that hit the step cap; their returns are truncated
};

/// Monte-Carlo average over every state visited in greedy rollouts of the
/// realised discounted return from that state onward.
inline Baseline compute_true_value_baseline(const Agent& agent, Environment& env, double gamma,
                                            std::size_t n_episodes, Rng& rng) {
    auto r = rollout(agent, env, gamma, n_episodes, 0.0, rng);
    return {r.avg_visited_return, r.visited, r.truncated};
}

struct BiasReport {
    EstimateTrace trace;
    double true_value_baseline = 0.0;
    double final_gap = 0.0;
    std::vector<double> per_seed_gaps;
};

inline BiasReport make_bias_report(EstimateTrace trace, double baseline) {
    require(!trace.empty(), "bias report needs a non-empty trace");
    BiasReport r;
    r.final_gap = trace.back().avg_max_q - baseline;
    r.true_value_baseline = baseline;
    r.trace = std::move(trace);
    return r;
}

struct VvsQReport {
    std::size_t sampled_states = 0;
    double fraction_v_exceeds_maxq = 0.0;
    double margin = 0.0;
};

/// Samples states with a uniform-random policy and reports how often
/// V(s) > max_a Q(s, a) + margin.
inline VvsQReport v_vs_maxq_report(const Agent& agent, Environment& env, std::size_t num_samples, double margin,
                                   Rng& rng) {
    if (!agent.has_v()) throw InvalidConfiguration("V-vs-maxQ report needs an agent with a V head");
    require(num_samples >= 1, "need at least one sampled state");
    std::size_t exceed = 0, n = 0;
    Observation obs = env.reset();
    while (n < num_samples) {
        auto out = agent.evaluate(obs);
        if (*out.v > max_of(out.q) + margin) ++exceed;
        ++n;
        EnvStep st = env.step(uniform_index(rng, env.num_actions()));
        obs = st.done() ? env.reset() : std::move(st.next_state);
    }
    return {n, static_cast<double>(exceed) / static_cast<double>(n), margin};
}

// ---------------------------------------------------------------------------
// Overestimation ordering experiment
// ---------------------------------------------------------------------------

struct BiasExperimentConfig {
    AgentConfig agent;
    std::size_t total_steps = 10'000;
    std::size_t replay_capacity = 10'000;
    std::size_t warmup = 500;
    std::size_t checkpoint_every = 1'000;
    std::size_t eval_episodes = 10;
    std::size_t baseline_episodes = 200;
    double eval_epsilon = 0.05;
    std::uint64_t first_seed = 1;
};

struct BiasRun {
    std::uint64_t seed = 0;
    bool diverged = false;
    BiasReport report;
};

/// Trains one agent on the given MDP and produces its bias report. Returns a
/// run marked diverged on numeric failure.
inline BiasRun run_bias_trial(const MdpSpec& mdp, Algorithm algorithm, std::uint64_t seed,
                              const BiasExperimentConfig& cfg) {
    BiasRun run;
    run.seed = seed;
    AgentConfig ac = cfg.agent;
    ac.algorithm = algorithm;
    auto env = mdp_as_environment(mdp, seed * 7919 + 11);
    auto eval_env = mdp_as_environment(mdp, seed * 7919 + 13);
    Agent agent(ac, env->observation_dim(), env->num_actions(), seed);
    ReplayBuffer buffer(cfg.replay_capacity, cfg.warmup);
    Rng rng(seed * 104729 + 17), eval_rng(seed * 104729 + 19);
    Trainer trainer(agent, *env, buffer, rng);
    EstimateTrace trace;
    try {
        trainer.run(cfg.total_steps, {nullptr, [&](std::size_t step) {
                                          if (step % cfg.checkpoint_every == 0 || step == cfg.total_steps)
                                              record_estimate_checkpoint(agent, *eval_env, cfg.eval_episodes, step,
                                                                         eval_rng, trace, cfg.eval_epsilon);
                                      }});
        auto base = compute_true_value_baseline(agent, *eval_env, ac.gamma, cfg.baseline_episodes, eval_rng);
        run.report = make_bias_report(std::move(trace), base.value);
        if (!std::isfinite(run.report.final_gap)) run.diverged = true;
    } catch (const NumericError&) {
        run.diverged = true;
    }
    return run;
}

struct OrderingClaim {
    Algorithm higher, lower;
    double median_higher = 0.0, median_lower = 0.0;
    double p_value = 1.0; // one-sided rank test: gaps(higher) > gaps(lower)
    bool median_ordered() const { return median_higher > median_lower; }
};

struct BiasOrderingResult {
    std::map<Algorithm, std::vector<BiasRun>> runs;
    std::map<Algorithm, std::vector<double>> gaps; // finite gaps only
    std::map<Algorithm, std::size_t> divergences;
    std::vector<OrderingClaim> claims;

    double median_gap(Algorithm a) const { return stats::median(gaps.at(a)); }
};

inline OrderingClaim test_ordering(const BiasOrderingResult& r, Algorithm hi, Algorithm lo) {
    OrderingClaim c{hi, lo};
    const auto& x = r.gaps.at(hi);
    const auto& y = r.gaps.at(lo);
    c.median_higher = stats::median(x);
    c.median_lower = stats::median(y);
    c.p_value = stats::mann_whitney_greater(x, y).p_value;
    return c;
}

/// Trains every algorithm over `seeds` seeds on the MDP and tests the claimed
/// gap ordering DQN > DQV-Max > DQV and DQN > DDQN for whichever of those
/// algorithms are present.
inline BiasOrderingResult bias_ordering_experiment(const MdpSpec& mdp, const std::vector<Algorithm>& algorithms,
                                                   std::size_t seeds, const BiasExperimentConfig& cfg) {
    require(seeds >= 1, "need at least one seed");
    BiasOrderingResult res;
    for (auto alg : algorithms) {
        auto& gaps = res.gaps[alg];
        res.divergences[alg] = 0;
        for (std::size_t i = 0; i < seeds; ++i) {
            auto run = run_bias_trial(mdp, alg, cfg.first_seed + i, cfg);
            if (run.diverged)
                ++res.divergences[alg];
            else
                gaps.push_back(run.report.final_gap);
            res.runs[alg].push_back(std::move(run));
        }
    }
    auto has = [&](Algorithm a) { return res.gaps.count(a) && !res.gaps.at(a).empty(); };
    const std::pair<Algorithm, Algorithm> claims[] = {{Algorithm::dqn, Algorithm::dqv_max},
                                                      {Algorithm::dqv_max, Algorithm::dqv},
                                                      {Algorithm::dqn, Algorithm::dqv},
                                                      {Algorithm::dqn, Algorithm::ddqn}};
    for (auto [hi, lo] : claims)
        if (has(hi) && has(lo)) res.claims.push_back(test_ordering(res, hi, lo));
    return res;
}

inline nlohmann::json to_json(const EstimateTrace& t) {
    auto a = nlohmann::json::array();
    for (const auto& c : t.points())
        a.push_back({{"step", c.training_step}, {"avg_max_q", c.avg_max_q}, {"eval_episodes", c.eval_episodes}});
    return a;
}

inline nlohmann::json to_json(const BiasReport& r) {
    return {{"trace", to_json(r.trace)},
            {"true_value_baseline", r.true_value_baseline},
            {"final_gap", r.final_gap},
            {"per_seed_gaps", r.per_seed_gaps}};
}

inline nlohmann::json to_json(const VvsQReport& r) {
    return {{"sampled_states", r.sampled_states},
            {"fraction_v_exceeds_maxq", r.fraction_v_exceeds_maxq},
            {"margin", r.margin}};
}

inline nlohmann::json to_json(const BiasOrderingResult& r) {
    nlohmann::json j;
    for (const auto& [alg, gaps] : r.gaps) {
        nlohmann::json a;
        a["gaps"] = gaps;
        a["divergences"] = r.divergences.at(alg);
        a["median_gap"] = gaps.empty() ? nlohmann::json(nullptr) : nlohmann::json(stats::median(gaps));
        j["algorithms"][to_string(alg)] = a;
    }
    auto claims = nlohmann::json::array();
    for (const auto& c : r.claims)
        claims.push_back({{"higher", to_string(c.higher)},
                          {"lower", to_string(c.lower)},
                          {"median_higher", c.median_higher},
                          {"median_lower", c.median_lower},
                          {"p_value", c.p_value}});
    j["claims"] = claims;
    return j;
}

} // namespace dqv
