#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "dqv/core.hpp"
#include "dqv/environment.hpp"
#include "dqv/network.hpp"
#include "dqv/replay.hpp"

namespace dqv {

enum class Algorithm { dqn, ddqn, dqv, dqv_max, hard_dqv, dueling_dqv };

inline std::string to_string(Algorithm a) {
    switch (a) {
    case Algorithm::dqn: return "dqn";
    case Algorithm::ddqn: return "ddqn";
    case Algorithm::dqv: return "dqv";
    case Algorithm::dqv_max: return "dqv-max";
    case Algorithm::hard_dqv: return "hard-dqv";
    default: return "dueling-dqv";
    }
}

inline Algorithm algorithm_from_string(const std::string& s) {
    for (auto a : {Algorithm::dqn, Algorithm::ddqn, Algorithm::dqv, Algorithm::dqv_max, Algorithm::hard_dqv,
                   Algorithm::dueling_dqv})
        if (to_string(a) == s) return a;
    throw InvalidConfiguration("unknown algorithm '" + s + "'");
}

/// What the target-sync counter counts.
enum class SyncUnit { updates, env_steps };

struct AgentConfig {
    Algorithm algorithm = Algorithm::dqv;
    double gamma = 0.99;
    OptimizerConfig optimizer;
    std::size_t batch_size = 32;
    std::size_t target_sync_period = 500; // c
    SyncUnit sync_unit = SyncUnit::updates;
    std::size_t train_every = 1;          // environment steps per update
    EpsilonSchedule epsilon;
    bool huber = false;

    // network shape
    std::vector<std::size_t> trunk{64};
    Activation activation = Activation::relu;
    bool use_bias = true;
    std::optional<std::size_t> v_head_depth; // dueling only; defaults to the deepest trunk layer
    std::size_t head_width = 32;             // dueling head hidden width

    void validate() const {
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidConfiguration("gamma must lie in [0, 1]");
        if (batch_size < 1) throw InvalidConfiguration("batch_size must be at least 1");
        if (target_sync_period < 1) throw InvalidConfiguration("target_sync_period must be at least 1");
        if (train_every < 1) throw InvalidConfiguration("train_every must be at least 1");
        if (!(optimizer.learning_rate > 0.0)) throw InvalidConfiguration("learning_rate must be positive");
        if (v_head_depth && algorithm != Algorithm::dueling_dqv)
            throw InvalidConfiguration("v_head_depth applies to dueling-dqv only");
        try {
            epsilon.validate();
        } catch (const InvalidArgument& e) {
            throw InvalidConfiguration(e.what());
        }
    }
};

using Batch = std::vector<const Transition*>;

inline Batch as_batch(const std::vector<Transition>& ts) {
    Batch b;
    b.reserve(ts.size());
    for (const auto& t : ts) b.push_back(&t);
    return b;
}

// ---------------------------------------------------------------------------
// Target rules. Each takes only the networks its rule reads.
// ---------------------------------------------------------------------------

/// DQV: y = r + gamma V(s'; phi_target), r on terminal transitions. The same
/// vector feeds both the Q loss and the V loss.
inline Vector dqv_targets(std::span<const Transition* const> batch, const Network& phi_target, double gamma) {
    if (!phi_target.topology().has_v()) throw InvalidConfiguration("DQV targets need a network with a V head");
    Vector y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& t = *batch[i];
        y[i] = t.terminal ? t.reward : t.reward + gamma * *phi_target.forward(t.next_state).v;
    }
    return y;
}

struct DqvMaxTargets {
    Vector v; // r + gamma max_a Q(s', a; theta_target)
    Vector q; // r + gamma V(s'; phi_online)
};

inline DqvMaxTargets dqv_max_targets(std::span<const Transition* const> batch, const Network& theta_target,
                                     const Network& phi_online, double gamma) {
    if (!theta_target.topology().has_q()) throw InvalidConfiguration("DQV-Max needs a Q target network");
    if (!phi_online.topology().has_v()) throw InvalidConfiguration("DQV-Max needs a V network");
    DqvMaxTargets out{Vector(batch.size()), Vector(batch.size())};
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& t = *batch[i];
        if (t.terminal) {
            out.v[i] = out.q[i] = t.reward;
            continue;
        }
        out.v[i] = t.reward + gamma * max_of(theta_target.forward(t.next_state).q);
        out.q[i] = t.reward + gamma * *phi_online.forward(t.next_state).v;
    }
    return out;
}

inline Vector dqn_targets(std::span<const Transition* const> batch, const Network& theta_target, double gamma) {
    if (!theta_target.topology().has_q()) throw InvalidConfiguration("DQN targets need a Q head");
    Vector y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& t = *batch[i];
        y[i] = t.terminal ? t.reward : t.reward + gamma * max_of(theta_target.forward(t.next_state).q);
    }
    return y;
}

/// Double DQN: the online network selects argmax_a (first index on ties), the
/// target network evaluates it.
inline Vector ddqn_targets(std::span<const Transition* const> batch, const Network& theta_online,
                           const Network& theta_target, double gamma) {
    if (!theta_online.topology().has_q() || !theta_target.topology().has_q())
        throw InvalidConfiguration("DDQN targets need Q heads");
    Vector y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& t = *batch[i];
        if (t.terminal) {
            y[i] = t.reward;
            continue;
        }
        auto sel = theta_online.forward(t.next_state).q;
        auto a = static_cast<std::size_t>(std::max_element(sel.begin(), sel.end()) - sel.begin());
        y[i] = t.reward + gamma * theta_target.forward(t.next_state).q[a];
    }
    return y;
}

struct UpdateStats {
    std::optional<double> loss_v;
    std::optional<double> loss_q;
};

/// One agent: online networks, target copy, optimiser states and the target
/// sync counter (total_a in the update-counting interpretation).
///
/// Network roles per algorithm:
///   dqn, ddqn    theta + theta_target
///   dqv          theta + phi + phi_target
///   dqv-max      theta + theta_target + phi
///   hard-dqv     shared (hard-shared head) + shared_target
///   dueling-dqv  shared (dueling head) + shared_target
class Agent {
public:
    Agent(AgentConfig cfg, std::size_t observation_dim, std::size_t num_actions, std::uint64_t seed)
        : cfg_(std::move(cfg)), obs_dim_(observation_dim), num_actions_(num_actions) {
        cfg_.validate();
        require(observation_dim > 0 && num_actions > 0, "agent needs observations and actions");
        NetworkTopology base;
        base.input_dim = observation_dim;
        base.trunk = cfg_.trunk;
        base.num_actions = num_actions;
        base.activation = cfg_.activation;
        base.bias = cfg_.use_bias;
        const std::uint64_t q_seed = seed * 2654435761ULL + 1, v_seed = seed * 2654435761ULL + 2;
        switch (cfg_.algorithm) {
        case Algorithm::dqn:
        case Algorithm::ddqn:
        case Algorithm::dqv:
        case Algorithm::dqv_max: {
            auto tq = base;
            tq.head = HeadMode::separate_q;
            theta_ = init_network(tq, q_seed);
            if (cfg_.algorithm != Algorithm::dqv) theta_target_ = *theta_;
            if (cfg_.algorithm == Algorithm::dqv || cfg_.algorithm == Algorithm::dqv_max) {
                auto tv = base;
                tv.head = HeadMode::separate_v;
                phi_ = init_network(tv, v_seed);
                if (cfg_.algorithm == Algorithm::dqv) phi_target_ = *phi_;
            }
            break;
        }
        case Algorithm::hard_dqv: {
            auto t = base;
            t.head = HeadMode::hard_shared;
            shared_ = init_network(t, q_seed);
            shared_target_ = *shared_;
            break;
        }
        case Algorithm::dueling_dqv: {
            auto t = base;
            t.head = HeadMode::dueling;
            t.v_head_depth = cfg_.v_head_depth.value_or(cfg_.trunk.size());
            t.v_head_width = cfg_.head_width;
            t.q_head_width = cfg_.head_width;
            try {
                t.validate();
            } catch (const InvalidArgument& e) {
                throw InvalidConfiguration(e.what());
            }
            shared_ = init_network(t, q_seed);
            shared_target_ = *shared_;
            break;
        }
        }
    }

    const AgentConfig& config() const { return cfg_; }
    Algorithm algorithm() const { return cfg_.algorithm; }
    std::size_t observation_dim() const { return obs_dim_; }
    std::size_t num_actions() const { return num_actions_; }
    std::size_t update_counter() const { return total_a_; }
    std::size_t updates_performed() const { return updates_; }

    bool has_v() const { return phi_.has_value() || shared_.has_value(); }

    Vector q_values(std::span<const double> obs) const { return q_network().forward(obs).q; }

    std::optional<double> v_value(std::span<const double> obs) const {
        if (phi_) return phi_->forward(obs).v;
        if (shared_) return shared_->forward(obs).v;
        return std::nullopt;
    }

    ForwardOutput evaluate(std::span<const double> obs) const {
        if (shared_) return shared_->forward(obs);
        ForwardOutput out;
        out.q = theta_->forward(obs).q;
        if (phi_) out.v = phi_->forward(obs).v;
        return out;
    }

    ActionId act(std::span<const double> obs, double epsilon, Rng& rng) const {
        if (epsilon >= 1.0) return uniform_index(rng, num_actions_);
        return select_action(q_values(obs), epsilon, rng);
    }

    /// Samples one minibatch and applies update_on_batch.
    UpdateStats update_step(const ReplayBuffer& buffer, Rng& rng) {
        auto batch = buffer.sample(cfg_.batch_size, rng);
        return update_on_batch(batch);
    }

    /// One gradient step per loss on the given batch, then the sync counter.
    /// Targets are computed from pre-update parameters before any step.
    UpdateStats update_on_batch(std::span<const Transition* const> batch) {
        require(!batch.empty(), "empty batch");
        for (const auto* t : batch)
            require(t->state.size() == obs_dim_ && t->next_state.size() == obs_dim_ &&
                        t->action < num_actions_,
                    "transition does not match the agent's shapes");
        UpdateStats stats;
        const double g = cfg_.gamma;
        switch (cfg_.algorithm) {
        case Algorithm::dqn: {
            auto y = dqn_targets(batch, *theta_target_, g);
            stats.loss_q = fit_q(*theta_, theta_opt_, batch, y);
            break;
        }
        case Algorithm::ddqn: {
            auto y = ddqn_targets(batch, *theta_, *theta_target_, g);
            stats.loss_q = fit_q(*theta_, theta_opt_, batch, y);
            break;
        }
        case Algorithm::dqv: {
            auto y = dqv_targets(batch, *phi_target_, g);
            stats.loss_q = fit_q(*theta_, theta_opt_, batch, y);
            stats.loss_v = fit_v(*phi_, phi_opt_, batch, y);
            break;
        }
        case Algorithm::dqv_max: {
            auto targets = dqv_max_targets(batch, *theta_target_, *phi_, g);
            stats.loss_q = fit_q(*theta_, theta_opt_, batch, targets.q);
            stats.loss_v = fit_v(*phi_, phi_opt_, batch, targets.v);
            break;
        }
        case Algorithm::hard_dqv:
        case Algorithm::dueling_dqv: {
            auto y = dqv_targets(batch, *shared_target_, g);
            auto [lv, lq] = fit_shared(batch, y);
            stats.loss_v = lv;
            stats.loss_q = lq;
            break;
        }
        }
        ++updates_;
        if (cfg_.sync_unit == SyncUnit::updates) tick();
        return stats;
    }

    /// Call once per environment step; drives the sync counter when it counts
    /// environment actions.
    void on_env_step() {
        if (cfg_.sync_unit == SyncUnit::env_steps) tick();
    }

    void sync_targets() {
        if (theta_target_) theta_target_->params() = theta_->params();
        if (phi_target_) phi_target_->params() = phi_->params();
        if (shared_target_) shared_target_->params() = shared_->params();
    }

    // network access (tests, diagnostics, checkpoints)
    const Network& q_network() const { return shared_ ? *shared_ : *theta_; }
    const std::optional<Network>& theta() const { return theta_; }
    const std::optional<Network>& theta_target() const { return theta_target_; }
    const std::optional<Network>& phi() const { return phi_; }
    const std::optional<Network>& phi_target() const { return phi_target_; }
    const std::optional<Network>& shared() const { return shared_; }
    const std::optional<Network>& shared_target() const { return shared_target_; }
    std::optional<Network>& theta() { return theta_; }
    std::optional<Network>& phi() { return phi_; }
    std::optional<Network>& shared() { return shared_; }

    /// Online network that owns the bootstrap targets, paired with its copy.
    bool targets_synced() const {
        auto eq = [](const std::optional<Network>& a, const std::optional<Network>& b) {
            return !b || a->params() == b->params();
        };
        return eq(theta_, theta_target_) && eq(phi_, phi_target_) && eq(shared_, shared_target_);
    }

    nlohmann::json to_json() const;
    static Agent from_json(const nlohmann::json& j);

private:
    Agent() = default;

    void tick() {
        if (++total_a_ == cfg_.target_sync_period) {
            sync_targets();
            total_a_ = 0;
        }
    }

    // d loss / d prediction for 1/2 (pred - y)^2 (or Huber with delta 1), batch-mean
    double residual_grad(double pred, double y, std::size_t n) const {
        double d = pred - y;
        if (cfg_.huber) d = std::clamp(d, -1.0, 1.0);
        return d / static_cast<double>(n);
    }

    double loss_term(double pred, double y) const {
        double d = pred - y;
        if (cfg_.huber && std::abs(d) > 1.0) return std::abs(d) - 0.5;
        return 0.5 * d * d;
    }

    void check_loss(double loss, const char* which) const {
        if (!std::isfinite(loss))
            throw NumericError(std::string("non-finite ") + which + " loss in " + to_string(cfg_.algorithm) +
                               " after " + std::to_string(updates_) + " updates");
    }

    // Q loss: gradient flows only through the taken action's output.
    double fit_q(Network& net, OptimizerState& opt, std::span<const Transition* const> batch, const Vector& y) {
        Vector grad(net.size(), 0.0);
        ForwardCache cache;
        OutputGrad og;
        double loss = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& t = *batch[i];
            auto out = net.forward(t.state, cache);
            const double pred = out.q[t.action];
            loss += loss_term(pred, y[i]);
            og.q.assign(num_actions_, 0.0);
            og.q[t.action] = residual_grad(pred, y[i], batch.size());
            net.accumulate_gradient(cache, og, grad);
        }
        loss /= static_cast<double>(batch.size());
        check_loss(loss, "Q");
        sgd_step(net, grad, cfg_.optimizer, opt);
        return loss;
    }

    double fit_v(Network& net, OptimizerState& opt, std::span<const Transition* const> batch, const Vector& y) {
        Vector grad(net.size(), 0.0);
        ForwardCache cache;
        OutputGrad og;
        double loss = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& t = *batch[i];
            auto out = net.forward(t.state, cache);
            loss += loss_term(*out.v, y[i]);
            og.v = residual_grad(*out.v, y[i], batch.size());
            net.accumulate_gradient(cache, og, grad);
        }
        loss /= static_cast<double>(batch.size());
        check_loss(loss, "V");
        sgd_step(net, grad, cfg_.optimizer, opt);
        return loss;
    }

    // V and Q losses summed into a single step on the shared parameters.
    std::pair<double, double> fit_shared(std::span<const Transition* const> batch, const Vector& y) {
        Network& net = *shared_;
        Vector grad(net.size(), 0.0);
        ForwardCache cache;
        OutputGrad og;
        double lv = 0.0, lq = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& t = *batch[i];
            auto out = net.forward(t.state, cache);
            const double q = out.q[t.action];
            lv += loss_term(*out.v, y[i]);
            lq += loss_term(q, y[i]);
            og.q.assign(num_actions_, 0.0);
            og.q[t.action] = residual_grad(q, y[i], batch.size());
            og.v = residual_grad(*out.v, y[i], batch.size());
            net.accumulate_gradient(cache, og, grad);
        }
        lv /= static_cast<double>(batch.size());
        lq /= static_cast<double>(batch.size());
        check_loss(lv, "V");
        check_loss(lq, "Q");
        sgd_step(net, grad, cfg_.optimizer, shared_opt_);
        return {lv, lq};
    }

    AgentConfig cfg_;
    std::size_t obs_dim_ = 0;
    std::size_t num_actions_ = 0;
    std::optional<Network> theta_, theta_target_, phi_, phi_target_, shared_, shared_target_;
    OptimizerState theta_opt_, phi_opt_, shared_opt_;
    std::size_t total_a_ = 0;
    std::size_t updates_ = 0;
};

// ---------------------------------------------------------------------------
// Policy rollouts
// ---------------------------------------------------------------------------

struct RolloutSummary {
    double avg_visited_return = 0.0; // mean over every visited state of its realised discounted return
    double avg_initial_return = 0.0; // mean discounted return from the first state of each episode
    double avg_undiscounted = 0.0;   // mean undiscounted episode return
    double avg_max_q = 0.0;          // mean max_a Q over every visited state
    std::size_t visited = 0;
    std::size_t episodes = 0;
    std::size_t truncated = 0;
};

/// Runs num_episodes epsilon-greedy rollouts (ties random) and summarises them.
inline RolloutSummary rollout(const Agent& agent, Environment& env, double gamma, std::size_t num_episodes,
                              double epsilon, Rng& rng) {
    RolloutSummary s;
    double sum_visited = 0.0, sum_initial = 0.0, sum_undisc = 0.0, sum_maxq = 0.0;
    std::vector<double> rewards;
    for (std::size_t ep = 0; ep < num_episodes; ++ep) {
        Observation obs = env.reset();
        rewards.clear();
        bool truncated = false;
        while (true) {
            Vector q = agent.q_values(obs);
            sum_maxq += max_of(q);
            ActionId a = select_action(q, epsilon, rng);
            EnvStep st = env.step(a);
            rewards.push_back(st.reward);
            if (st.done()) {
                truncated = st.truncated;
                break;
            }
            obs = std::move(st.next_state);
        }
        double g_ret = 0.0;
        for (std::size_t k = rewards.size(); k-- > 0;) {
            g_ret = rewards[k] + gamma * g_ret;
            sum_visited += g_ret;
            sum_undisc += rewards[k];
        }
        sum_initial += g_ret;
        s.visited += rewards.size();
        s.truncated += truncated ? 1 : 0;
        ++s.episodes;
    }
    if (s.visited > 0) {
        s.avg_visited_return = sum_visited / static_cast<double>(s.visited);
        s.avg_max_q = sum_maxq / static_cast<double>(s.visited);
    }
    if (s.episodes > 0) {
        s.avg_initial_return = sum_initial / static_cast<double>(s.episodes);
        s.avg_undiscounted = sum_undisc / static_cast<double>(s.episodes);
    }
    return s;
}

/// Greedy (epsilon = 0, random ties) evaluation: average over every visited
/// state of the discounted return realised from that state to episode end.
inline double greedy_policy_value(const Agent& agent, Environment& env, double gamma, std::size_t num_episodes,
                                  Rng& rng) {
    return rollout(agent, env, gamma, num_episodes, 0.0, rng).avg_visited_return;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr const char* kAgentFormat = "dqv-agent/1";

inline nlohmann::json to_json(const EpsilonSchedule& e) {
    return {{"start", e.eps_start}, {"end", e.eps_end}, {"decay_steps", e.decay_steps}};
}

inline nlohmann::json to_json(const AgentConfig& c) {
    nlohmann::json j = {
        {"algorithm", to_string(c.algorithm)},
        {"gamma", c.gamma},
        {"learning_rate", c.optimizer.learning_rate},
        {"optimizer", c.optimizer.kind == OptimizerKind::sgd ? "sgd" : "rmsprop"},
        {"rms_decay", c.optimizer.rho},
        {"rms_epsilon", c.optimizer.epsilon},
        {"clip_norm", c.optimizer.clip_norm},
        {"batch_size", c.batch_size},
        {"target_sync_period", c.target_sync_period},
        {"sync_unit", c.sync_unit == SyncUnit::updates ? "updates" : "env_steps"},
        {"train_every", c.train_every},
        {"epsilon", to_json(c.epsilon)},
        {"huber", c.huber},
        {"trunk", c.trunk},
        {"activation", c.activation == Activation::relu ? "relu" : "tanh"},
        {"bias", c.use_bias},
        {"head_width", c.head_width},
    };
    j["v_head_depth"] = c.v_head_depth ? nlohmann::json(*c.v_head_depth) : nlohmann::json(nullptr);
    return j;
}

/// Reads keys present in j on top of `base`; unknown keys are rejected.
inline AgentConfig agent_config_from_json(const nlohmann::json& j, AgentConfig c = {}) {
    static const std::set<std::string> known = {
        "algorithm", "gamma", "learning_rate", "optimizer", "rms_decay", "rms_epsilon", "clip_norm",
        "batch_size", "target_sync_period", "sync_unit", "train_every", "epsilon", "huber", "trunk",
        "activation", "bias", "head_width", "v_head_depth"};
    try {
        for (const auto& [k, v] : j.items())
            if (!known.count(k)) throw InvalidConfiguration("unknown agent key '" + k + "'");
        if (j.contains("algorithm")) c.algorithm = algorithm_from_string(j["algorithm"].get<std::string>());
        if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
        if (j.contains("learning_rate")) c.optimizer.learning_rate = j["learning_rate"].get<double>();
        if (j.contains("optimizer")) {
            auto s = j["optimizer"].get<std::string>();
            if (s != "sgd" && s != "rmsprop") throw InvalidConfiguration("optimizer must be sgd or rmsprop");
            c.optimizer.kind = s == "sgd" ? OptimizerKind::sgd : OptimizerKind::rmsprop;
        }
        if (j.contains("rms_decay")) c.optimizer.rho = j["rms_decay"].get<double>();
        if (j.contains("rms_epsilon")) c.optimizer.epsilon = j["rms_epsilon"].get<double>();
        if (j.contains("clip_norm")) c.optimizer.clip_norm = j["clip_norm"].get<double>();
        if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("target_sync_period")) c.target_sync_period = j["target_sync_period"].get<std::size_t>();
        if (j.contains("sync_unit")) {
            auto s = j["sync_unit"].get<std::string>();
            if (s != "updates" && s != "env_steps")
                throw InvalidConfiguration("sync_unit must be updates or env_steps");
            c.sync_unit = s == "updates" ? SyncUnit::updates : SyncUnit::env_steps;
        }
        if (j.contains("train_every")) c.train_every = j["train_every"].get<std::size_t>();
        if (j.contains("epsilon")) {
            const auto& e = j["epsilon"];
            c.epsilon.eps_start = e.value("start", c.epsilon.eps_start);
            c.epsilon.eps_end = e.value("end", c.epsilon.eps_end);
            c.epsilon.decay_steps = e.value("decay_steps", c.epsilon.decay_steps);
        }
        if (j.contains("huber")) c.huber = j["huber"].get<bool>();
        if (j.contains("trunk")) c.trunk = j["trunk"].get<std::vector<std::size_t>>();
        if (j.contains("activation")) {
            auto s = j["activation"].get<std::string>();
            if (s != "relu" && s != "tanh") throw InvalidConfiguration("activation must be relu or tanh");
            c.activation = s == "relu" ? Activation::relu : Activation::tanh;
        }
        if (j.contains("bias")) c.use_bias = j["bias"].get<bool>();
        if (j.contains("head_width")) c.head_width = j["head_width"].get<std::size_t>();
        if (j.contains("v_head_depth")) {
            if (j["v_head_depth"].is_null())
                c.v_head_depth.reset();
            else
                c.v_head_depth = j["v_head_depth"].get<std::size_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfiguration(std::string("malformed agent config: ") + e.what());
    }
    return c;
}

inline nlohmann::json Agent::to_json() const {
    nlohmann::json j;
    j["format"] = kAgentFormat;
    j["config"] = dqv::to_json(cfg_);
    j["observation_dim"] = obs_dim_;
    j["num_actions"] = num_actions_;
    j["total_a"] = total_a_;
    j["updates"] = updates_;
    auto put = [&](const char* key, const std::optional<Network>& n) {
        if (n) j["networks"][key] = dqv::to_json(*n);
    };
    put("theta", theta_);
    put("theta_target", theta_target_);
    put("phi", phi_);
    put("phi_target", phi_target_);
    put("shared", shared_);
    put("shared_target", shared_target_);
    j["optimizers"] = {{"theta", theta_opt_.mean_square}, {"phi", phi_opt_.mean_square},
                       {"shared", shared_opt_.mean_square}};
    j["optimizer_steps"] = {theta_opt_.steps, phi_opt_.steps, shared_opt_.steps};
    return j;
}

inline Agent Agent::from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kAgentFormat)
            throw InvalidArgument("unsupported agent checkpoint format");
        Agent a;
        a.cfg_ = agent_config_from_json(j.at("config"));
        a.obs_dim_ = j.at("observation_dim").get<std::size_t>();
        a.num_actions_ = j.at("num_actions").get<std::size_t>();
        a.total_a_ = j.at("total_a").get<std::size_t>();
        a.updates_ = j.at("updates").get<std::size_t>();
        const auto& nets = j.at("networks");
        auto get = [&](const char* key, std::optional<Network>& n) {
            if (nets.contains(key)) n = network_from_json(nets[key]);
        };
        get("theta", a.theta_);
        get("theta_target", a.theta_target_);
        get("phi", a.phi_);
        get("phi_target", a.phi_target_);
        get("shared", a.shared_);
        get("shared_target", a.shared_target_);
        if (!a.theta_ && !a.shared_) throw InvalidArgument("checkpoint has no Q network");
        const auto& o = j.at("optimizers");
        a.theta_opt_.mean_square = o.at("theta").get<Vector>();
        a.phi_opt_.mean_square = o.at("phi").get<Vector>();
        a.shared_opt_.mean_square = o.at("shared").get<Vector>();
        auto steps = j.at("optimizer_steps").get<std::vector<std::size_t>>();
        a.theta_opt_.steps = steps.at(0);
        a.phi_opt_.steps = steps.at(1);
        a.shared_opt_.steps = steps.at(2);
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed agent checkpoint: ") + e.what());
    }
}

} // namespace dqv
