#pragma once

#include <functional>
#include <optional>

#include "dqv/agents.hpp"
#include "dqv/environment.hpp"
#include "dqv/replay.hpp"

namespace dqv {

struct EpisodeEnd {
    std::size_t step = 0; // environment steps completed so far
    std::size_t episode = 0;
    double episode_return = 0.0;
    double epsilon = 0.0;
    bool truncated = false;
    UpdateStats last_update;
};

struct TrainHooks {
    std::function<void(const EpisodeEnd&)> on_episode;
    // called after environment step `step` (1-based count) has been processed
    std::function<void(std::size_t step)> on_step;
};

/// The interleaved act/store/learn loop: each environment step stores the
/// transition, and once insert_count reaches the warmup one update_step runs
/// every train_every steps.
class Trainer {
public:
    Trainer(Agent& agent, Environment& env, ReplayBuffer& buffer, Rng& rng)
        : agent_(agent), env_(env), buffer_(buffer), rng_(rng) {}

    void run(std::size_t steps, const TrainHooks& hooks = {}) {
        for (std::size_t i = 0; i < steps; ++i) {
            if (!env_.episode_active()) {
                obs_ = env_.reset();
                episode_return_ = 0.0;
            }
            const double eps = epsilon_at(agent_.config().epsilon, step_);
            const ActionId a = agent_.act(obs_, eps, rng_);
            EnvStep st = env_.step(a);
            episode_return_ += st.reward;
            buffer_.push({obs_, a, st.reward, st.next_state, st.terminal});
            agent_.on_env_step();
            ++step_;
            if (buffer_.ready() && step_ % agent_.config().train_every == 0)
                last_update_ = agent_.update_step(buffer_, rng_);
            obs_ = std::move(st.next_state);
            if (st.done()) {
                ++episode_;
                if (hooks.on_episode)
                    hooks.on_episode({step_, episode_, episode_return_, eps, st.truncated, last_update_});
            }
            if (hooks.on_step) hooks.on_step(step_);
        }
    }

    std::size_t steps() const { return step_; }
    std::size_t episodes() const { return episode_; }
    const UpdateStats& last_update() const { return last_update_; }

private:
    Agent& agent_;
    Environment& env_;
    ReplayBuffer& buffer_;
    Rng& rng_;
    Observation obs_;
    double episode_return_ = 0.0;
    std::size_t step_ = 0;
    std::size_t episode_ = 0;
    UpdateStats last_update_;
};

} // namespace dqv
