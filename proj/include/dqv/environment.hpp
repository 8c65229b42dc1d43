#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <string>

#include "dqv/core.hpp"
#include "dqv/mdp.hpp"

namespace dqv {

using Observation = Vector;

struct EnvStep {
    Observation next_state;
    double reward = 0.0;
    bool terminal = false;  // true MDP termination: bootstrap value is 0
    bool truncated = false; // step cap reached: episode ends, state is not terminal

    bool done() const { return terminal || truncated; }
};

struct EnvOptions {
    std::size_t max_steps = 500;
    bool clip_rewards = false; // clip to [-1, 1]
};

/// Episodic environment. The public reset()/step() pair enforces the episode
/// contract (no step after the end without reset), the step cap and optional
/// reward clipping; concrete environments implement on_reset()/on_step().
class Environment {
public:
    explicit Environment(EnvOptions opts = {}) : opts_(opts) {}
    virtual ~Environment() = default;

    virtual std::size_t observation_dim() const = 0;
    virtual std::size_t num_actions() const = 0;
    virtual std::string name() const = 0;

    Observation reset() {
        start_episode();
        return on_reset();
    }

    EnvStep step(ActionId action) {
        if (!active_) throw EpisodeError("step() called on a finished episode; call reset()");
        require(action < num_actions(), "action out of range");
        EnvStep out = on_step(action);
        ++steps_;
        if (opts_.clip_rewards) out.reward = std::clamp(out.reward, -1.0, 1.0);
        if (!out.terminal && opts_.max_steps > 0 && steps_ >= opts_.max_steps) out.truncated = true;
        if (out.done()) active_ = false;
        return out;
    }

    bool episode_active() const { return active_; }
    std::size_t steps_taken() const { return steps_; }
    const EnvOptions& options() const { return opts_; }

protected:
    void start_episode() {
        steps_ = 0;
        active_ = true;
    }
    virtual Observation on_reset() = 0;
    virtual EnvStep on_step(ActionId action) = 0;

private:
    EnvOptions opts_;
    std::size_t steps_ = 0;
    bool active_ = false;
};

/// A tabular MDP exposed through one-hot observations of size num_states.
class TabularEnvironment final : public Environment {
public:
    TabularEnvironment(std::shared_ptr<const MdpSpec> spec, std::uint64_t seed, EnvOptions opts = {})
        : Environment(opts), spec_(std::move(spec)), rng_(seed) {
        require(spec_ != nullptr, "null MDP");
        spec_->validate();
    }

    std::size_t observation_dim() const override { return spec_->num_states; }
    std::size_t num_actions() const override { return spec_->num_actions; }
    std::string name() const override { return "tabular"; }

    const MdpSpec& spec() const { return *spec_; }
    StateId state() const { return state_; }

    /// Starts an episode in state s instead of sampling the initial distribution.
    Observation reset_to(StateId s) {
        require(s < spec_->num_states, "state out of range");
        start_episode();
        state_ = s;
        return one_hot(s);
    }

    Observation one_hot(StateId s) const {
        Observation o(spec_->num_states, 0.0);
        o[s] = 1.0;
        return o;
    }

protected:
    Observation on_reset() override {
        state_ = sample(spec_->initial);
        return one_hot(state_);
    }

    EnvStep on_step(ActionId action) override {
        const auto& row = spec_->outcomes(state_, action);
        double u = uniform01(rng_), acc = 0.0;
        const Outcome* chosen = &row.back();
        for (const auto& o : row) {
            acc += o.prob;
            if (u < acc) {
                chosen = &o;
                break;
            }
        }
        state_ = chosen->next;
        return {one_hot(state_), chosen->reward, spec_->is_terminal(state_), false};
    }

private:
    StateId sample(const Vector& dist) {
        double u = uniform01(rng_), acc = 0.0;
        for (StateId s = 0; s < dist.size(); ++s) {
            acc += dist[s];
            if (u < acc) return s;
        }
        for (StateId s = dist.size(); s-- > 0;)
            if (dist[s] > 0.0) return s;
        return 0;
    }

    std::shared_ptr<const MdpSpec> spec_;
    Rng rng_;
    StateId state_ = 0;
};

inline std::unique_ptr<TabularEnvironment> mdp_as_environment(const MdpSpec& spec, std::uint64_t seed,
                                                              EnvOptions opts = {}) {
    return std::make_unique<TabularEnvironment>(std::make_shared<const MdpSpec>(spec), seed, opts);
}

/// Cart-pole balancing task.
///
/// Physics: gravity 9.8 m/s^2, cart mass 1.0 kg, pole mass 0.1 kg, pole
/// half-length 0.5 m, push force 10 N, explicit Euler with tau = 0.02 s.
/// Observation is (x, x_dot, theta, theta_dot), each initialised uniformly in
/// [-0.05, 0.05]. Action 0 pushes left, action 1 pushes right. Reward is +1
/// per step including the failing one. The episode terminates when
/// |x| > 2.4 or |theta| > 12 degrees; the step cap (default 500) truncates.
class CartPole final : public Environment {
public:
    static constexpr double kGravity = 9.8;
    static constexpr double kCartMass = 1.0;
    static constexpr double kPoleMass = 0.1;
    static constexpr double kHalfLength = 0.5;
    static constexpr double kForce = 10.0;
    static constexpr double kTau = 0.02;
    static constexpr double kXLimit = 2.4;
    static constexpr double kThetaLimit = 12.0 * 2.0 * std::numbers::pi / 360.0;

    explicit CartPole(std::uint64_t seed, EnvOptions opts = {}) : Environment(opts), rng_(seed) {}

    std::size_t observation_dim() const override { return 4; }
    std::size_t num_actions() const override { return 2; }
    std::string name() const override { return "cartpole"; }

protected:
    Observation on_reset() override {
        std::uniform_real_distribution<double> init(-0.05, 0.05);
        for (double& v : s_) v = init(rng_);
        return {s_.begin(), s_.end()};
    }

    EnvStep on_step(ActionId action) override {
        auto [x, x_dot, theta, theta_dot] = s_;
        const double force = action == 1 ? kForce : -kForce;
        const double total_mass = kCartMass + kPoleMass;
        const double pm_length = kPoleMass * kHalfLength;
        const double cos_t = std::cos(theta), sin_t = std::sin(theta);
        const double temp = (force + pm_length * theta_dot * theta_dot * sin_t) / total_mass;
        const double theta_acc =
            (kGravity * sin_t - cos_t * temp) /
            (kHalfLength * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / total_mass));
        const double x_acc = temp - pm_length * theta_acc * cos_t / total_mass;
        x += kTau * x_dot;
        x_dot += kTau * x_acc;
        theta += kTau * theta_dot;
        theta_dot += kTau * theta_acc;
        s_ = {x, x_dot, theta, theta_dot};
        bool failed = x < -kXLimit || x > kXLimit || theta < -kThetaLimit || theta > kThetaLimit;
        return {{s_.begin(), s_.end()}, 1.0, failed, false};
    }

private:
    Rng rng_;
    std::array<double, 4> s_{};
};

inline std::unique_ptr<CartPole> make_cartpole_like(std::uint64_t seed, EnvOptions opts = {}) {
    return std::make_unique<CartPole>(seed, opts);
}

} // namespace dqv
