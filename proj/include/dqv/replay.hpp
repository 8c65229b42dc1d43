#pragma once

#include <algorithm>
#include <deque>
#include <vector>

#include "json.hpp"

#include "dqv/core.hpp"
#include "dqv/environment.hpp"

namespace dqv {

struct Transition {
    Observation state;
    ActionId action = 0;
    double reward = 0.0;
    Observation next_state;
    bool terminal = false;

    bool operator==(const Transition&) const = default;
};

/// Bounded FIFO replay queue. Once full, each push overwrites the oldest
/// transition. Sampling is refused until `warmup` transitions have been
/// inserted in total.
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::size_t warmup) : capacity_(capacity), warmup_(warmup) {
        require(capacity > 0, "replay capacity must be positive");
        storage_.reserve(std::min<std::size_t>(capacity, 1u << 16));
    }

    void push(Transition t) {
        if (storage_.size() < capacity_) {
            storage_.push_back(std::move(t));
        } else {
            storage_[head_] = std::move(t);
            head_ = (head_ + 1) % capacity_;
        }
        ++insert_count_;
    }

    std::size_t size() const { return storage_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t warmup() const { return warmup_; }
    std::size_t insert_count() const { return insert_count_; }
    std::size_t evictions() const { return insert_count_ - storage_.size(); }
    bool ready() const { return insert_count_ >= warmup_; }

    /// i-th element in FIFO order (0 = oldest).
    const Transition& at(std::size_t i) const {
        require(i < storage_.size(), "replay index out of range");
        return storage_[(head_ + i) % storage_.size()];
    }

    /// Uniform draws with replacement.
    std::vector<const Transition*> sample(std::size_t batch_size, Rng& rng) const {
        if (!ready())
            throw NotReady("replay buffer holds " + std::to_string(insert_count_) +
                           " insertions, warmup is " + std::to_string(warmup_));
        require(batch_size >= 1 && batch_size <= storage_.size(), "batch size exceeds buffer size");
        std::vector<const Transition*> out;
        out.reserve(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) out.push_back(&storage_[uniform_index(rng, storage_.size())]);
        return out;
    }

    std::vector<Transition> sample_copies(std::size_t batch_size, Rng& rng) const {
        std::vector<Transition> out;
        for (const auto* t : sample(batch_size, rng)) out.push_back(*t);
        return out;
    }

    /// One JSON object per line, oldest first.
    void write_jsonl(std::ostream& os) const {
        for (std::size_t i = 0; i < size(); ++i) {
            const auto& t = at(i);
            nlohmann::json j = {{"state", t.state},   {"action", t.action},       {"reward", t.reward},
                                {"next_state", t.next_state}, {"terminal", t.terminal}};
            os << j.dump() << '\n';
        }
    }

private:
    std::size_t capacity_;
    std::size_t warmup_;
    std::vector<Transition> storage_;
    std::size_t head_ = 0; // position of the oldest element once full
    std::size_t insert_count_ = 0;
};

struct EpsilonSchedule {
    double eps_start = 1.0;
    double eps_end = 0.05;
    std::size_t decay_steps = 10'000;

    void validate() const {
        require(eps_start >= 0.0 && eps_start <= 1.0 && eps_end >= 0.0 && eps_end <= 1.0,
                "epsilon values must lie in [0, 1]");
        require(eps_end <= eps_start, "eps_end must not exceed eps_start");
    }
};

/// Linear interpolation from eps_start to eps_end over decay_steps, then flat.
inline double epsilon_at(const EpsilonSchedule& s, std::size_t step) {
    if (s.decay_steps == 0 || step >= s.decay_steps) return s.eps_end;
    double frac = static_cast<double>(step) / static_cast<double>(s.decay_steps);
    return s.eps_start + frac * (s.eps_end - s.eps_start);
}

/// Epsilon-greedy: uniform random action with probability epsilon, otherwise
/// argmax with uniformly random tie-breaking.
inline ActionId select_action(std::span<const double> q_values, double epsilon, Rng& rng) {
    require(!q_values.empty(), "select_action needs at least one action value");
    require(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must lie in [0, 1]");
    if (epsilon > 0.0 && uniform01(rng) < epsilon) return uniform_index(rng, q_values.size());
    return argmax_random_ties(q_values, rng);
}

} // namespace dqv
