#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "dqv/core.hpp"

namespace dqv {

using StateId = std::size_t;
using ActionId = std::size_t;

struct Outcome {
    StateId next;
    double prob;
    double reward;
};

/// Explicit tabular MDP: p(s'|s,a) and R(s,a,s') stored per outcome.
///
/// Terminal states carry a probability-one self loop with zero reward so that
/// every row is a distribution; learning code never consumes those rows
/// because episodes end on entry.
struct MdpSpec {
    std::size_t num_states = 0;
    std::size_t num_actions = 0;
    std::vector<std::vector<Outcome>> rows; // index s * num_actions + a
    std::vector<bool> terminal;
    Vector initial;

    static constexpr double kProbTolerance = 1e-12;

    MdpSpec() = default;
    MdpSpec(std::size_t states, std::size_t actions)
        : num_states(states), num_actions(actions), rows(states * actions),
          terminal(states, false), initial(states, 0.0) {}

    const std::vector<Outcome>& outcomes(StateId s, ActionId a) const {
        return rows[s * num_actions + a];
    }

    bool is_terminal(StateId s) const { return terminal[s]; }

    /// Adds probability mass to (s, a) -> next. Mass landing on an existing
    /// outcome is merged; the reward of a merged outcome must agree.
    void add(StateId s, ActionId a, StateId next, double prob, double reward) {
        require(s < num_states && a < num_actions && next < num_states,
                "transition index out of range");
        auto& row = rows[s * num_actions + a];
        for (auto& o : row) {
            if (o.next == next) {
                require(o.reward == reward, "conflicting rewards for the same (s, a, s')");
                o.prob += prob;
                return;
            }
        }
        row.push_back({next, prob, reward});
    }

    void set_terminal(StateId s) {
        require(s < num_states, "terminal index out of range");
        terminal[s] = true;
        for (std::size_t a = 0; a < num_actions; ++a)
            rows[s * num_actions + a] = {{s, 1.0, 0.0}};
    }

    double expected_reward(StateId s, ActionId a) const {
        double r = 0.0;
        for (const auto& o : outcomes(s, a)) r += o.prob * o.reward;
        return r;
    }

    void validate() const {
        require(num_states >= 1 && num_actions >= 1, "MDP needs at least one state and action");
        require(rows.size() == num_states * num_actions, "transition table has wrong size");
        require(terminal.size() == num_states && initial.size() == num_states,
                "terminal/initial vectors have wrong size");
        for (std::size_t s = 0; s < num_states; ++s) {
            for (std::size_t a = 0; a < num_actions; ++a) {
                const auto& row = outcomes(s, a);
                require(!row.empty(), "state " + std::to_string(s) + " action " +
                                          std::to_string(a) + " has no outcomes");
                double total = 0.0;
                for (const auto& o : row) {
                    require(o.next < num_states, "next state out of range");
                    require(o.prob >= 0.0 && o.prob <= 1.0, "probability outside [0, 1]");
                    require(std::isfinite(o.reward), "non-finite reward");
                    total += o.prob;
                }
                require(std::abs(total - 1.0) <= kProbTolerance,
                        "transition row (" + std::to_string(s) + ", " + std::to_string(a) +
                            ") sums to " + std::to_string(total));
            }
        }
        double init = 0.0;
        for (double p : initial) {
            require(p >= 0.0 && p <= 1.0, "initial probability outside [0, 1]");
            init += p;
        }
        require(std::abs(init - 1.0) <= kProbTolerance, "initial distribution does not sum to 1");
    }
};

enum GridAction : ActionId { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

/// Gridworld with start in the top-left cell (state 0) and the terminal goal in
/// the bottom-right cell. States are numbered row-major: id = y * width + x.
/// Moves into walls leave the agent in place. With probability slip_prob the
/// move goes in one of the three other directions, chosen uniformly.
inline MdpSpec make_gridworld(std::size_t width, std::size_t height, double goal_reward,
                              double step_reward, double slip_prob) {
    require(width >= 1 && height >= 1 && width * height >= 2,
            "gridworld needs at least two cells");
    require(slip_prob >= 0.0 && slip_prob < 1.0, "slip_prob must lie in [0, 1)");
    MdpSpec m(width * height, 4);
    const StateId goal = width * height - 1;
    auto move = [&](StateId s, ActionId dir) -> StateId {
        std::size_t x = s % width, y = s / width;
        switch (dir) {
        case kUp: if (y > 0) --y; break;
        case kDown: if (y + 1 < height) ++y; break;
        case kLeft: if (x > 0) --x; break;
        default: if (x + 1 < width) ++x; break;
        }
        return y * width + x;
    };
    for (StateId s = 0; s < m.num_states; ++s) {
        if (s == goal) continue;
        for (ActionId a = 0; a < 4; ++a) {
            for (ActionId dir = 0; dir < 4; ++dir) {
                double p = dir == a ? 1.0 - slip_prob : slip_prob / 3.0;
                if (p == 0.0) continue;
                StateId next = move(s, dir);
                m.add(s, a, next, p, next == goal ? goal_reward : step_reward);
            }
        }
    }
    m.set_terminal(goal);
    m.initial[0] = 1.0;
    m.validate();
    return m;
}

namespace bias_mdp {
inline constexpr StateId kStart = 0;   // A
inline constexpr StateId kArms = 1;    // B
inline constexpr StateId kHigh = 2;    // terminal, reached with +noise
inline constexpr StateId kLow = 3;     // terminal, reached with -noise
inline constexpr ActionId kContinue = 0;
} // namespace bias_mdp

/// Two-decision MDP for eliciting maximization bias.
///
/// From A, action 0 continues to B with reward 0; every other action stops
/// (terminal, reward 0). Each of B's num_arms actions ends the episode with
/// reward +noise_std or -noise_std, each with probability 1/2, so every arm
/// has mean 0 and standard deviation noise_std.
inline MdpSpec make_bias_mdp(std::size_t num_arms, double noise_std) {
    using namespace bias_mdp;
    require(num_arms >= 2, "bias MDP needs at least two arms");
    require(noise_std >= 0.0 && std::isfinite(noise_std), "noise_std must be finite and >= 0");
    MdpSpec m(4, num_arms);
    m.add(kStart, kContinue, kArms, 1.0, 0.0);
    for (ActionId a = 1; a < num_arms; ++a) m.add(kStart, a, kHigh, 1.0, 0.0);
    for (ActionId a = 0; a < num_arms; ++a) {
        if (noise_std == 0.0) {
            m.add(kArms, a, kHigh, 1.0, 0.0);
        } else {
            m.add(kArms, a, kHigh, 0.5, noise_std);
            m.add(kArms, a, kLow, 0.5, -noise_std);
        }
    }
    m.set_terminal(kHigh);
    m.set_terminal(kLow);
    m.initial[kStart] = 1.0;
    m.validate();
    return m;
}

// JSON: {"num_states", "num_actions", "transitions": [[s,a,s',p],...],
//        "rewards": [[s,a,s',r],...], "terminals": [...], "initial": [...]}

inline nlohmann::json to_json(const MdpSpec& m) {
    nlohmann::json j;
    j["num_states"] = m.num_states;
    j["num_actions"] = m.num_actions;
    auto trans = nlohmann::json::array();
    auto rew = nlohmann::json::array();
    std::vector<std::size_t> terms;
    for (StateId s = 0; s < m.num_states; ++s) {
        if (m.is_terminal(s)) {
            terms.push_back(s);
            continue;
        }
        for (ActionId a = 0; a < m.num_actions; ++a)
            for (const auto& o : m.outcomes(s, a)) {
                trans.push_back({s, a, o.next, o.prob});
                if (o.reward != 0.0) rew.push_back({s, a, o.next, o.reward});
            }
    }
    j["transitions"] = std::move(trans);
    j["rewards"] = std::move(rew);
    j["terminals"] = terms;
    j["initial"] = m.initial;
    return j;
}

/// Parses and validates. Rewards default to 0 for transitions without an
/// entry; reward entries naming an absent transition are rejected.
inline MdpSpec mdp_from_json(const nlohmann::json& j) {
    try {
        MdpSpec m(j.at("num_states").get<std::size_t>(), j.at("num_actions").get<std::size_t>());
        require(m.num_states >= 1 && m.num_actions >= 1, "MDP needs states and actions");
        for (const auto& t : j.at("terminals")) {
            auto s = t.get<std::size_t>();
            require(s < m.num_states, "terminal index out of range");
            m.terminal[s] = true;
        }
        for (const auto& t : j.at("transitions")) {
            require(t.size() == 4, "transition entries are [s, a, s', p]");
            auto s = t[0].get<std::size_t>();
            require(s < m.num_states, "transition index out of range");
            if (m.terminal[s]) continue;
            m.add(s, t[1].get<std::size_t>(), t[2].get<std::size_t>(), t[3].get<double>(), 0.0);
        }
        if (j.contains("rewards")) {
            for (const auto& r : j.at("rewards")) {
                require(r.size() == 4, "reward entries are [s, a, s', r]");
                auto s = r[0].get<std::size_t>(), a = r[1].get<std::size_t>(),
                     n = r[2].get<std::size_t>();
                require(s < m.num_states && a < m.num_actions, "reward index out of range");
                if (m.terminal[s]) continue;
                bool found = false;
                for (auto& o : m.rows[s * m.num_actions + a])
                    if (o.next == n) {
                        o.reward = r[3].get<double>();
                        found = true;
                    }
                require(found, "reward given for a transition that does not exist");
            }
        }
        for (StateId s = 0; s < m.num_states; ++s)
            if (m.terminal[s]) m.set_terminal(s);
        m.initial = j.at("initial").get<Vector>();
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed MDP document: ") + e.what());
    }
}

} // namespace dqv
