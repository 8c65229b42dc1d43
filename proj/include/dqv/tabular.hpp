#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dqv/core.hpp"
#include "dqv/environment.hpp"
#include "dqv/mdp.hpp"

namespace dqv {

struct ValueTable {
    Vector values;

    ValueTable() = default;
    explicit ValueTable(std::size_t n, double init = 0.0) : values(n, init) {}

    double& operator[](StateId s) { return values[s]; }
    double operator[](StateId s) const { return values[s]; }
    std::size_t size() const { return values.size(); }
};

struct QTable {
    std::size_t num_states = 0;
    std::size_t num_actions = 0;
    Vector values; // row-major [state][action]

    QTable() = default;
    QTable(std::size_t states, std::size_t actions, double init = 0.0)
        : num_states(states), num_actions(actions), values(states * actions, init) {}

    double& operator()(StateId s, ActionId a) { return values[s * num_actions + a]; }
    double operator()(StateId s, ActionId a) const { return values[s * num_actions + a]; }

    std::span<const double> row(StateId s) const {
        return {values.data() + s * num_actions, num_actions};
    }
    double max(StateId s) const { return max_of(row(s)); }
};

/// One experience tuple over tabular state ids.
struct TabularTransition {
    StateId state;
    ActionId action;
    double reward;
    StateId next_state;
    bool terminal;
};

// ---------------------------------------------------------------------------
// Ground-truth oracles
// ---------------------------------------------------------------------------

struct ValueIterationOptions {
    std::size_t max_iterations = 100'000;
};

struct ValueIterationResult {
    ValueTable v;
    QTable q;
    std::size_t iterations = 0;
    std::vector<double> residuals; // max-norm change per sweep
};

/// Expectation backup of V into Q: Q(s,a) = sum_s' p(s'|s,a) [R(s,a,s') + gamma V(s')].
/// Terminal rows are zero.
inline QTable q_from_v(const MdpSpec& m, const ValueTable& v, double gamma) {
    QTable q(m.num_states, m.num_actions);
    for (StateId s = 0; s < m.num_states; ++s) {
        if (m.is_terminal(s)) continue;
        for (ActionId a = 0; a < m.num_actions; ++a) {
            double acc = 0.0;
            for (const auto& o : m.outcomes(s, a))
                acc += o.prob * (o.reward + gamma * (m.is_terminal(o.next) ? 0.0 : v[o.next]));
            q(s, a) = acc;
        }
    }
    return q;
}

/// One synchronous Bellman optimality sweep; returns the max-norm change.
inline double bellman_sweep(const MdpSpec& m, const ValueTable& v, double gamma, ValueTable& out) {
    QTable q = q_from_v(m, v, gamma);
    out = ValueTable(m.num_states);
    double residual = 0.0;
    for (StateId s = 0; s < m.num_states; ++s) {
        if (m.is_terminal(s)) continue;
        out[s] = q.max(s);
        residual = std::max(residual, std::abs(out[s] - v[s]));
    }
    return residual;
}

inline ValueIterationResult value_iteration(const MdpSpec& m, double gamma, double tolerance,
                                            ValueIterationOptions opts = {}) {
    require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
    require(tolerance > 0.0, "tolerance must be positive");
    m.validate();
    ValueIterationResult res;
    ValueTable v(m.num_states), next;
    double residual = 0.0;
    for (std::size_t it = 0; it < opts.max_iterations; ++it) {
        residual = bellman_sweep(m, v, gamma, next);
        res.residuals.push_back(residual);
        v = std::move(next);
        if (residual <= tolerance) {
            res.iterations = it + 1;
            res.q = q_from_v(m, v, gamma);
            res.v = ValueTable(m.num_states);
            for (StateId s = 0; s < m.num_states; ++s)
                if (!m.is_terminal(s)) res.v[s] = res.q.max(s);
            return res;
        }
        if (!std::isfinite(residual)) break;
    }
    throw ConvergenceFailure("value iteration did not converge; final residual " +
                                 std::to_string(residual),
                             residual);
}

/// Exact value of a stochastic policy pi(s, a) via a direct linear solve of
/// (I - gamma P_pi) V = r_pi over the non-terminal states. Returns nullopt when
/// the system is singular (e.g. gamma = 1 and the policy never terminates).
inline std::optional<ValueTable> evaluate_policy(const MdpSpec& m, double gamma, const QTable& pi) {
    std::vector<std::ptrdiff_t> index(m.num_states, -1);
    std::ptrdiff_t n = 0;
    for (StateId s = 0; s < m.num_states; ++s)
        if (!m.is_terminal(s)) index[s] = n++;
    ValueTable v(m.num_states);
    if (n == 0) return v;
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    for (StateId s = 0; s < m.num_states; ++s) {
        if (index[s] < 0) continue;
        for (ActionId act = 0; act < m.num_actions; ++act) {
            double w = pi(s, act);
            if (w == 0.0) continue;
            for (const auto& o : m.outcomes(s, act)) {
                b(index[s]) += w * o.prob * o.reward;
                if (index[o.next] >= 0) a(index[s], index[o.next]) -= gamma * w * o.prob;
            }
        }
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible()) return std::nullopt;
    Eigen::VectorXd x = lu.solve(b);
    if (!x.allFinite()) return std::nullopt;
    for (StateId s = 0; s < m.num_states; ++s)
        if (index[s] >= 0) v[s] = x(index[s]);
    return v;
}

inline std::optional<ValueTable> evaluate_deterministic_policy(const MdpSpec& m, double gamma,
                                                               std::span<const ActionId> policy) {
    QTable pi(m.num_states, m.num_actions);
    for (StateId s = 0; s < m.num_states; ++s)
        if (!m.is_terminal(s)) pi(s, policy[s]) = 1.0;
    return evaluate_policy(m, gamma, pi);
}

struct ExhaustiveOptions {
    double budget = 1e6; // maximum number of deterministic policies
};

/// Maximum over every deterministic stationary policy of its exact value,
/// each obtained by a direct linear solve. Only non-terminal states take part
/// in the enumeration. Improper policies (singular systems) are skipped.
inline ValueTable exhaustive_policy_oracle(const MdpSpec& m, double gamma, ExhaustiveOptions opts = {}) {
    require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
    m.validate();
    std::vector<StateId> free_states;
    for (StateId s = 0; s < m.num_states; ++s)
        if (!m.is_terminal(s)) free_states.push_back(s);
    double count = std::pow(static_cast<double>(m.num_actions), static_cast<double>(free_states.size()));
    if (count > opts.budget)
        throw BudgetExceeded("policy space of " + std::to_string(count) +
                             " deterministic policies exceeds the enumeration budget");

    ValueTable best(m.num_states, -std::numeric_limits<double>::infinity());
    for (StateId s = 0; s < m.num_states; ++s)
        if (m.is_terminal(s)) best[s] = 0.0;
    std::vector<ActionId> policy(m.num_states, 0);
    bool any = false;
    while (true) {
        if (auto v = evaluate_deterministic_policy(m, gamma, policy)) {
            any = true;
            for (StateId s : free_states) best[s] = std::max(best[s], (*v)[s]);
        }
        // odometer increment over the free states
        std::size_t i = 0;
        for (; i < free_states.size(); ++i) {
            auto& a = policy[free_states[i]];
            if (++a < m.num_actions) break;
            a = 0;
        }
        if (i == free_states.size()) break;
    }
    if (!any) throw ConvergenceFailure("no proper deterministic policy exists", 0.0);
    return best;
}

/// Howard policy iteration with exact linear-solve evaluation. Scales beyond
/// the enumeration budget and shares no code path with value_iteration's sweeps.
inline ValueTable policy_iteration_oracle(const MdpSpec& m, double gamma, std::size_t max_iterations = 10'000) {
    require(gamma >= 0.0 && gamma < 1.0, "policy iteration oracle needs gamma < 1");
    m.validate();
    std::vector<ActionId> policy(m.num_states, 0);
    for (std::size_t it = 0; it < max_iterations; ++it) {
        auto v = evaluate_deterministic_policy(m, gamma, policy);
        if (!v) throw NumericError("singular policy evaluation system");
        QTable q = q_from_v(m, *v, gamma);
        bool stable = true;
        for (StateId s = 0; s < m.num_states; ++s) {
            if (m.is_terminal(s)) continue;
            ActionId best = policy[s];
            for (ActionId a = 0; a < m.num_actions; ++a)
                if (q(s, a) > q(s, best) + 1e-13) best = a;
            if (best != policy[s]) {
                policy[s] = best;
                stable = false;
            }
        }
        if (stable) return *v;
    }
    throw ConvergenceFailure("policy iteration did not stabilise", 0.0);
}

// ---------------------------------------------------------------------------
// Tabular update rules
// ---------------------------------------------------------------------------

namespace detail {
inline void check_indices(const QTable& q, const TabularTransition& t) {
    require(t.state < q.num_states && t.next_state < q.num_states && t.action < q.num_actions,
            "transition indices out of range");
}
inline void check_alpha(double alpha) {
    require(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
}
} // namespace detail

/// QV-learning: V and Q share the target r + gamma V(s'); both tables
/// bootstrap from pre-update values.
inline void tabular_qv_update(ValueTable& v, QTable& q, const TabularTransition& t, double alpha,
                              double gamma) {
    detail::check_indices(q, t);
    detail::check_alpha(alpha);
    require(v.size() == q.num_states, "V and Q tables disagree on state count");
    const double y = t.terminal ? t.reward : t.reward + gamma * v[t.next_state];
    v[t.state] += alpha * (y - v[t.state]);
    q(t.state, t.action) += alpha * (y - q(t.state, t.action));
}

/// QV-Max: V regresses to r + gamma max_a Q(s', a), Q to r + gamma V(s').
inline void tabular_qv_max_update(ValueTable& v, QTable& q, const TabularTransition& t, double alpha,
                                  double gamma) {
    detail::check_indices(q, t);
    detail::check_alpha(alpha);
    require(v.size() == q.num_states, "V and Q tables disagree on state count");
    const double v_target = t.terminal ? t.reward : t.reward + gamma * q.max(t.next_state);
    const double q_target = t.terminal ? t.reward : t.reward + gamma * v[t.next_state];
    v[t.state] += alpha * (v_target - v[t.state]);
    q(t.state, t.action) += alpha * (q_target - q(t.state, t.action));
}

inline void tabular_q_learning_update(QTable& q, const TabularTransition& t, double alpha, double gamma) {
    detail::check_indices(q, t);
    detail::check_alpha(alpha);
    const double y = t.terminal ? t.reward : t.reward + gamma * q.max(t.next_state);
    q(t.state, t.action) += alpha * (y - q(t.state, t.action));
}

// ---------------------------------------------------------------------------
// Tabular learner: runs an epsilon-greedy behaviour policy over a tabular
// environment and applies one of the rules above.
// ---------------------------------------------------------------------------

enum class TabularRule { q_learning, qv, qv_max };
enum class AlphaSchedule { constant, inverse_visits };

struct TabularLearnerConfig {
    TabularRule rule = TabularRule::qv;
    double alpha = 0.1;
    AlphaSchedule schedule = AlphaSchedule::constant;
    double gamma = 0.99;
    double epsilon = 1.0;
};

class TabularLearner {
public:
    TabularLearner(const MdpSpec& m, TabularLearnerConfig cfg)
        : cfg_(cfg), v_(m.num_states), q_(m.num_states, m.num_actions),
          v_visits_(m.num_states, 0), q_visits_(m.num_states * m.num_actions, 0) {}

    void apply(const TabularTransition& t) {
        double a_q = cfg_.alpha, a_v = cfg_.alpha;
        if (cfg_.schedule == AlphaSchedule::inverse_visits) {
            a_q = 1.0 / static_cast<double>(++q_visits_[t.state * q_.num_actions + t.action]);
            a_v = 1.0 / static_cast<double>(++v_visits_[t.state]);
        }
        switch (cfg_.rule) {
        case TabularRule::q_learning:
            tabular_q_learning_update(q_, t, a_q, cfg_.gamma);
            break;
        case TabularRule::qv:
        case TabularRule::qv_max: {
            // separate step sizes for V and Q: apply the shared rule twice
            // from the same pre-update snapshot
            ValueTable v_before = v_;
            QTable q_before = q_;
            auto rule = cfg_.rule == TabularRule::qv ? tabular_qv_update : tabular_qv_max_update;
            ValueTable v1 = v_before;
            QTable q1 = q_before;
            rule(v1, q1, t, a_v, cfg_.gamma);
            ValueTable v2 = v_before;
            QTable q2 = q_before;
            rule(v2, q2, t, a_q, cfg_.gamma);
            v_[t.state] = v1[t.state];
            q_(t.state, t.action) = q2(t.state, t.action);
            break;
        }
        }
    }

    /// Runs one episode with epsilon-greedy behaviour over Q.
    void run_episode(TabularEnvironment& env, Rng& rng) {
        env.reset();
        while (env.episode_active()) {
            StateId s = env.state();
            ActionId a = uniform01(rng) < cfg_.epsilon ? uniform_index(rng, q_.num_actions)
                                                       : argmax_random_ties(q_.row(s), rng);
            EnvStep st = env.step(a);
            apply({s, a, st.reward, env.state(), st.terminal});
        }
    }

    const ValueTable& v() const { return v_; }
    const QTable& q() const { return q_; }

private:
    TabularLearnerConfig cfg_;
    ValueTable v_;
    QTable q_;
    std::vector<std::size_t> v_visits_;
    std::vector<std::size_t> q_visits_;
};

inline nlohmann::json oracle_to_json(const MdpSpec& m, const ValueIterationResult& r, double gamma) {
    nlohmann::json j;
    j["gamma"] = gamma;
    j["num_states"] = m.num_states;
    j["num_actions"] = m.num_actions;
    j["iterations"] = r.iterations;
    j["v"] = r.v.values;
    auto q = nlohmann::json::array();
    for (StateId s = 0; s < m.num_states; ++s) q.push_back(Vector(r.q.row(s).begin(), r.q.row(s).end()));
    j["q"] = std::move(q);
    return j;
}

} // namespace dqv
