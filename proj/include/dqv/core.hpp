#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dqv {

using Rng = std::mt19937_64;
using Vector = std::vector<double>;

// Error taxonomy. Everything derives from std::runtime_error or
// std::invalid_argument so callers can catch broadly.

struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InvalidConfiguration : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConvergenceFailure : std::runtime_error {
    ConvergenceFailure(const std::string& what, double residual)
        : std::runtime_error(what), residual(residual) {}
    double residual;
};

struct BudgetExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotReady : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EpisodeError : std::logic_error {
    using std::logic_error::logic_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

inline bool all_finite(std::span<const double> xs) {
    for (double x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Argmax with uniformly random tie-breaking. Exact equality is used for ties.
inline std::size_t argmax_random_ties(std::span<const double> xs, Rng& rng) {
    require(!xs.empty(), "argmax of empty vector");
    double best = xs[0];
    std::size_t count = 1, pick = 0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i] > best) {
            best = xs[i];
            pick = i;
            count = 1;
        } else if (xs[i] == best) {
            ++count;
            // reservoir choice over the tied set
            if (uniform_index(rng, count) == 0) pick = i;
        }
    }
    return pick;
}

inline double max_of(std::span<const double> xs) {
    require(!xs.empty(), "max of empty vector");
    double m = xs[0];
    for (double x : xs) m = x > m ? x : m;
    return m;
}

} // namespace dqv
