#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dqv/core.hpp"

namespace dqv {

enum class HeadMode {
    separate_q,  // Q outputs only
    separate_v,  // single V output
    hard_shared, // one output layer: num_actions Q nodes followed by one V node
    dueling,     // shared trunk, dedicated hidden layer per head; V branches at v_head_depth
};

enum class Activation { relu, tanh };

inline std::string to_string(HeadMode m) {
    switch (m) {
    case HeadMode::separate_q: return "separate-q";
    case HeadMode::separate_v: return "separate-v";
    case HeadMode::hard_shared: return "hard-shared";
    default: return "dueling";
    }
}

inline HeadMode head_mode_from_string(const std::string& s) {
    if (s == "separate-q") return HeadMode::separate_q;
    if (s == "separate-v") return HeadMode::separate_v;
    if (s == "hard-shared") return HeadMode::hard_shared;
    if (s == "dueling") return HeadMode::dueling;
    throw InvalidArgument("unknown head mode '" + s + "'");
}

struct NetworkTopology {
    std::size_t input_dim = 0;
    std::vector<std::size_t> trunk;
    HeadMode head = HeadMode::separate_q;
    std::size_t v_head_depth = 0; // dueling only, 1-based trunk index
    std::size_t v_head_width = 0; // dueling only
    std::size_t q_head_width = 0; // dueling only
    std::size_t num_actions = 1;
    Activation activation = Activation::relu;
    bool bias = true;

    bool has_v() const { return head != HeadMode::separate_q; }
    bool has_q() const { return head != HeadMode::separate_v; }

    void validate() const {
        require(input_dim > 0, "input_dim must be positive");
        require(num_actions > 0, "num_actions must be positive");
        for (auto w : trunk) require(w > 0, "zero-width trunk layer");
        if (head == HeadMode::dueling) {
            require(!trunk.empty(), "dueling needs at least one trunk layer");
            require(v_head_depth >= 1 && v_head_depth <= trunk.size(),
                    "dueling v_head_depth must lie in [1, trunk layers]");
            require(v_head_width > 0 && q_head_width > 0, "dueling head widths must be positive");
        }
    }

    bool operator==(const NetworkTopology&) const = default;
};

/// A dense layer inside the flat parameter vector. Weights are row-major
/// [out][in] at w_offset, followed by out biases at b_offset when present.
struct LayerSpec {
    std::size_t in = 0, out = 0;
    std::ptrdiff_t source = -1; // index of the layer feeding this one; -1 = network input
    bool activated = true;
    std::size_t w_offset = 0;
    std::size_t b_offset = 0;
    bool has_bias = true;
};

struct ForwardOutput {
    std::optional<double> v;
    Vector q;
};

/// Gradient of some scalar with respect to the network outputs.
struct OutputGrad {
    double v = 0.0;
    Vector q; // empty means zero
};

struct ForwardCache {
    std::vector<Vector> pre;
    std::vector<Vector> post;
    Vector input;
};

/// Parameter layout (in order): trunk layers, then the Q path, then the V path.
///   separate-q / separate-v: trunk..., output
///   hard-shared:             trunk..., output (num_actions + 1; V is the last unit)
///   dueling:                 trunk..., q hidden, q out, v hidden, v out
/// Initialising the V path last keeps trunk and Q parameters identical across
/// different v_head_depth choices for the same seed.
inline std::vector<LayerSpec> build_layers(const NetworkTopology& t) {
    t.validate();
    std::vector<LayerSpec> layers;
    std::size_t offset = 0;
    auto add = [&](std::size_t in, std::size_t out, std::ptrdiff_t src, bool act) {
        LayerSpec l;
        l.in = in;
        l.out = out;
        l.source = src;
        l.activated = act;
        l.has_bias = t.bias;
        l.w_offset = offset;
        offset += in * out;
        l.b_offset = offset;
        if (t.bias) offset += out;
        layers.push_back(l);
        return static_cast<std::ptrdiff_t>(layers.size() - 1);
    };
    std::size_t width = t.input_dim;
    std::ptrdiff_t last = -1;
    std::vector<std::ptrdiff_t> trunk_idx;
    for (auto w : t.trunk) {
        last = add(width, w, last, true);
        trunk_idx.push_back(last);
        width = w;
    }
    switch (t.head) {
    case HeadMode::separate_q: add(width, t.num_actions, last, false); break;
    case HeadMode::separate_v: add(width, 1, last, false); break;
    case HeadMode::hard_shared: add(width, t.num_actions + 1, last, false); break;
    case HeadMode::dueling: {
        auto qh = add(width, t.q_head_width, last, true);
        add(t.q_head_width, t.num_actions, qh, false);
        auto src = trunk_idx[t.v_head_depth - 1];
        auto vh = add(t.trunk[t.v_head_depth - 1], t.v_head_width, src, true);
        add(t.v_head_width, 1, vh, false);
        break;
    }
    }
    return layers;
}

inline std::size_t parameter_count(const NetworkTopology& t) {
    auto layers = build_layers(t);
    const auto& l = layers.back();
    return l.b_offset + (l.has_bias ? l.out : 0);
}

class Network {
public:
    Network() = default;

    Network(NetworkTopology topology, Vector params, std::uint64_t seed = 0)
        : topology_(std::move(topology)), layers_(build_layers(topology_)), params_(std::move(params)),
          seed_(seed) {
        require(params_.size() == parameter_count(topology_), "parameter vector has the wrong length");
        locate_outputs();
    }

    const NetworkTopology& topology() const { return topology_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    const Vector& params() const { return params_; }
    Vector& params() { return params_; }
    std::size_t size() const { return params_.size(); }
    std::uint64_t seed() const { return seed_; }

    double& weight(std::size_t layer, std::size_t out, std::size_t in) {
        const auto& l = layers_.at(layer);
        return params_[l.w_offset + out * l.in + in];
    }
    double& bias(std::size_t layer, std::size_t out) {
        const auto& l = layers_.at(layer);
        require(l.has_bias, "layer has no bias");
        return params_[l.b_offset + out];
    }

    ForwardOutput forward(std::span<const double> obs) const {
        ForwardCache cache;
        return forward(obs, cache);
    }

    ForwardOutput forward(std::span<const double> obs, ForwardCache& cache) const {
        require(obs.size() == topology_.input_dim,
                "observation has dimension " + std::to_string(obs.size()) + ", expected " +
                    std::to_string(topology_.input_dim));
        cache.input.assign(obs.begin(), obs.end());
        cache.pre.resize(layers_.size());
        cache.post.resize(layers_.size());
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            const auto& l = layers_[li];
            const Vector& x = l.source < 0 ? cache.input : cache.post[l.source];
            Vector& z = cache.pre[li];
            z.assign(l.out, 0.0);
            const double* w = params_.data() + l.w_offset;
            if (l.source < 0) {
                // network input is often one-hot: skip zero entries
                for (std::size_t i = 0; i < l.in; ++i) {
                    const double xi = x[i];
                    if (xi == 0.0) continue;
                    for (std::size_t o = 0; o < l.out; ++o) z[o] += w[o * l.in + i] * xi;
                }
            } else {
                for (std::size_t o = 0; o < l.out; ++o) {
                    const double* row = w + o * l.in;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < l.in; ++i) acc += row[i] * x[i];
                    z[o] = acc;
                }
            }
            if (l.has_bias)
                for (std::size_t o = 0; o < l.out; ++o) z[o] += params_[l.b_offset + o];
            Vector& a = cache.post[li];
            a = z;
            if (l.activated) activate(a);
        }
        ForwardOutput out;
        if (q_layer_ >= 0) {
            const Vector& y = cache.post[q_layer_];
            out.q.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(topology_.num_actions));
        }
        if (v_layer_ >= 0) out.v = cache.post[v_layer_][v_unit_];
        return out;
    }

    /// Adds d(sum of output gradients * outputs)/d(params) into grad, using a
    /// cache filled by forward() on the same parameters.
    void accumulate_gradient(const ForwardCache& cache, const OutputGrad& g, std::span<double> grad) const {
        require(grad.size() == params_.size(), "gradient buffer has the wrong length");
        require(g.q.empty() || g.q.size() == topology_.num_actions, "output gradient has the wrong shape");
        require(g.q.empty() || q_layer_ >= 0, "output gradient for an absent Q head");
        require(g.v == 0.0 || v_layer_ >= 0, "output gradient for an absent V head");
        std::vector<Vector> dpost(layers_.size());
        for (std::size_t li = 0; li < layers_.size(); ++li) dpost[li].assign(layers_[li].out, 0.0);
        if (!g.q.empty())
            for (std::size_t a = 0; a < topology_.num_actions; ++a) dpost[q_layer_][a] += g.q[a];
        if (v_layer_ >= 0) dpost[v_layer_][v_unit_] += g.v;

        for (std::size_t li = layers_.size(); li-- > 0;) {
            const auto& l = layers_[li];
            Vector& d = dpost[li];
            bool any = false;
            for (double x : d) any = any || x != 0.0;
            if (!any) continue;
            if (l.activated) activation_backward(cache.pre[li], cache.post[li], d);
            const Vector& x = l.source < 0 ? cache.input : cache.post[l.source];
            double* gw = grad.data() + l.w_offset;
            for (std::size_t o = 0; o < l.out; ++o) {
                const double dz = d[o];
                if (dz == 0.0) continue;
                double* row = gw + o * l.in;
                for (std::size_t i = 0; i < l.in; ++i) row[i] += dz * x[i];
            }
            if (l.has_bias)
                for (std::size_t o = 0; o < l.out; ++o) grad[l.b_offset + o] += d[o];
            if (l.source >= 0) {
                Vector& dx = dpost[l.source];
                const double* w = params_.data() + l.w_offset;
                for (std::size_t o = 0; o < l.out; ++o) {
                    const double dz = d[o];
                    if (dz == 0.0) continue;
                    const double* row = w + o * l.in;
                    for (std::size_t i = 0; i < l.in; ++i) dx[i] += row[i] * dz;
                }
            }
        }
    }

    Vector backward(std::span<const double> obs, const OutputGrad& g) const {
        ForwardCache cache;
        forward(obs, cache);
        Vector grad(params_.size(), 0.0);
        accumulate_gradient(cache, g, grad);
        return grad;
    }

    bool operator==(const Network& o) const {
        return topology_ == o.topology_ && params_ == o.params_ && seed_ == o.seed_;
    }

private:
    void locate_outputs() {
        const auto n = static_cast<std::ptrdiff_t>(layers_.size());
        switch (topology_.head) {
        case HeadMode::separate_q: q_layer_ = n - 1; break;
        case HeadMode::separate_v: v_layer_ = n - 1; break;
        case HeadMode::hard_shared:
            q_layer_ = v_layer_ = n - 1;
            v_unit_ = topology_.num_actions;
            break;
        case HeadMode::dueling:
            q_layer_ = n - 3;
            v_layer_ = n - 1;
            break;
        }
    }

    void activate(Vector& a) const {
        if (topology_.activation == Activation::relu)
            for (double& x : a) x = x > 0.0 ? x : 0.0;
        else
            for (double& x : a) x = std::tanh(x);
    }

    void activation_backward(const Vector& pre, const Vector& post, Vector& d) const {
        if (topology_.activation == Activation::relu) {
            for (std::size_t i = 0; i < d.size(); ++i)
                if (pre[i] <= 0.0) d[i] = 0.0;
        } else {
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - post[i] * post[i];
        }
    }

    NetworkTopology topology_;
    std::vector<LayerSpec> layers_;
    Vector params_;
    std::uint64_t seed_ = 0;
    std::ptrdiff_t q_layer_ = -1;
    std::ptrdiff_t v_layer_ = -1;
    std::size_t v_unit_ = 0;
};

/// Fan-in scaled uniform initialisation: He-style limit sqrt(6 / fan_in) for
/// relu networks, Glorot-style sqrt(6 / (fan_in + fan_out)) for tanh.
/// Biases start at zero. Deterministic given the seed.
inline Network init_network(const NetworkTopology& topology, std::uint64_t seed) {
    auto layers = build_layers(topology);
    Vector params(parameter_count(topology), 0.0);
    Rng rng(seed);
    for (const auto& l : layers) {
        double limit = topology.activation == Activation::relu
                           ? std::sqrt(6.0 / static_cast<double>(l.in))
                           : std::sqrt(6.0 / static_cast<double>(l.in + l.out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (std::size_t i = 0; i < l.in * l.out; ++i) params[l.w_offset + i] = dist(rng);
    }
    return Network(topology, std::move(params), seed);
}

// ---------------------------------------------------------------------------
// Optimisers
// ---------------------------------------------------------------------------

enum class OptimizerKind { sgd, rmsprop };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::rmsprop;
    double learning_rate = 1e-3;
    double rho = 0.95;      // rmsprop squared-gradient decay
    double epsilon = 0.01;  // rmsprop denominator guard
    double clip_norm = 0.0; // global max-norm clip; 0 disables
};

struct OptimizerState {
    Vector mean_square;
    std::size_t steps = 0;
    bool operator==(const OptimizerState&) const = default;
};

/// One descent step in place. Throws NumericError on non-finite gradients.
inline void sgd_step(Network& net, std::span<const double> grad, const OptimizerConfig& cfg,
                     OptimizerState& state) {
    require(grad.size() == net.size(), "gradient length does not match parameter count");
    require(cfg.learning_rate > 0.0, "learning rate must be positive");
    if (!all_finite(grad)) throw NumericError("non-finite gradient entry");
    double scale = 1.0;
    if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (double g : grad) sq += g * g;
        double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
    }
    auto& p = net.params();
    if (cfg.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.learning_rate * scale * grad[i];
    } else {
        if (state.mean_square.size() != p.size()) state.mean_square.assign(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = scale * grad[i];
            double& ms = state.mean_square[i];
            ms = cfg.rho * ms + (1.0 - cfg.rho) * g * g;
            p[i] -= cfg.learning_rate * g / (std::sqrt(ms) + cfg.epsilon);
        }
    }
    ++state.steps;
}

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

inline constexpr const char* kNetworkFormat = "dqv-network/1";

inline nlohmann::json to_json(const NetworkTopology& t) {
    return {{"input_dim", t.input_dim},
            {"trunk", t.trunk},
            {"head", to_string(t.head)},
            {"v_head_depth", t.v_head_depth},
            {"v_head_width", t.v_head_width},
            {"q_head_width", t.q_head_width},
            {"num_actions", t.num_actions},
            {"activation", t.activation == Activation::relu ? "relu" : "tanh"},
            {"bias", t.bias}};
}

inline NetworkTopology topology_from_json(const nlohmann::json& j) {
    NetworkTopology t;
    t.input_dim = j.at("input_dim").get<std::size_t>();
    t.trunk = j.at("trunk").get<std::vector<std::size_t>>();
    t.head = head_mode_from_string(j.at("head").get<std::string>());
    t.v_head_depth = j.value("v_head_depth", std::size_t{0});
    t.v_head_width = j.value("v_head_width", std::size_t{0});
    t.q_head_width = j.value("q_head_width", std::size_t{0});
    t.num_actions = j.at("num_actions").get<std::size_t>();
    auto act = j.value("activation", std::string("relu"));
    require(act == "relu" || act == "tanh", "unknown activation '" + act + "'");
    t.activation = act == "relu" ? Activation::relu : Activation::tanh;
    t.bias = j.value("bias", true);
    t.validate();
    return t;
}

inline nlohmann::json to_json(const Network& n) {
    return {{"format", kNetworkFormat},
            {"topology", to_json(n.topology())},
            {"seed", n.seed()},
            {"params", n.params()}};
}

inline Network network_from_json(const nlohmann::json& j) {
    try {
        require(j.at("format").get<std::string>() == kNetworkFormat, "unsupported network format tag");
        return Network(topology_from_json(j.at("topology")), j.at("params").get<Vector>(),
                       j.at("seed").get<std::uint64_t>());
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed network document: ") + e.what());
    }
}

} // namespace dqv
