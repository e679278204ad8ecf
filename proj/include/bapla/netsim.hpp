#pragma once

// Ground-truth networks, trend curves and synthetic spike panels.

#include "bapla/logistic.hpp"
#include "bapla/panel.hpp"
#include "bapla/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bapla {

enum class NetworkKind { chain, erdos_renyi, stochastic_block };

inline const char* to_string(NetworkKind k) {
    switch (k) {
        case NetworkKind::chain: return "chain";
        case NetworkKind::erdos_renyi: return "erdos_renyi";
        case NetworkKind::stochastic_block: return "stochastic_block";
    }
    return "?";
}

inline NetworkKind parse_network_kind(const std::string& s) {
    if (s == "chain") return NetworkKind::chain;
    if (s == "erdos_renyi") return NetworkKind::erdos_renyi;
    if (s == "stochastic_block") return NetworkKind::stochastic_block;
    throw std::invalid_argument("unknown network kind '" + s + "'");
}

struct NetworkSpec {
    int d = 10;
    NetworkKind kind = NetworkKind::chain;
    double magnitude = 0.3;
    double sign_mix = 0.5;
    // erdos_renyi
    int edge_count = 18;
    // stochastic_block
    std::vector<int> block_sizes{5, 5};
    double p_within = 0.4;
    double p_between = 0.05;
    std::uint64_t seed = 1;
};

namespace detail {

inline void check_network_params(double magnitude, double sign_mix) {
    if (!(magnitude > 0.0)) throw std::invalid_argument("edge magnitude must be positive");
    if (!(sign_mix >= 0.0 && sign_mix <= 1.0)) throw std::invalid_argument("sign_mix must lie in [0, 1]");
}

// Places the given edges with |weight| = magnitude; round(sign_mix * |E|)
// of them, chosen uniformly, are inhibitory.
inline InteractionMatrix place_edges(int d, const std::vector<std::pair<int, int>>& edges, double magnitude,
                                     double sign_mix, rng::Xoshiro256& gen) {
    InteractionMatrix g = InteractionMatrix::Zero(d, d);
    std::vector<std::size_t> order(edges.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[gen.below(k)]);
    const auto negatives = static_cast<std::size_t>(std::llround(sign_mix * static_cast<double>(edges.size())));
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto [i, j] = edges[order[k]];
        g(i, j) = k < negatives ? -magnitude : magnitude;
    }
    return g;
}

} // namespace detail

/// Neighbouring neurons interact in both directions: edges (i, i+1) and (i+1, i).
inline InteractionMatrix gen_chain(int d, double magnitude, double sign_mix, std::uint64_t seed) {
    if (d < 2) throw std::invalid_argument("chain graph needs d >= 2");
    detail::check_network_params(magnitude, sign_mix);
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i + 1 < d; ++i) {
        edges.emplace_back(i, i + 1);
        edges.emplace_back(i + 1, i);
    }
    auto gen = rng::substream(seed, 0);
    return detail::place_edges(d, edges, magnitude, sign_mix, gen);
}

/// Exactly edge_count directed off-diagonal edges, uniformly without replacement.
inline InteractionMatrix gen_erdos_renyi(int d, int edge_count, double magnitude, double sign_mix,
                                         std::uint64_t seed) {
    if (d < 1) throw std::invalid_argument("network needs d >= 1");
    detail::check_network_params(magnitude, sign_mix);
    const long long slots = static_cast<long long>(d) * (d - 1);
    if (edge_count < 0 || edge_count > slots) {
        throw std::invalid_argument("edge_count must lie in [0, d(d-1)] = [0, " + std::to_string(slots) + "]");
    }
    std::vector<std::pair<int, int>> all;
    all.reserve(static_cast<std::size_t>(slots));
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (i != j) all.emplace_back(i, j);
    auto gen = rng::substream(seed, 0);
    for (int k = 0; k < edge_count; ++k) {
        const auto pick = static_cast<std::size_t>(k) + gen.below(all.size() - static_cast<std::size_t>(k));
        std::swap(all[static_cast<std::size_t>(k)], all[pick]);
    }
    all.resize(static_cast<std::size_t>(edge_count));
    std::sort(all.begin(), all.end());
    auto sign_gen = rng::substream(seed, 1);
    return detail::place_edges(d, all, magnitude, sign_mix, sign_gen);
}

/// Each ordered off-diagonal pair is an edge independently, with probability
/// p_within inside a block and p_between across blocks.
inline InteractionMatrix gen_sbm(const std::vector<int>& block_sizes, double p_within, double p_between,
                                 double magnitude, double sign_mix, std::uint64_t seed) {
    detail::check_network_params(magnitude, sign_mix);
    if (block_sizes.empty()) throw std::invalid_argument("stochastic block model needs at least one block");
    for (int s : block_sizes)
        if (s < 1) throw std::invalid_argument("block sizes must be positive");
    if (!(p_within >= 0.0 && p_within <= 1.0 && p_between >= 0.0 && p_between <= 1.0)) {
        throw std::invalid_argument("block probabilities must lie in [0, 1]");
    }
    if (!(p_within > p_between)) throw std::invalid_argument("stochastic block model needs p_within > p_between");

    std::vector<int> block_of;
    for (std::size_t b = 0; b < block_sizes.size(); ++b) block_of.insert(block_of.end(), block_sizes[b], static_cast<int>(b));
    const int d = static_cast<int>(block_of.size());

    auto gen = rng::substream(seed, 0);
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            if (i == j) continue;
            const double p = block_of[static_cast<std::size_t>(i)] == block_of[static_cast<std::size_t>(j)] ? p_within : p_between;
            if (gen.bernoulli(p)) edges.emplace_back(i, j);
        }
    }
    auto sign_gen = rng::substream(seed, 1);
    return detail::place_edges(d, edges, magnitude, sign_mix, sign_gen);
}

inline InteractionMatrix generate_network(const NetworkSpec& spec) {
    switch (spec.kind) {
        case NetworkKind::chain: return gen_chain(spec.d, spec.magnitude, spec.sign_mix, spec.seed);
        case NetworkKind::erdos_renyi:
            return gen_erdos_renyi(spec.d, spec.edge_count, spec.magnitude, spec.sign_mix, spec.seed);
        case NetworkKind::stochastic_block: {
            int total = 0;
            for (int s : spec.block_sizes) total += s;
            if (total != spec.d) {
                throw std::invalid_argument("block sizes sum to " + std::to_string(total) + " but d = " +
                                            std::to_string(spec.d));
            }
            return gen_sbm(spec.block_sizes, spec.p_within, spec.p_between, spec.magnitude, spec.sign_mix, spec.seed);
        }
    }
    throw std::invalid_argument("unknown network kind");
}

/// Directed off-diagonal edge count.
inline int edge_count(const InteractionMatrix& g) {
    int c = 0;
    for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j)
            if (i != j && g(i, j) != 0.0) ++c;
    return c;
}

// ---------------------------------------------------------------------------
// Trends

enum class TrendFamily { zero, normal_pdf, gamma_pdf };

inline const char* to_string(TrendFamily f) {
    switch (f) {
        case TrendFamily::zero: return "zero";
        case TrendFamily::normal_pdf: return "normal";
        case TrendFamily::gamma_pdf: return "gamma";
    }
    return "?";
}

inline TrendFamily parse_trend_family(const std::string& s) {
    if (s == "zero") return TrendFamily::zero;
    if (s == "normal") return TrendFamily::normal_pdf;
    if (s == "gamma") return TrendFamily::gamma_pdf;
    throw std::invalid_argument("unknown trend family '" + s + "'");
}

struct TrendSpec {
    TrendFamily family = TrendFamily::zero;
    double mu = 0.5;     // normal location
    double sigma = 0.1;  // normal scale
    double shape = 2.0;  // gamma shape
    double rate = 8.0;   // gamma rate

    void validate() const {
        if (family == TrendFamily::normal_pdf && !(sigma > 0.0)) throw std::invalid_argument("normal trend needs sigma > 0");
        if (family == TrendFamily::gamma_pdf && !(shape > 0.0 && rate > 0.0)) {
            throw std::invalid_argument("gamma trend needs shape > 0 and rate > 0");
        }
    }
};

/// Unscaled density of the trend family at u.
inline double trend_pdf(const TrendSpec& spec, double u) {
    switch (spec.family) {
        case TrendFamily::zero: return 0.0;
        case TrendFamily::normal_pdf: {
            const double z = (u - spec.mu) / spec.sigma;
            return std::exp(-0.5 * z * z) / (spec.sigma * std::sqrt(2.0 * std::numbers::pi));
        }
        case TrendFamily::gamma_pdf: {
            if (u < 0.0) return 0.0;
            if (u == 0.0) return spec.shape == 1.0 ? spec.rate : (spec.shape < 1.0 ? HUGE_VAL : 0.0);
            return std::exp(spec.shape * std::log(spec.rate) + (spec.shape - 1.0) * std::log(u) - spec.rate * u -
                            std::lgamma(spec.shape));
        }
    }
    return 0.0;
}

struct TrendCurve {
    Eigen::VectorXd values;  // f(t/n), t = 1..n, mean zero
    TrendSpec spec;
    double amplitude = 0.0;
    double offset = 0.0;  // mean removed from amplitude * pdf

    Eigen::VectorXd raw_values() const { return values.array() + offset; }
};

inline TrendCurve trend_curve(const TrendSpec& spec, double amplitude, int n) {
    spec.validate();
    if (!(amplitude >= 0.0)) throw std::invalid_argument("trend amplitude must be non-negative");
    if (n < 1) throw std::invalid_argument("trend needs n >= 1");
    TrendCurve c;
    c.spec = spec;
    c.amplitude = amplitude;
    c.values.resize(n);
    for (int t = 1; t <= n; ++t) c.values(t - 1) = amplitude * trend_pdf(spec, static_cast<double>(t) / n);
    if (spec.family == TrendFamily::zero) {
        c.values.setZero();
        return c;
    }
    c.offset = c.values.mean();
    c.values.array() -= c.offset;
    return c;
}

/// Amplitude that makes max_t |f(t/n)| equal `peak` after centering.
inline double amplitude_for_peak(const TrendSpec& spec, double peak, int n) {
    if (spec.family == TrendFamily::zero) return 0.0;
    const auto unit = trend_curve(spec, 1.0, n);
    const double m = unit.values.cwiseAbs().maxCoeff();
    if (!(m > 0.0)) throw std::invalid_argument("trend is constant on the sampling grid");
    return peak / m;
}

// ---------------------------------------------------------------------------
// Simulation

/// Draws l independent trials of n_trial bins from the lag-1 Bernoulli
/// autoregression with per-neuron intercepts and trends. The pre-history of
/// each trial is the zero vector. Trial k uses substream (seed, k).
inline SpikePanel simulate_bapla(const InteractionMatrix& net, const Eigen::VectorXd& beta,
                                 const std::vector<TrendCurve>& trends, int n_trial, int l, std::uint64_t seed) {
    const auto d = net.rows();
    if (net.cols() != d) throw std::invalid_argument("interaction matrix must be square");
    if (beta.size() != d) throw std::invalid_argument("beta length does not match network dimension");
    if (static_cast<Eigen::Index>(trends.size()) != d) throw std::invalid_argument("need one trend per neuron");
    for (const auto& tr : trends)
        if (tr.values.size() != n_trial) throw std::invalid_argument("trend length does not match n_trial");
    if (n_trial < 1 || l < 1) throw std::invalid_argument("need n_trial >= 1 and l >= 1");

    const int dd = static_cast<int>(d);
    SpikePanel panel;
    panel.neuron_ids = default_neuron_ids(dd);
    panel.trials.reserve(static_cast<std::size_t>(l));

    // Edge lists per target neuron.
    std::vector<std::vector<std::pair<int, double>>> inputs(static_cast<std::size_t>(d));
    for (int i = 0; i < dd; ++i)
        for (int j = 0; j < dd; ++j)
            if (net(i, j) != 0.0) inputs[static_cast<std::size_t>(i)].emplace_back(j, net(i, j));

    std::vector<std::uint8_t> prev(static_cast<std::size_t>(d));
    for (int trial = 0; trial < l; ++trial) {
        auto gen = rng::substream(seed, static_cast<std::uint64_t>(trial));
        BinaryMatrix y(n_trial, dd);
        std::fill(prev.begin(), prev.end(), std::uint8_t{0});
        for (int t = 0; t < n_trial; ++t) {
            for (int i = 0; i < dd; ++i) {
                double eta = beta(i) + trends[static_cast<std::size_t>(i)].values(t);
                for (const auto& [j, w] : inputs[static_cast<std::size_t>(i)]) eta += w * prev[static_cast<std::size_t>(j)];
                y(t, i) = gen.bernoulli(inv_logit(eta)) ? 1 : 0;
            }
            for (int i = 0; i < dd; ++i) prev[static_cast<std::size_t>(i)] = y(t, i);
        }
        panel.trials.push_back(std::move(y));
    }
    return panel;
}

} // namespace bapla
