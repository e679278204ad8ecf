#pragma once

// Monte Carlo scenarios: simulate a replicate, fit it, desparsify, score it.
// Replicate r of a run with seed s draws everything from derive_seed(s, r), so
// results do not depend on how replicates are spread over threads.

#include "bapla/basis.hpp"
#include "bapla/fit.hpp"
#include "bapla/infer.hpp"
#include "bapla/metrics.hpp"
#include "bapla/netsim.hpp"
#include "bapla/parallel.hpp"
#include "bapla/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bapla {

enum class AucScores { penalized, desparsified };

inline const char* to_string(AucScores s) { return s == AucScores::penalized ? "penalized" : "desparsified"; }

inline AucScores parse_auc_scores(const std::string& s) {
    if (s == "penalized") return AucScores::penalized;
    if (s == "desparsified") return AucScores::desparsified;
    throw std::invalid_argument("unknown AUC score source '" + s + "' (expected penalized or desparsified)");
}

struct Scenario {
    std::string name = "scenario";
    NetworkSpec network;
    double beta = 0.1;
    TrendSpec trend{TrendFamily::normal_pdf};
    double trend_peak = 2.0;               // max |f| after centering; ignored when amplitude is set
    std::optional<double> trend_amplitude;
    int n = 1000;                          // bins per trial
    int trials = 1;
    int m = 10;
    int degree = 3;
    double alpha = 0.05;
    std::optional<double> lambda;          // BIC selection when empty
    FitOptions fit;
    AucScores auc_scores = AucScores::penalized;

    void validate() const {
        if (network.d < 2) throw std::invalid_argument("scenario needs d >= 2");
        if (n < 2 || trials < 1) throw std::invalid_argument("scenario needs n >= 2 and trials >= 1");
        if (m < 0) throw std::invalid_argument("basis size m must be non-negative");
        if (degree < 0) throw std::invalid_argument("basis degree must be non-negative");
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
        if (lambda && !(*lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
        if (!(trend_peak >= 0.0)) throw std::invalid_argument("trend peak must be non-negative");
        trend.validate();
        fit.validate();
    }

    double amplitude() const { return trend_amplitude ? *trend_amplitude : amplitude_for_peak(trend, trend_peak, n); }
};

/// Cubic unless m is too small for it, in which case the highest degree m
/// functions support.
inline int basis_degree_for(int m, int degree) { return m == 0 ? degree : std::min(degree, m - 1); }

inline BasisMatrix scenario_basis(int m, int degree, int n) { return centered_basis(m, n, basis_degree_for(m, degree)); }

struct SimulatedData {
    InteractionMatrix gamma;
    Eigen::VectorXd beta;
    Eigen::MatrixXd trend;  // d x n, centered
    SpikePanel panel;
    std::uint64_t seed = 0;
};

inline std::uint64_t replicate_seed(std::uint64_t seed, int rep) { return rng::derive_seed(seed, static_cast<std::uint64_t>(rep)); }

inline SimulatedData simulate_scenario(const Scenario& sc, std::uint64_t rep_seed) {
    SimulatedData sim;
    sim.seed = rep_seed;
    NetworkSpec net = sc.network;
    net.seed = rng::derive_seed(rep_seed, 0);
    sim.gamma = generate_network(net);
    sim.beta = Eigen::VectorXd::Constant(net.d, sc.beta);
    const auto curve = trend_curve(sc.trend, sc.amplitude(), sc.n);
    std::vector<TrendCurve> trends(static_cast<std::size_t>(net.d), curve);
    sim.trend = curve.values.transpose().replicate(net.d, 1);
    sim.panel = simulate_bapla(sim.gamma, sim.beta, trends, sc.n, sc.trials, rng::derive_seed(rep_seed, 1));
    return sim;
}

struct ReplicateResult {
    EvalReport report;
    double lambda_star = 0.0;
    int significant_edges = 0;  // off-diagonal
    bool all_converged = true;
    std::uint64_t seed = 0;
};

/// Fit, desparsify and score one simulated data set with basis size m.
inline ReplicateResult evaluate_replicate(const Scenario& sc, const SimulatedData& sim, int m, int threads = 1) {
    const BasisMatrix basis = scenario_basis(m, sc.degree, sc.n);
    ReplicateResult res;
    res.seed = sim.seed;
    res.lambda_star = sc.lambda ? *sc.lambda : select_lambda(sim.panel, basis, sc.fit, threads).lambda_star;
    const ModelFit model = fit_network(sim.panel, basis, res.lambda_star, sc.fit, threads);
    for (const auto& f : model.fits) res.all_converged = res.all_converged && f.converged;
    const DesparsifiedFit desp = desparsify(model, sim.panel, threads);
    const CIMatrix cis = confidence_intervals(desp, sc.alpha);

    const Eigen::MatrixXd scores =
        sc.auc_scores == AucScores::penalized ? model.interaction.cwiseAbs() : desp.gamma_desp.cwiseAbs();
    const CoverageStats cov = coverage_stats(cis, sim.gamma);
    EvalReport& r = res.report;
    r.rmse_gamma = rmse_gamma(model.interaction, sim.gamma);
    r.mse_beta = mse_vector(model.beta(), sim.beta);
    r.mse_f = mse_curves(model.fhat(), sim.trend);
    r.auc = auc_support(scores, support_of(sim.gamma));
    r.avgcov_s = cov.avgcov_s;
    r.avgcov_sc = cov.avgcov_sc;
    r.avglen_s = cov.avglen_s;
    r.avglen_sc = cov.avglen_sc;
    r.rep_count = 1;
    for (Eigen::Index i = 0; i < cis.significant.rows(); ++i)
        for (Eigen::Index j = 0; j < cis.significant.cols(); ++j)
            if (i != j && cis.significant(i, j)) ++res.significant_edges;
    return res;
}

/// Replicates 0..reps-1 of a scenario, one basis size per entry of `ms`;
/// result[r][k] uses ms[k] on the data of replicate r.
inline std::vector<std::vector<ReplicateResult>> run_scenario(const Scenario& sc, int reps, std::uint64_t seed,
                                                              const std::vector<int>& ms, int threads = 1) {
    sc.validate();
    if (reps < 1) throw std::invalid_argument("need at least one replicate");
    if (ms.empty()) throw std::invalid_argument("need at least one basis size");
    std::vector<std::vector<ReplicateResult>> out(static_cast<std::size_t>(reps));
    parallel_for(reps, threads, [&](int r) {
        const SimulatedData sim = simulate_scenario(sc, replicate_seed(seed, r));
        for (int m : ms) out[static_cast<std::size_t>(r)].push_back(evaluate_replicate(sc, sim, m, 1));
    });
    return out;
}

inline std::vector<ReplicateResult> run_scenario(const Scenario& sc, int reps, std::uint64_t seed, int threads = 1) {
    auto nested = run_scenario(sc, reps, seed, std::vector<int>{sc.m}, threads);
    std::vector<ReplicateResult> flat;
    for (auto& v : nested) flat.push_back(v.front());
    return flat;
}

inline EvalReport summarize(const std::vector<ReplicateResult>& reps) {
    std::vector<EvalReport> r;
    for (const auto& x : reps) r.push_back(x.report);
    return summarize(r);
}

} // namespace bapla
