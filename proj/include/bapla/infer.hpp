#pragma once

// Desparsified (one-step debiased) lag coefficients and their Wald
// confidence intervals.

#include "bapla/fit.hpp"
#include "bapla/normal.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace bapla {

/// Sample-mean score in gamma at theta, nuisance (beta, c) held fixed:
/// -(1/n) sum_t (y_t - p_t) y_{t-1}.
inline Eigen::VectorXd score_gamma(const LagDesign& design, int neuron, const Eigen::VectorXd& theta) {
    std::vector<double> eta;
    design.linear_predictor(theta, eta);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(design.d());
    for (long long r = 0; r < design.rows(); ++r) {
        const double res = design.response(neuron, r) - inv_logit(eta[static_cast<std::size_t>(r)]);
        for (auto p = design.lag_begin(r); p != design.lag_end(r); ++p) s(*p) -= res;
    }
    return s / static_cast<double>(design.rows());
}

inline Eigen::VectorXd score_gamma(const NeuronFit& fit, const SpikePanel& panel, const BasisMatrix& basis, int neuron) {
    const LagDesign design(panel, basis);
    return score_gamma(design, neuron, pack_parameters(fit));
}

/// (1/n) sum_t p_t (1 - p_t) y_{t-1} y_{t-1}'.
inline Eigen::MatrixXd fisher_gamma(const LagDesign& design, int neuron, const Eigen::VectorXd& theta) {
    (void)neuron;
    std::vector<double> eta;
    design.linear_predictor(theta, eta);
    const int d = design.d();
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(d, d);
    double* F = f.data();
    for (long long r = 0; r < design.rows(); ++r) {
        const double p = inv_logit(eta[static_cast<std::size_t>(r)]);
        const double w = p * (1.0 - p);
        const auto first = design.lag_begin(r);
        const auto last = design.lag_end(r);
        for (auto pa = first; pa != last; ++pa) {
            double* col = F + static_cast<std::size_t>(*pa) * d;
            for (auto pb = pa; pb != last; ++pb) col[*pb] += w;
        }
    }
    f.triangularView<Eigen::StrictlyUpper>() = f.transpose().triangularView<Eigen::StrictlyUpper>();
    return f / static_cast<double>(design.rows());
}

inline Eigen::MatrixXd fisher_gamma(const NeuronFit& fit, const SpikePanel& panel, const BasisMatrix& basis, int neuron) {
    const LagDesign design(panel, basis);
    return fisher_gamma(design, neuron, pack_parameters(fit));
}

struct RelaxedInverse {
    Eigen::MatrixXd theta;
    double condition = 1.0;
    bool ridge_applied = false;
    double ridge = 0.0;
};

inline constexpr double kMaxExactCondition = 1e10;

/// Exact inverse when cond(sigma) <= 1e10, otherwise (sigma + ridge I)^-1.
/// Without an explicit ridge the fallback uses 1e-6 * trace(sigma) / d.
inline RelaxedInverse relaxed_inverse(const Eigen::MatrixXd& sigma, std::optional<double> ridge = std::nullopt) {
    if (sigma.rows() != sigma.cols()) throw std::invalid_argument("relaxed_inverse needs a square matrix");
    const Eigen::Index d = sigma.rows();
    if (d == 0) return {};
    const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw std::invalid_argument("relaxed_inverse needs a symmetric matrix");
    }
    if (ridge && !(*ridge >= 0.0)) throw std::invalid_argument("ridge must be non-negative");

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    RelaxedInverse out;
    out.condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    if (out.condition <= kMaxExactCondition) {
        out.theta = sigma.ldlt().solve(I);
    } else {
        out.ridge_applied = true;
        out.ridge = ridge ? *ridge : 1e-6 * sigma.trace() / static_cast<double>(d);
        if (!(out.ridge > 0.0)) out.ridge = 1e-12;
        out.theta = (sigma + out.ridge * I).ldlt().solve(I);
    }
    out.theta = 0.5 * (out.theta + out.theta.transpose());
    return out;
}

struct DesparsifiedFit {
    Eigen::MatrixXd gamma_desp;  // row i: gamma_i - Theta_i * score_i
    Eigen::MatrixXd sigma;       // row i: sqrt(diag(Theta Sigma Theta))
    std::vector<double> theta_condition;
    std::vector<bool> ridge_applied;
    std::vector<double> ridge;
    long long n_effective = 0;
};

inline DesparsifiedFit desparsify(const ModelFit& model, const SpikePanel& panel, int threads = 1) {
    const LagDesign design(panel, model.basis);
    const int d = design.d();
    if (model.neuron_count() != d) throw std::invalid_argument("model and panel disagree on neuron count");
    DesparsifiedFit out;
    out.gamma_desp = Eigen::MatrixXd::Zero(d, d);
    out.sigma = Eigen::MatrixXd::Zero(d, d);
    out.theta_condition.assign(static_cast<std::size_t>(d), 0.0);
    out.ridge_applied.assign(static_cast<std::size_t>(d), false);
    out.ridge.assign(static_cast<std::size_t>(d), 0.0);
    out.n_effective = design.rows();
    std::vector<RelaxedInverse> inverses(static_cast<std::size_t>(d));
    parallel_for(d, threads, [&](int i) {
        const auto& fit = model.fits[static_cast<std::size_t>(i)];
        const Eigen::VectorXd theta = pack_parameters(fit);
        const Eigen::VectorXd score = score_gamma(design, i, theta);
        const Eigen::MatrixXd sigma_hat = fisher_gamma(design, i, theta);
        auto inv = relaxed_inverse(sigma_hat);
        out.gamma_desp.row(i) = (fit.gamma - inv.theta * score).transpose();
        const Eigen::MatrixXd sandwich = inv.theta * sigma_hat * inv.theta;
        out.sigma.row(i) = sandwich.diagonal().cwiseMax(0.0).cwiseSqrt().transpose();
        inverses[static_cast<std::size_t>(i)] = std::move(inv);
    });
    for (int i = 0; i < d; ++i) {
        const auto& inv = inverses[static_cast<std::size_t>(i)];
        out.theta_condition[static_cast<std::size_t>(i)] = inv.condition;
        out.ridge_applied[static_cast<std::size_t>(i)] = inv.ridge_applied;
        out.ridge[static_cast<std::size_t>(i)] = inv.ridge;
    }
    return out;
}

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct CIMatrix {
    Eigen::MatrixXd lower;
    Eigen::MatrixXd upper;
    double alpha = 0.05;
    BoolMatrix significant;  // interval excludes zero

    Eigen::MatrixXd length() const { return upper - lower; }
};

/// gamma_desp +- Phi^-1(1 - alpha/2) sigma / sqrt(n_effective).
inline CIMatrix confidence_intervals(const DesparsifiedFit& desp, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (desp.n_effective < 1) throw std::invalid_argument("desparsified fit has no observations");
    const double z = normal_quantile(1.0 - alpha / 2.0);
    const Eigen::MatrixXd half = desp.sigma * (z / std::sqrt(static_cast<double>(desp.n_effective)));
    CIMatrix ci;
    ci.alpha = alpha;
    ci.lower = desp.gamma_desp - half;
    ci.upper = desp.gamma_desp + half;
    ci.significant = (ci.lower.array() > 0.0 || ci.upper.array() < 0.0).matrix();
    return ci;
}

/// Gamma-hat with every entry whose interval covers zero set to zero.
inline InteractionMatrix significance_filter(const InteractionMatrix& gamma_hat, const CIMatrix& cis) {
    if (gamma_hat.rows() != cis.lower.rows() || gamma_hat.cols() != cis.lower.cols()) {
        throw std::invalid_argument("interval matrix does not match interaction matrix");
    }
    InteractionMatrix out = gamma_hat;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j)
            if (!cis.significant(i, j)) out(i, j) = 0.0;
    return out;
}

inline InteractionMatrix significance_filter(const ModelFit& model, const CIMatrix& cis) {
    return significance_filter(model.interaction, cis);
}

} // namespace bapla
