#pragma once

// l1-penalised lag-1 logistic regression with a spline trend, fitted per
// neuron by iteratively reweighted least squares with cyclic coordinate
// descent, plus BIC-based selection of the penalty.
//
// Parameters of neuron i are stored as one vector theta laid out as
//   [ gamma_1 .. gamma_d | beta | c_1 .. c_m ]
// against the centered basis. The likelihood of every trial conditions on
// its first bin, so a trial of n bins contributes n - 1 observations.

#include "bapla/basis.hpp"
#include "bapla/logistic.hpp"
#include "bapla/panel.hpp"
#include "bapla/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bapla {

struct FitOptions {
    int max_outer_iters = 50;
    int max_inner_iters = 1000;
    double tol = 1e-7;
    double weight_floor = 1e-5;
    int lambda_grid_size = 50;
    double lambda_min_ratio = 1e-3;
    bool per_neuron_lambda = false;

    void validate() const {
        if (max_outer_iters < 1 || max_inner_iters < 1) throw std::invalid_argument("iteration caps must be positive");
        if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
        if (!(weight_floor > 0.0 && weight_floor < 0.5)) throw std::invalid_argument("weight_floor must lie in (0, 0.5)");
        if (lambda_grid_size < 1) throw std::invalid_argument("lambda_grid_size must be positive");
        if (!(lambda_min_ratio > 0.0 && lambda_min_ratio <= 1.0)) {
            throw std::invalid_argument("lambda_min_ratio must lie in (0, 1]");
        }
    }
};

struct NeuronFit {
    double beta = 0.0;
    Eigen::VectorXd gamma;
    Eigen::VectorXd spline_coefs;
    double lambda = 0.0;
    double neg_loglik = 0.0;   // unpenalised, at the solution
    double objective = 0.0;    // neg_loglik + lambda * |gamma|_1
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_path;  // penalised objective after each accepted IRLS step

    int nonzeros() const {
        int k = 0;
        for (Eigen::Index j = 0; j < gamma.size(); ++j) k += gamma(j) != 0.0;
        return k;
    }
};

struct ModelFit {
    std::vector<NeuronFit> fits;
    BasisMatrix basis;
    InteractionMatrix interaction;
    double lambda_star = 0.0;

    int neuron_count() const { return static_cast<int>(fits.size()); }

    Eigen::VectorXd beta() const {
        Eigen::VectorXd b(neuron_count());
        for (int i = 0; i < neuron_count(); ++i) b(i) = fits[static_cast<std::size_t>(i)].beta;
        return b;
    }

    /// d x m matrix of spline coefficients.
    Eigen::MatrixXd spline_coefs() const {
        Eigen::MatrixXd c(neuron_count(), basis.cols());
        for (int i = 0; i < neuron_count(); ++i) c.row(i) = fits[static_cast<std::size_t>(i)].spline_coefs.transpose();
        return c;
    }

    /// d x n_trial matrix of fitted trends f_i(t/n).
    Eigen::MatrixXd fhat() const {
        Eigen::MatrixXd f(neuron_count(), basis.rows());
        for (int i = 0; i < neuron_count(); ++i) f.row(i) = basis.curve(fits[static_cast<std::size_t>(i)].spline_coefs).transpose();
        return f;
    }
};

// ---------------------------------------------------------------------------
// Scalar building blocks

/// S(a, kappa): shrink a toward zero by kappa, exactly zero when |a| <= kappa.
inline double soft_threshold(double a, double kappa) noexcept {
    if (a > 0.0 && kappa < a) return a - kappa;
    if (a < 0.0 && kappa < -a) return a + kappa;
    return 0.0;
}

// ---------------------------------------------------------------------------
// Design

/// Lag-valid rows of a panel against a basis, shared by all neurons.
class LagDesign {
public:
    LagDesign(const SpikePanel& panel, const BasisMatrix& basis) {
        panel.validate();
        d_ = panel.neuron_count();
        n_trial_ = panel.bins_per_trial();
        m_ = static_cast<int>(basis.cols());
        if (d_ < 1) throw std::invalid_argument("panel has no neurons");
        if (basis.rows() != n_trial_) {
            throw std::invalid_argument("basis has " + std::to_string(basis.rows()) + " rows but trials have " +
                                        std::to_string(n_trial_) + " bins");
        }
        if (m_ > 0 && !basis.centered) throw std::invalid_argument("fitting requires a centered basis");
        if (d_ > 65535) throw std::invalid_argument("too many neurons");

        rows_ = panel.effective_length();
        lag_begin_.reserve(static_cast<std::size_t>(rows_ + 1));
        time_.reserve(static_cast<std::size_t>(rows_));
        response_.assign(static_cast<std::size_t>(rows_) * d_, 0);
        lag_begin_.push_back(0);
        long long r = 0;
        for (const auto& trial : panel.trials) {
            for (int t = 1; t < n_trial_; ++t, ++r) {
                const std::uint8_t* prev = trial.row(t - 1);
                for (int j = 0; j < d_; ++j)
                    if (prev[j]) lag_index_.push_back(static_cast<std::uint16_t>(j));
                lag_begin_.push_back(static_cast<std::uint32_t>(lag_index_.size()));
                time_.push_back(static_cast<std::uint32_t>(t));
                const std::uint8_t* cur = trial.row(t);
                for (int i = 0; i < d_; ++i) response_[static_cast<std::size_t>(i) * rows_ + r] = cur[i];
            }
        }

        width_ = m_ > 0 ? basis.degree + 1 : 0;
        column_means_ = m_ > 0 ? basis.column_means : Eigen::VectorXd();
        support_.assign(static_cast<std::size_t>(n_trial_), 0);
        window_.assign(static_cast<std::size_t>(n_trial_) * width_, 0.0);
        for (int t = 0; t < n_trial_ && m_ > 0; ++t) {
            const int first = basis.first_support[static_cast<std::size_t>(t)];
            support_[static_cast<std::size_t>(t)] = first;
            for (int q = 0; q < width_; ++q) window_[static_cast<std::size_t>(t) * width_ + q] = basis.raw(t, first + q);
        }
    }

    int d() const { return d_; }
    int m() const { return m_; }
    int n_trial() const { return n_trial_; }
    int parameter_count() const { return d_ + 1 + m_; }
    int beta_index() const { return d_; }
    int spline_index(int k) const { return d_ + 1 + k; }
    long long rows() const { return rows_; }

    std::uint8_t response(int neuron, long long r) const { return response_[static_cast<std::size_t>(neuron) * rows_ + r]; }
    std::uint32_t time(long long r) const { return time_[static_cast<std::size_t>(r)]; }
    const std::uint16_t* lag_begin(long long r) const { return lag_index_.data() + lag_begin_[static_cast<std::size_t>(r)]; }
    const std::uint16_t* lag_end(long long r) const { return lag_index_.data() + lag_begin_[static_cast<std::size_t>(r) + 1]; }
    int support(int t) const { return support_[static_cast<std::size_t>(t)]; }
    int width() const { return width_; }
    const double* window(int t) const { return window_.data() + static_cast<std::size_t>(t) * width_; }
    const Eigen::VectorXd& column_means() const { return column_means_; }

    /// Lag indicator y_{j, t-1} for row r as a dense vector.
    Eigen::VectorXd lag_vector(long long r) const {
        Eigen::VectorXd y = Eigen::VectorXd::Zero(d_);
        for (auto p = lag_begin(r); p != lag_end(r); ++p) y(*p) = 1.0;
        return y;
    }

    /// eta for every row under theta (centered coordinates).
    void linear_predictor(const Eigen::VectorXd& theta, std::vector<double>& eta) const {
        check_theta(theta);
        double beta_raw = theta(d_);
        for (int k = 0; k < m_; ++k) beta_raw -= theta(spline_index(k)) * column_means_(k);
        std::vector<double> trend(static_cast<std::size_t>(n_trial_), 0.0);
        for (int t = 0; t < n_trial_ && m_ > 0; ++t) {
            const double* v = window(t);
            const int s0 = support(t);
            double f = 0.0;
            for (int q = 0; q < width_; ++q) f += theta(spline_index(s0 + q)) * v[q];
            trend[static_cast<std::size_t>(t)] = f;
        }
        eta.resize(static_cast<std::size_t>(rows_));
        for (long long r = 0; r < rows_; ++r) {
            double e = beta_raw + trend[time(r)];
            for (auto p = lag_begin(r); p != lag_end(r); ++p) e += theta(*p);
            eta[static_cast<std::size_t>(r)] = e;
        }
    }

    void check_theta(const Eigen::VectorXd& theta) const {
        if (theta.size() != parameter_count()) {
            throw std::invalid_argument("parameter vector has length " + std::to_string(theta.size()) + ", expected " +
                                        std::to_string(parameter_count()));
        }
    }

private:
    int d_ = 0;
    int m_ = 0;
    int n_trial_ = 0;
    long long rows_ = 0;
    std::vector<std::uint32_t> lag_begin_;
    std::vector<std::uint16_t> lag_index_;
    std::vector<std::uint32_t> time_;
    std::vector<std::uint8_t> response_;
    int width_ = 0;
    std::vector<int> support_;
    std::vector<double> window_;
    Eigen::VectorXd column_means_;
};

inline Eigen::VectorXd pack_parameters(const NeuronFit& f) {
    const auto d = f.gamma.size();
    const auto m = f.spline_coefs.size();
    Eigen::VectorXd theta(d + 1 + m);
    theta.head(d) = f.gamma;
    theta(d) = f.beta;
    theta.tail(m) = f.spline_coefs;
    return theta;
}

inline void unpack_parameters(const Eigen::VectorXd& theta, int d, NeuronFit& f) {
    const auto m = theta.size() - d - 1;
    f.gamma = theta.head(d);
    f.beta = theta(d);
    f.spline_coefs = theta.tail(m);
}

// ---------------------------------------------------------------------------
// Likelihood

inline double neg_loglik(const LagDesign& design, int neuron, const Eigen::VectorXd& theta) {
    std::vector<double> eta;
    design.linear_predictor(theta, eta);
    double s = 0.0;
    for (long long r = 0; r < design.rows(); ++r) {
        const double e = eta[static_cast<std::size_t>(r)];
        s += softplus(e) - (design.response(neuron, r) ? e : 0.0);
    }
    return s;
}

inline double neg_loglik(const NeuronFit& params, const SpikePanel& panel, const BasisMatrix& basis, int neuron) {
    const LagDesign design(panel, basis);
    if (params.gamma.size() != design.d() || params.spline_coefs.size() != design.m()) {
        throw std::invalid_argument("parameter dimensions do not match panel and basis");
    }
    return neg_loglik(design, neuron, pack_parameters(params));
}

/// Gradient of neg_loglik with respect to theta: -sum_r (y_r - p_r) x_r.
inline Eigen::VectorXd neg_loglik_gradient(const LagDesign& design, int neuron, const Eigen::VectorXd& theta) {
    std::vector<double> eta;
    design.linear_predictor(theta, eta);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(design.parameter_count());
    std::vector<double> by_time(static_cast<std::size_t>(design.n_trial()), 0.0);
    for (long long r = 0; r < design.rows(); ++r) {
        const double res = design.response(neuron, r) - inv_logit(eta[static_cast<std::size_t>(r)]);
        g(design.beta_index()) -= res;
        for (auto p = design.lag_begin(r); p != design.lag_end(r); ++p) g(*p) -= res;
        by_time[design.time(r)] += res;
    }
    for (int t = 0; t < design.n_trial() && design.m() > 0; ++t) {
        const double* v = design.window(t);
        for (int q = 0; q < design.width(); ++q) g(design.spline_index(design.support(t) + q)) -= by_time[static_cast<std::size_t>(t)] * v[q];
    }
    // Raw basis columns -> centered columns.
    for (int k = 0; k < design.m(); ++k) g(design.spline_index(k)) -= design.column_means()(k) * g(design.beta_index());
    return g;
}

// ---------------------------------------------------------------------------
// IRLS surrogate

struct Linearization {
    std::vector<double> z;  // working response
    std::vector<double> w;  // weights p(1-p), p clamped to [eps, 1-eps]
};

inline Linearization irls_linearize(const LagDesign& design, int neuron, const Eigen::VectorXd& theta,
                                    double weight_floor) {
    std::vector<double> eta;
    design.linear_predictor(theta, eta);
    Linearization lin;
    lin.z.resize(eta.size());
    lin.w.resize(eta.size());
    for (long long r = 0; r < design.rows(); ++r) {
        const auto k = static_cast<std::size_t>(r);
        const double p = std::clamp(inv_logit(eta[k]), weight_floor, 1.0 - weight_floor);
        const double w = p * (1.0 - p);
        lin.w[k] = w;
        lin.z[k] = eta[k] + (design.response(neuron, r) - p) / w;
    }
    return lin;
}

inline Linearization irls_linearize(const NeuronFit& params, const SpikePanel& panel, const BasisMatrix& basis,
                                    int neuron, double weight_floor = 1e-5) {
    const LagDesign design(panel, basis);
    return irls_linearize(design, neuron, pack_parameters(params), weight_floor);
}

/// The penalised weighted least-squares problem
///   minimise 1/2 theta' G theta - b' theta + lambda |gamma|_1,
/// which equals -l_Q + lambda |gamma|_1 up to a constant, with G = X'WX and
/// b = X'Wz over the centered design X. Coordinate updates keep G*theta
/// current so each costs O(p).
struct CoordinateState {
    Eigen::MatrixXd gram;
    Eigen::VectorXd rhs;
    Eigen::VectorXd theta;
    Eigen::VectorXd gram_theta;
    int d = 0;
    int m = 0;

    int beta_index() const { return d; }
    int spline_index(int k) const { return d + 1 + k; }

    void set_theta(const Eigen::VectorXd& t) {
        theta = t;
        gram_theta = gram * theta;
    }

    /// 1/2 theta' G theta - b' theta (no penalty).
    double quadratic_value() const { return 0.5 * theta.dot(gram_theta) - rhs.dot(theta); }

    /// Gradient of the smooth part, G theta - b.
    Eigen::VectorXd gradient() const { return gram_theta - rhs; }

    // Columns whose weighted sum of squares is zero relative to sum(w).
    bool degenerate(int j) const { return !(gram(j, j) > 1e-13 * gram(beta_index(), beta_index())); }

    /// Exact minimiser along coordinate j given the others; writes it back.
    double minimise_coordinate(int j, double kappa) {
        const double old = theta(j);
        double updated = 0.0;
        if (!degenerate(j)) {
            const double a = rhs(j) - gram_theta(j) + gram(j, j) * old;
            updated = (kappa > 0.0 ? soft_threshold(a, kappa) : a) / gram(j, j);
        }
        const double delta = updated - old;
        if (delta != 0.0) {
            theta(j) = updated;
            gram_theta.noalias() += delta * gram.col(j);
        }
        return updated;
    }
};

inline CoordinateState build_surrogate(const LagDesign& design, const Linearization& lin) {
    const int d = design.d();
    const int m = design.m();
    const int p = design.parameter_count();
    const int b_idx = design.beta_index();
    // Accumulate X_raw' W X_raw and X_raw' W z over the uncentered basis
    // (banded rows), then map to centered coordinates.
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    const int width = design.width();

    // Spline blocks only depend on the bin index: collect per-bin weight sums.
    std::vector<double> w_t(static_cast<std::size_t>(design.n_trial()), 0.0);
    std::vector<double> wz_t(static_cast<std::size_t>(design.n_trial()), 0.0);
    // lag x spline: sum over rows of w * y_j * phi_k(t) -> per (j, t) accumulation
    Eigen::MatrixXd lag_time;
    if (m > 0) lag_time = Eigen::MatrixXd::Zero(d, design.n_trial());

    double* G = g.data();
    for (long long r = 0; r < design.rows(); ++r) {
        const auto k = static_cast<std::size_t>(r);
        const double w = lin.w[k];
        const double wz = w * lin.z[k];
        const auto t = design.time(r);
        const std::uint16_t* first = design.lag_begin(r);
        const std::uint16_t* last = design.lag_end(r);
        w_t[t] += w;
        wz_t[t] += wz;
        for (auto pa = first; pa != last; ++pa) {
            const int a = *pa;
            b(a) += wz;
            double* col = G + static_cast<std::size_t>(a) * p;  // column a, rows >= a used (lower triangle)
            for (auto pb = pa; pb != last; ++pb) col[*pb] += w;
            if (m > 0) lag_time(a, t) += w;
        }
    }

    for (int t = 0; t < design.n_trial(); ++t) {
        const double wt = w_t[static_cast<std::size_t>(t)];
        g(b_idx, b_idx) += wt;
        b(b_idx) += wz_t[static_cast<std::size_t>(t)];
        if (m == 0) continue;
        const double* v = design.window(t);
        const int s0 = design.support(t);
        for (int q = 0; q < width; ++q) {
            const int cq = design.spline_index(s0 + q);
            g(cq, b_idx) += wt * v[q];
            b(cq) += wz_t[static_cast<std::size_t>(t)] * v[q];
            for (int q2 = q; q2 < width; ++q2) g(design.spline_index(s0 + q2), cq) += wt * v[q] * v[q2];
            for (int a = 0; a < d; ++a) g(cq, a) += lag_time(a, t) * v[q];
        }
    }
    // lag x intercept: sum of w over rows with y_a = 1 equals the diagonal.
    for (int a = 0; a < d; ++a) g(b_idx, a) = g(a, a);

    g.triangularView<Eigen::StrictlyUpper>() = g.transpose().triangularView<Eigen::StrictlyUpper>();

    if (m > 0) {
        // X_centered = X_raw * M with M = I except M(beta, c_k) = -mean_k.
        Eigen::MatrixXd M = Eigen::MatrixXd::Identity(p, p);
        for (int k = 0; k < m; ++k) M(b_idx, design.spline_index(k)) = -design.column_means()(k);
        g = M.transpose() * g * M;
        b = M.transpose() * b;
        g = 0.5 * (g + g.transpose());
    }

    CoordinateState state;
    state.gram = std::move(g);
    state.rhs = std::move(b);
    state.d = d;
    state.m = m;
    state.set_theta(Eigen::VectorXd::Zero(p));
    return state;
}

/// Coordinate update for gamma_{i,j}: S(sum_t w y_j (z - fit without j), lambda)
/// over sum_t w y_j^2; zero when the lag column never fires.
inline double cd_update_gamma_j(CoordinateState& state, int j, double lambda) {
    return state.minimise_coordinate(j, lambda);
}

/// Intercept update: weighted mean of the partial residuals.
inline double cd_update_intercept(CoordinateState& state) { return state.minimise_coordinate(state.beta_index(), 0.0); }

/// Unpenalised update of spline coefficient k on the centered column.
inline double cd_update_spline_k(CoordinateState& state, int k) {
    return state.minimise_coordinate(state.spline_index(k), 0.0);
}

/// Full sweeps (gamma, then beta, then c) until the largest coordinate change
/// falls below tol. Returns the number of sweeps.
inline int cd_solve(CoordinateState& state, double lambda, int max_sweeps, double tol) {
    int sweep = 0;
    while (sweep < max_sweeps) {
        ++sweep;
        double change = 0.0;
        for (int j = 0; j < state.d; ++j) {
            const double old = state.theta(j);
            change = std::max(change, std::abs(cd_update_gamma_j(state, j, lambda) - old));
        }
        {
            const double old = state.theta(state.beta_index());
            change = std::max(change, std::abs(cd_update_intercept(state) - old));
        }
        for (int k = 0; k < state.m; ++k) {
            const double old = state.theta(state.spline_index(k));
            change = std::max(change, std::abs(cd_update_spline_k(state, k) - old));
        }
        if (change < tol) break;
    }
    return sweep;
}

// ---------------------------------------------------------------------------
// Neuron fit

namespace detail {

inline double l1_penalty(const Eigen::VectorXd& theta, int d, double lambda) {
    if (lambda == 0.0) return 0.0;
    double s = 0.0;
    for (int j = 0; j < d; ++j)
        if (theta(j) != 0.0) s += lambda * std::abs(theta(j));
    return s;
}

inline double spike_fraction(const LagDesign& design, int neuron) {
    long long s = 0;
    for (long long r = 0; r < design.rows(); ++r) s += design.response(neuron, r);
    return design.rows() > 0 ? static_cast<double>(s) / static_cast<double>(design.rows()) : 0.5;
}

} // namespace detail

/// gamma = 0, c = 0, beta = logit of the clamped empirical spike fraction.
inline Eigen::VectorXd initial_parameters(const LagDesign& design, int neuron, double weight_floor) {
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(design.parameter_count());
    const double frac = std::clamp(detail::spike_fraction(design, neuron), weight_floor, 1.0 - weight_floor);
    theta(design.beta_index()) = logit(frac);
    return theta;
}

/// Minimises neg_loglik + lambda |gamma|_1 for one neuron. lambda may be
/// +infinity, which pins gamma at zero.
inline NeuronFit fit_neuron(const LagDesign& design, int neuron, double lambda, const FitOptions& opts,
                            const Eigen::VectorXd* start = nullptr) {
    opts.validate();
    if (neuron < 0 || neuron >= design.d()) throw std::invalid_argument("neuron index out of range");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
    const int d = design.d();

    Eigen::VectorXd theta = start ? *start : initial_parameters(design, neuron, opts.weight_floor);
    design.check_theta(theta);
    if (std::isinf(lambda)) theta.head(d).setZero();

    auto objective = [&](const Eigen::VectorXd& th, double& nll) {
        nll = neg_loglik(design, neuron, th);
        return nll + detail::l1_penalty(th, d, lambda);
    };

    NeuronFit fit;
    fit.lambda = lambda;
    double nll = 0.0;
    double obj = objective(theta, nll);
    fit.objective_path.push_back(obj);

    const double inner_tol = 0.1 * opts.tol;
    int outer = 0;
    for (; outer < opts.max_outer_iters; ++outer) {
        const auto lin = irls_linearize(design, neuron, theta, opts.weight_floor);
        auto state = build_surrogate(design, lin);
        state.set_theta(theta);
        cd_solve(state, lambda, opts.max_inner_iters, inner_tol);

        Eigen::VectorXd candidate = state.theta;
        double cand_nll = 0.0;
        double cand_obj = objective(candidate, cand_nll);
        const double slack = 1e-12 * std::max(1.0, std::abs(obj));
        for (int halving = 0; halving < 30 && cand_obj > obj + slack; ++halving) {
            candidate = theta + 0.5 * (candidate - theta);
            cand_obj = objective(candidate, cand_nll);
        }
        const double change = (candidate - theta).cwiseAbs().maxCoeff();
        if (cand_obj > obj + slack) {
            // No descent along the Newton direction: theta is already optimal
            // to working precision.
            fit.converged = change < opts.tol || (obj - cand_obj) > -1e-9 * std::max(1.0, std::abs(obj));
            break;
        }
        theta = std::move(candidate);
        obj = cand_obj;
        nll = cand_nll;
        fit.objective_path.push_back(obj);
        if (change < opts.tol) {
            fit.converged = true;
            ++outer;
            break;
        }
    }
    fit.iterations = outer;
    unpack_parameters(theta, d, fit);
    fit.neg_loglik = nll;
    fit.objective = obj;
    return fit;
}

inline NeuronFit fit_neuron(const SpikePanel& panel, const BasisMatrix& basis, int neuron, double lambda,
                            const FitOptions& opts = {}) {
    const LagDesign design(panel, basis);
    return fit_neuron(design, neuron, lambda, opts);
}

// ---------------------------------------------------------------------------
// Penalty selection

/// Score of the (beta, c)-profiled null model: max_j |sum_t (y_t - p_t) y_{j,t-1}|.
/// This is the smallest lambda whose solution has gamma = 0.
inline double lambda_max(const LagDesign& design, int neuron, const FitOptions& opts = {},
                         NeuronFit* null_fit = nullptr) {
    FitOptions tight = opts;
    tight.tol = std::min(opts.tol, 1e-9);
    const NeuronFit null = fit_neuron(design, neuron, std::numeric_limits<double>::infinity(), tight);
    const Eigen::VectorXd grad = neg_loglik_gradient(design, neuron, pack_parameters(null));
    if (null_fit) *null_fit = null;
    // slack so that the bound survives rounding in the coordinate updates
    return grad.head(design.d()).cwiseAbs().maxCoeff() * (1.0 + 1e-7);
}

inline double lambda_max(const SpikePanel& panel, const BasisMatrix& basis, int neuron, const FitOptions& opts = {}) {
    const LagDesign design(panel, basis);
    return lambda_max(design, neuron, opts);
}

/// BIC = -2 l + log(n) (k + 1 + m), k the number of nonzero lag coefficients.
inline double bic(const NeuronFit& fit, long long n_effective) {
    if (n_effective < 1) throw std::invalid_argument("BIC needs a positive sample size");
    const double k = static_cast<double>(fit.nonzeros());
    const double m = static_cast<double>(fit.spline_coefs.size());
    return 2.0 * fit.neg_loglik + std::log(static_cast<double>(n_effective)) * (k + 1.0 + m);
}

/// size values from lmax down to ratio * lmax, equally spaced in log scale.
inline std::vector<double> lambda_grid(double lmax, int size, double ratio) {
    if (size < 1) throw std::invalid_argument("lambda grid is empty");
    std::vector<double> grid(static_cast<std::size_t>(size));
    if (size == 1) {
        grid[0] = lmax;
        return grid;
    }
    const double step = std::log(ratio) / static_cast<double>(size - 1);
    for (int k = 0; k < size; ++k) grid[static_cast<std::size_t>(k)] = lmax * std::exp(step * k);
    return grid;
}

struct LambdaPath {
    std::vector<double> lambdas;
    std::vector<double> bic;
    std::vector<int> nonzeros;
    std::vector<NeuronFit> fits;
    std::size_t best = 0;

    double best_lambda() const { return lambdas[best]; }
};

/// Warm-started fits along the grid, each scored by BIC.
inline LambdaPath lambda_path(const LagDesign& design, int neuron, const FitOptions& opts, bool keep_fits = false) {
    LambdaPath path;
    NeuronFit null;
    const double lmax = lambda_max(design, neuron, opts, &null);
    path.lambdas = lambda_grid(lmax, opts.lambda_grid_size, opts.lambda_min_ratio);
    Eigen::VectorXd start = pack_parameters(null);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < path.lambdas.size(); ++k) {
        NeuronFit f = fit_neuron(design, neuron, path.lambdas[k], opts, &start);
        start = pack_parameters(f);
        const double score = bic(f, design.rows());
        path.bic.push_back(score);
        path.nonzeros.push_back(f.nonzeros());
        if (score < best) {
            best = score;
            path.best = k;
        }
        if (keep_fits) path.fits.push_back(std::move(f));
    }
    return path;
}

struct LambdaSelection {
    double lambda_star = 0.0;
    std::vector<double> per_panel;                 // mean of per-neuron optima in each panel
    std::vector<std::vector<double>> per_neuron;   // [panel][neuron]
};

/// BIC-optimal lambda for every neuron of every panel; lambda* averages the
/// per-neuron optima within a panel and then across panels.
inline LambdaSelection select_lambda(const std::vector<const SpikePanel*>& panels, const BasisMatrix& basis,
                                     const FitOptions& opts = {}, int threads = 1) {
    if (panels.empty()) throw std::invalid_argument("lambda selection needs at least one panel");
    opts.validate();
    LambdaSelection sel;
    for (const SpikePanel* panel : panels) {
        const LagDesign design(*panel, basis);
        std::vector<double> optima(static_cast<std::size_t>(design.d()));
        parallel_for(design.d(), threads, [&](int i) {
            optima[static_cast<std::size_t>(i)] = lambda_path(design, i, opts).best_lambda();
        });
        double mean = 0.0;
        for (double v : optima) mean += v;
        mean /= static_cast<double>(optima.size());
        sel.per_panel.push_back(mean);
        sel.per_neuron.push_back(std::move(optima));
    }
    for (double v : sel.per_panel) sel.lambda_star += v;
    sel.lambda_star /= static_cast<double>(sel.per_panel.size());
    return sel;
}

inline LambdaSelection select_lambda(const SpikePanel& panel, const BasisMatrix& basis, const FitOptions& opts = {},
                                     int threads = 1) {
    return select_lambda(std::vector<const SpikePanel*>{&panel}, basis, opts, threads);
}

// ---------------------------------------------------------------------------
// Network fit

/// Independent per-neuron fits assembled row-wise into Gamma. When
/// `lambdas` is given it holds one penalty per neuron.
inline ModelFit fit_network(const SpikePanel& panel, const BasisMatrix& basis, double lambda,
                            const FitOptions& opts = {}, int threads = 1,
                            const std::vector<double>* lambdas = nullptr) {
    const LagDesign design(panel, basis);
    const int d = design.d();
    if (lambdas && static_cast<int>(lambdas->size()) != d) throw std::invalid_argument("need one lambda per neuron");
    ModelFit model;
    model.basis = basis;
    model.lambda_star = lambda;
    model.fits.resize(static_cast<std::size_t>(d));
    parallel_for(d, threads, [&](int i) {
        const double li = lambdas ? (*lambdas)[static_cast<std::size_t>(i)] : lambda;
        model.fits[static_cast<std::size_t>(i)] = fit_neuron(design, i, li, opts);
    });
    model.interaction = InteractionMatrix::Zero(d, d);
    for (int i = 0; i < d; ++i) model.interaction.row(i) = model.fits[static_cast<std::size_t>(i)].gamma.transpose();
    return model;
}

} // namespace bapla
