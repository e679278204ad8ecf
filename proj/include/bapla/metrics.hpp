#pragma once

// Scores for estimated networks against ground truth. Edge-level statistics
// (AUC, coverage) use off-diagonal entries only; the relative error of Gamma
// uses the full matrix.

#include "bapla/infer.hpp"
#include "bapla/panel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace bapla {

/// ||est - truth||_F^2 / ||truth||_F^2.
inline double rmse_gamma(const InteractionMatrix& est, const InteractionMatrix& truth) {
    if (est.rows() != truth.rows() || est.cols() != truth.cols()) throw std::invalid_argument("matrix shapes differ");
    const double denom = truth.squaredNorm();
    if (!(denom > 0.0)) throw std::invalid_argument("relative error undefined for a zero truth matrix");
    return (est - truth).squaredNorm() / denom;
}

inline double mse_vector(const Eigen::VectorXd& est, const Eigen::VectorXd& truth) {
    if (est.size() != truth.size()) throw std::invalid_argument("vector lengths differ");
    if (est.size() == 0) throw std::invalid_argument("mean squared error of empty vectors");
    return (est - truth).squaredNorm() / static_cast<double>(est.size());
}

/// Mean over neurons and bins; rows are neurons.
inline double mse_curves(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
    if (est.rows() != truth.rows() || est.cols() != truth.cols()) throw std::invalid_argument("curve matrix shapes differ");
    if (est.size() == 0) throw std::invalid_argument("mean squared error of empty curves");
    return (est - truth).squaredNorm() / static_cast<double>(est.size());
}

inline BoolMatrix support_of(const InteractionMatrix& g) { return (g.array() != 0.0).matrix(); }

/// Mann-Whitney AUC of scores for off-diagonal truth edges versus
/// off-diagonal non-edges; ties count one half.
inline double auc_support(const Eigen::MatrixXd& scores, const BoolMatrix& truth) {
    if (scores.rows() != truth.rows() || scores.cols() != truth.cols()) throw std::invalid_argument("matrix shapes differ");
    std::vector<std::pair<double, bool>> items;
    for (Eigen::Index i = 0; i < scores.rows(); ++i)
        for (Eigen::Index j = 0; j < scores.cols(); ++j)
            if (i != j) items.emplace_back(scores(i, j), truth(i, j));
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double pos = 0.0, neg = 0.0, rank_sum = 0.0;
    for (std::size_t k = 0; k < items.size();) {
        std::size_t e = k;
        while (e < items.size() && items[e].first == items[k].first) ++e;
        const double mid_rank = 0.5 * static_cast<double>(k + 1 + e);  // average of ranks k+1..e
        for (std::size_t q = k; q < e; ++q) {
            if (items[q].second) {
                pos += 1.0;
                rank_sum += mid_rank;
            } else {
                neg += 1.0;
            }
        }
        k = e;
    }
    if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("AUC needs both edges and non-edges off the diagonal");
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

struct CoverageStats {
    double avgcov_s = 0.0;
    double avgcov_sc = 0.0;
    double avglen_s = 0.0;
    double avglen_sc = 0.0;
};

/// Fraction of off-diagonal intervals containing the truth, and their mean
/// length, split by truth support (s) and its complement (s^c).
inline CoverageStats coverage_stats(const CIMatrix& cis, const InteractionMatrix& truth) {
    if (cis.lower.rows() != truth.rows() || cis.lower.cols() != truth.cols()) throw std::invalid_argument("matrix shapes differ");
    CoverageStats c;
    double ns = 0.0, nsc = 0.0;
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
        for (Eigen::Index j = 0; j < truth.cols(); ++j) {
            if (i == j) continue;
            const double g = truth(i, j);
            const double covered = (cis.lower(i, j) <= g && g <= cis.upper(i, j)) ? 1.0 : 0.0;
            const double len = cis.upper(i, j) - cis.lower(i, j);
            if (g != 0.0) {
                ns += 1.0;
                c.avgcov_s += covered;
                c.avglen_s += len;
            } else {
                nsc += 1.0;
                c.avgcov_sc += covered;
                c.avglen_sc += len;
            }
        }
    }
    if (ns == 0.0 || nsc == 0.0) throw std::invalid_argument("coverage needs nonempty active set and complement");
    c.avgcov_s /= ns;
    c.avglen_s /= ns;
    c.avgcov_sc /= nsc;
    c.avglen_sc /= nsc;
    return c;
}

struct EvalReport {
    double rmse_gamma = 0.0;
    double mse_beta = 0.0;
    double mse_f = 0.0;
    double auc = 0.5;
    double avgcov_s = 0.0;
    double avgcov_sc = 0.0;
    double avglen_s = 0.0;
    double avglen_sc = 0.0;
    int rep_count = 1;
};

/// Plain mean of per-replicate reports.
inline EvalReport summarize(const std::vector<EvalReport>& reps) {
    if (reps.empty()) throw std::invalid_argument("no replicates to summarize");
    EvalReport s;
    s.auc = 0.0;
    for (const auto& r : reps) {
        s.rmse_gamma += r.rmse_gamma;
        s.mse_beta += r.mse_beta;
        s.mse_f += r.mse_f;
        s.auc += r.auc;
        s.avgcov_s += r.avgcov_s;
        s.avgcov_sc += r.avgcov_sc;
        s.avglen_s += r.avglen_s;
        s.avglen_sc += r.avglen_sc;
    }
    const double n = static_cast<double>(reps.size());
    s.rmse_gamma /= n;
    s.mse_beta /= n;
    s.mse_f /= n;
    s.auc /= n;
    s.avgcov_s /= n;
    s.avgcov_sc /= n;
    s.avglen_s /= n;
    s.avglen_sc /= n;
    s.rep_count = static_cast<int>(reps.size());
    return s;
}

} // namespace bapla
