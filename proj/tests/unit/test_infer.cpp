#include <limits>
#include "bapla/infer.hpp"
#include "bapla/netsim.hpp"
#include "bapla/normal.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bapla;
using testkit::random_panel;
using testkit::simulate_plain;

namespace {

Eigen::VectorXd random_theta(int size, std::uint64_t seed) {
    auto g = rng::substream(seed, 11);
    Eigen::VectorXd th(size);
    for (int k = 0; k < size; ++k) th(k) = 2.0 * g.uniform() - 1.0;
    return th;
}

Eigen::MatrixXd random_spd(int d, std::uint64_t seed) {
    auto g = rng::substream(seed, 12);
    Eigen::MatrixXd a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = (2.0 * g.uniform() - 1.0);
    return a * a.transpose() + d * Eigen::MatrixXd::Identity(d, d);
}

} // namespace

TEST(ScoreGamma, MatchesFiniteDifferencesOfMeanLikelihood) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto panel = random_panel(4, 150, 2, 0.3, seed);
        const LagDesign design(panel, centered_basis(4, 150));
        const Eigen::VectorXd th = random_theta(design.parameter_count(), seed);
        const Eigen::VectorXd s = score_gamma(design, 1, th);
        const double n = static_cast<double>(design.rows()), h = 1e-5;
        for (int j = 0; j < 4; ++j) {
            Eigen::VectorXd a = th, b = th;
            a(j) += h;
            b(j) -= h;
            const double fd = (neg_loglik(design, 1, a) - neg_loglik(design, 1, b)) / (2 * h * n);
            EXPECT_NEAR(s(j), fd, 1e-6 * std::max(1e-3, std::abs(fd)));
        }
    }
}

TEST(ScoreGamma, VanishesAtUnpenalisedOptimum) {
    const auto panel = simulate_plain(gen_chain(4, 0.5, 0.5, 1), 0.1, 4000, 1, 2);
    const auto basis = centered_basis(5, 4000);
    FitOptions opts;
    opts.tol = 1e-10;
    const NeuronFit fit = fit_neuron(panel, basis, 2, 0.0, opts);
    EXPECT_LE(score_gamma(fit, panel, basis, 2).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FisherGamma, MatchesFiniteDifferencesOfScore) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto panel = random_panel(4, 150, 2, 0.3, seed + 50);
        const LagDesign design(panel, centered_basis(4, 150));
        const Eigen::VectorXd th = random_theta(design.parameter_count(), seed + 50);
        const Eigen::MatrixXd f = fisher_gamma(design, 0, th);
        const double h = 1e-5;
        for (int j = 0; j < 4; ++j) {
            Eigen::VectorXd a = th, b = th;
            a(j) += h;
            b(j) -= h;
            const Eigen::VectorXd col = (score_gamma(design, 0, a) - score_gamma(design, 0, b)) / (2 * h);
            for (int k = 0; k < 4; ++k) EXPECT_NEAR(f(k, j), col(k), 1e-5 * std::max(1e-3, std::abs(col(k))));
        }
    }
}

TEST(FisherGamma, ConstantLagColumnGivesMeanWeight) {
    SpikePanel panel;
    panel.neuron_ids = {"a"};
    BinaryMatrix ones(30, 1);
    for (int t = 0; t < 30; ++t) ones(t, 0) = 1;
    panel.trials.push_back(ones);
    NeuronFit fit;
    fit.gamma = Eigen::VectorXd::Constant(1, 0.3);
    fit.beta = -0.5;
    const double p = inv_logit(-0.2);
    EXPECT_NEAR(fisher_gamma(fit, panel, BasisMatrix::none(30), 0)(0, 0), p * (1 - p), 1e-15);
}

TEST(FisherGamma, SymmetricPositiveSemidefinite) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto panel = random_panel(6, 80, 1, 0.2, seed);
        const LagDesign design(panel, centered_basis(4, 80));
        const Eigen::MatrixXd f = fisher_gamma(design, 3, random_theta(design.parameter_count(), seed));
        EXPECT_LE((f - f.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(f).eigenvalues().minCoeff(), -1e-10);
    }
}

TEST(RelaxedInverse, SmallExamples) {
    const auto id = relaxed_inverse(Eigen::MatrixXd::Identity(3, 3));
    EXPECT_TRUE(id.theta.isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-15));
    EXPECT_FALSE(id.ridge_applied);
    const auto dg = relaxed_inverse(Eigen::Vector2d(2, 4).asDiagonal().toDenseMatrix());
    EXPECT_DOUBLE_EQ(dg.theta(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(dg.theta(1, 1), 0.25);
    EXPECT_EQ(dg.theta(0, 1), 0.0);
}

TEST(RelaxedInverse, MultipliesBackToIdentity) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Eigen::MatrixXd s = random_spd(8, seed);
        const auto inv = relaxed_inverse(s);
        EXPECT_LE((inv.theta * s - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(RelaxedInverse, RidgeFallbackOnSingularInput) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(3, 3);
    s(0, 0) = 2.0;
    s(1, 1) = 1.0;  // third direction has no curvature
    const auto inv = relaxed_inverse(s);
    EXPECT_TRUE(inv.ridge_applied);
    EXPECT_DOUBLE_EQ(inv.ridge, 1e-6 * 3.0 / 3.0);
    EXPECT_NEAR(inv.theta(2, 2), 1.0 / inv.ridge, 1e-3);
    const auto explicit_ridge = relaxed_inverse(s, 0.5);
    EXPECT_NEAR(explicit_ridge.theta(2, 2), 2.0, 1e-12);
}

TEST(RelaxedInverse, RejectsAsymmetricInput) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(2, 2);
    s(0, 1) = 0.1;
    EXPECT_THROW(relaxed_inverse(s), std::invalid_argument);
    EXPECT_THROW(relaxed_inverse(Eigen::MatrixXd::Zero(2, 3)), std::invalid_argument);
}

TEST(Desparsify, UnpenalisedFitIsAlreadyDebiased) {
    const auto panel = simulate_plain(gen_chain(4, 0.5, 0.5, 3), 0.1, 4000, 1, 4);
    FitOptions opts;
    opts.tol = 1e-10;
    const auto model = fit_network(panel, centered_basis(5, 4000), 0.0, opts);
    const auto desp = desparsify(model, panel);
    EXPECT_LE((desp.gamma_desp - model.interaction).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Desparsify, SigmaIsSquareRootOfInverseFisherDiagonal) {
    const auto panel = simulate_plain(gen_chain(5, 0.5, 0.5, 4), 0.1, 3000, 1, 5);
    const auto model = fit_network(panel, centered_basis(6, 3000), 5.0);
    const auto desp = desparsify(model, panel);
    const LagDesign design(panel, model.basis);
    for (int i = 0; i < 5; ++i) {
        const Eigen::MatrixXd f = fisher_gamma(design, i, pack_parameters(model.fits[static_cast<std::size_t>(i)]));
        const Eigen::VectorXd expect = f.inverse().diagonal().cwiseSqrt();
        EXPECT_LE((desp.sigma.row(i).transpose() - expect).cwiseAbs().maxCoeff(), 1e-10 * expect.maxCoeff());
        EXPECT_GT(desp.sigma.row(i).minCoeff(), 0.0);
    }
    EXPECT_EQ(desp.n_effective, 2999);
}

TEST(Desparsify, IndependentOfThreadCount) {
    const auto panel = simulate_plain(gen_chain(6, 0.5, 0.5, 5), 0.1, 1500, 1, 6);
    const auto model = fit_network(panel, centered_basis(6, 1500), 3.0);
    const auto a = desparsify(model, panel, 1);
    const auto b = desparsify(model, panel, 4);
    EXPECT_TRUE(a.gamma_desp.cwiseEqual(b.gamma_desp).all());
    EXPECT_TRUE(a.sigma.cwiseEqual(b.sigma).all());
}

TEST(Desparsify, NullStatisticIsApproximatelyStandardNormal) {
    const int reps = 200, n = 2000;
    std::vector<double> z;
    for (int r = 0; r < reps; ++r) {
        const auto panel = simulate_plain(InteractionMatrix::Zero(3, 3), 0.0, n, 1, 1000 + r);
        const auto model = fit_network(panel, centered_basis(4, n), 2.0);
        const auto desp = desparsify(model, panel);
        const double root_n = std::sqrt(static_cast<double>(desp.n_effective));
        z.push_back(root_n * desp.gamma_desp(0, 1) / desp.sigma(0, 1));
    }
    double mean = 0.0, sq = 0.0;
    for (double v : z) mean += v;
    mean /= reps;
    for (double v : z) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / (reps - 1));
    EXPECT_LT(std::abs(mean), 0.15);
    EXPECT_LT(std::abs(sd - 1.0), 0.2);
}

TEST(NormalQuantile, TabulatedValues) {
    EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-9);
    EXPECT_NEAR(normal_quantile(0.975), 1.959964, 1e-6);
    EXPECT_NEAR(normal_quantile(0.75), 0.6744897501960817, 1e-9);
    EXPECT_EQ(normal_quantile(0.5), 0.0);
    EXPECT_NEAR(normal_quantile(0.995), 2.5758293035489004, 1e-9);
    EXPECT_NEAR(normal_quantile(0.025), -1.959963984540054, 1e-9);
    EXPECT_NEAR(normal_quantile(1e-10), -6.361340902404056, 1e-8);
    EXPECT_EQ(normal_quantile(0.0), -std::numeric_limits<double>::infinity());
    EXPECT_EQ(normal_quantile(1.0), std::numeric_limits<double>::infinity());
    EXPECT_THROW(normal_quantile(-0.1), std::invalid_argument);
    EXPECT_THROW(normal_quantile(1.5), std::invalid_argument);
    EXPECT_THROW(normal_quantile(std::nan("")), std::invalid_argument);
}

TEST(NormalQuantile, InvertsCdf) {
    for (double p = 0.001; p < 1.0; p += 0.0137) EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-12);
}

TEST(ConfidenceIntervals, HalfWidthFormula) {
    DesparsifiedFit desp;
    desp.gamma_desp = (Eigen::MatrixXd(2, 2) << 0.0, 0.3, -0.2, 0.01).finished();
    desp.sigma = (Eigen::MatrixXd(2, 2) << 1.0, 2.0, 0.5, 1.0).finished();
    desp.n_effective = 400;
    const auto ci = confidence_intervals(desp, 0.05);
    const Eigen::MatrixXd half = 0.5 * ci.length();
    EXPECT_LE((half - desp.sigma * (1.959964 / 20.0)).cwiseAbs().maxCoeff(), 1e-6);
    const auto wide = confidence_intervals(desp, 0.5);
    EXPECT_LE((0.5 * wide.length() - desp.sigma * (0.674490 / 20.0)).cwiseAbs().maxCoeff(), 1e-6);
    desp.n_effective = 1600;
    const auto more = confidence_intervals(desp, 0.05);
    EXPECT_LE((more.length() * 2.0 - ci.length()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ConfidenceIntervals, BracketEstimateAndFlagZeroExclusion) {
    const auto panel = simulate_plain(gen_chain(5, 0.5, 0.5, 6), 0.1, 3000, 1, 7);
    const auto model = fit_network(panel, centered_basis(5, 3000), 4.0);
    const auto desp = desparsify(model, panel);
    const auto ci = confidence_intervals(desp, 0.05);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            EXPECT_LE(ci.lower(i, j), desp.gamma_desp(i, j));
            EXPECT_GE(ci.upper(i, j), desp.gamma_desp(i, j));
            EXPECT_EQ(ci.significant(i, j), !(ci.lower(i, j) <= 0.0 && 0.0 <= ci.upper(i, j)));
        }
    }
    EXPECT_THROW(confidence_intervals(desp, 0.0), std::invalid_argument);
    EXPECT_THROW(confidence_intervals(desp, 1.0), std::invalid_argument);
}

TEST(SignificanceFilter, ExtremeCases) {
    const InteractionMatrix g = (Eigen::MatrixXd(2, 2) << 0.1, -0.3, 0.0, 0.4).finished();
    CIMatrix none;
    none.lower = Eigen::MatrixXd::Constant(2, 2, -1.0);
    none.upper = Eigen::MatrixXd::Constant(2, 2, 1.0);
    none.significant = BoolMatrix::Constant(2, 2, false);
    EXPECT_EQ(significance_filter(g, none), InteractionMatrix::Zero(2, 2));
    CIMatrix all = none;
    all.significant = BoolMatrix::Constant(2, 2, true);
    EXPECT_EQ(significance_filter(g, all), g);
    all.significant(0, 1) = false;
    EXPECT_EQ(significance_filter(g, all)(0, 1), 0.0);
    EXPECT_EQ(significance_filter(g, all)(1, 1), 0.4);
    EXPECT_THROW(significance_filter(InteractionMatrix::Zero(3, 3), all), std::invalid_argument);
}
