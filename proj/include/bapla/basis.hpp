#pragma once

// Clamped, uniformly knotted B-spline bases on [0, 1] and the sampled design
// matrices used to represent smooth firing-rate trends.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bapla {

struct BasisSpec {
    int m = 0;       // number of basis functions
    int degree = 3;  // polynomial degree
    std::vector<double> knots;  // m + degree + 1 entries, clamped

    int interior_knot_count() const { return m - degree - 1; }
};

/// Clamped knot vector: degree+1 copies of 0 and of 1 around m-degree-1
/// equally spaced interior knots.
inline BasisSpec make_basis_spec(int m, int degree = 3) {
    if (degree < 0) throw std::invalid_argument("basis degree must be non-negative");
    if (m < degree + 1) {
        throw std::invalid_argument("basis needs m >= degree + 1 (m=" + std::to_string(m) +
                                    ", degree=" + std::to_string(degree) + ")");
    }
    BasisSpec spec;
    spec.m = m;
    spec.degree = degree;
    const int interior = m - degree - 1;
    spec.knots.reserve(static_cast<std::size_t>(m + degree + 1));
    for (int i = 0; i <= degree; ++i) spec.knots.push_back(0.0);
    for (int i = 1; i <= interior; ++i) {
        spec.knots.push_back(static_cast<double>(i) / static_cast<double>(interior + 1));
    }
    for (int i = 0; i <= degree; ++i) spec.knots.push_back(1.0);
    return spec;
}

namespace detail {

// Index s with knots[s] <= u < knots[s+1], restricted to degree <= s < m.
// u == 1 maps to the last non-degenerate span.
inline int find_span(const BasisSpec& spec, double u) {
    const int p = spec.degree;
    const int last = spec.m - 1;
    if (u >= spec.knots[static_cast<std::size_t>(last + 1)]) return last;
    auto first = spec.knots.begin() + p;
    auto end = spec.knots.begin() + last + 2;
    auto it = std::upper_bound(first, end, u);
    return static_cast<int>(std::distance(spec.knots.begin(), it)) - 1;
}

// The degree+1 functions that are nonzero on span s, evaluated at u
// (triangular Cox-de Boor scheme).
inline void nonzero_basis(const BasisSpec& spec, int span, double u, double* out) {
    const int p = spec.degree;
    const auto& U = spec.knots;
    std::vector<double> left(static_cast<std::size_t>(p + 1)), right(static_cast<std::size_t>(p + 1));
    out[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = u - U[static_cast<std::size_t>(span + 1 - j)];
        right[j] = U[static_cast<std::size_t>(span + j)] - u;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

} // namespace detail

inline Eigen::VectorXd eval_basis_row(const BasisSpec& spec, double u) {
    if (!(u >= 0.0 && u <= 1.0)) {
        throw std::invalid_argument("basis argument must lie in [0, 1], got " + std::to_string(u));
    }
    Eigen::VectorXd row = Eigen::VectorXd::Zero(spec.m);
    const int span = detail::find_span(spec, u);
    std::vector<double> local(static_cast<std::size_t>(spec.degree + 1));
    detail::nonzero_basis(spec, span, u, local.data());
    for (int r = 0; r <= spec.degree; ++r) row(span - spec.degree + r) = local[static_cast<std::size_t>(r)];
    return row;
}

/// Basis sampled at u = t/n for t = 1..n.
///
/// `values` is what the estimator sees: the raw basis, or the raw basis minus
/// its column means once centered. `raw` and `first_support` keep the
/// uncentered banded form (row t is nonzero only in columns
/// first_support[t] .. first_support[t] + degree).
struct BasisMatrix {
    Eigen::MatrixXd values;
    bool centered = false;
    Eigen::VectorXd column_means;
    Eigen::MatrixXd raw;
    std::vector<int> first_support;
    int degree = 0;

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }

    /// Trend-free design with n rows and no columns.
    static BasisMatrix none(int n) {
        BasisMatrix b;
        b.values.resize(n, 0);
        b.raw.resize(n, 0);
        b.column_means.resize(0);
        b.first_support.assign(static_cast<std::size_t>(n), 0);
        b.centered = true;
        b.degree = -1;
        return b;
    }

    /// Evaluates sum_k coefs_k * values(t, k) for every row.
    Eigen::VectorXd curve(const Eigen::VectorXd& coefs) const {
        if (coefs.size() != cols()) throw std::invalid_argument("coefficient count does not match basis");
        if (cols() == 0) return Eigen::VectorXd::Zero(rows());
        return values * coefs;
    }
};

inline BasisMatrix build_design(const BasisSpec& spec, int n) {
    if (n < 1) throw std::invalid_argument("design needs n >= 1");
    BasisMatrix b;
    b.values = Eigen::MatrixXd::Zero(n, spec.m);
    b.first_support.resize(static_cast<std::size_t>(n));
    b.degree = spec.degree;
    std::vector<double> local(static_cast<std::size_t>(spec.degree + 1));
    for (int t = 1; t <= n; ++t) {
        const double u = static_cast<double>(t) / static_cast<double>(n);
        const int span = detail::find_span(spec, u);
        detail::nonzero_basis(spec, span, u, local.data());
        const int first = span - spec.degree;
        for (int r = 0; r <= spec.degree; ++r) b.values(t - 1, first + r) = local[static_cast<std::size_t>(r)];
        b.first_support[static_cast<std::size_t>(t - 1)] = first;
    }
    b.raw = b.values;
    b.column_means = Eigen::VectorXd::Zero(spec.m);
    return b;
}

inline BasisMatrix center_design(const BasisMatrix& b) {
    if (b.centered) throw std::invalid_argument("basis matrix is already centered");
    BasisMatrix out = b;
    if (b.cols() > 0) {
        out.column_means = b.values.colwise().mean().transpose();
        out.values = b.values.rowwise() - out.column_means.transpose();
    }
    out.centered = true;
    return out;
}

/// Convenience: spec -> sampled -> centered. m == 0 yields BasisMatrix::none.
inline BasisMatrix centered_basis(int m, int n, int degree = 3) {
    if (m == 0) return BasisMatrix::none(n);
    return center_design(build_design(make_basis_spec(m, degree), n));
}

inline void write_basis_csv(const BasisMatrix& b, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (Eigen::Index k = 0; k < b.cols(); ++k) out << (k ? "," : "") << "phi_" << (k + 1);
    out << '\n';
    char buf[32];
    for (Eigen::Index t = 0; t < b.rows(); ++t) {
        for (Eigen::Index k = 0; k < b.cols(); ++k) {
            std::snprintf(buf, sizeof(buf), "%.9g", b.values(t, k));
            out << (k ? "," : "") << buf;
        }
        out << '\n';
    }
}

} // namespace bapla
