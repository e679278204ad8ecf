#pragma once

#include <cmath>

namespace bapla {

/// 1 / (1 + exp(-a)), evaluated on the branch that cannot overflow.
inline double inv_logit(double a) noexcept {
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    const double e = std::exp(a);
    return e / (1.0 + e);
}

inline double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

/// log(1 + exp(a)) without overflow.
inline double softplus(double a) noexcept {
    if (a > 0.0) return a + std::log1p(std::exp(-a));
    return std::log1p(std::exp(a));
}

} // namespace bapla
