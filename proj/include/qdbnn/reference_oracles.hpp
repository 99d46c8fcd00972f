#pragma once

#include <functional>
#include <span>
#include <vector>

#include "qdbnn/common.hpp"

// Independent cross-check routes: these share no code with the statevector or
// contraction paths they are used to validate.

namespace qdbnn {

/// P(X >= threshold) for X a sum of independent Bernoulli(probs[i]), by the
/// O(N^2) convolution over counts.
inline double poisson_binomial_tail(std::span<const double> probs, int threshold) {
    const int n = static_cast<int>(probs.size());
    if (threshold <= 0) return 1.0;
    if (threshold > n) return 0.0;
    std::vector<double> dp(n + 1, 0.0);
    dp[0] = 1.0;
    for (int i = 0; i < n; ++i) {
        const double p = probs[i];
        for (int k = i + 1; k >= 1; --k) dp[k] = dp[k] * (1.0 - p) + dp[k - 1] * p;
        dp[0] *= 1.0 - p;
    }
    double tail = 0.0;
    for (int k = n; k >= threshold; --k) tail += dp[k];
    return tail;
}

/// Smallest integer phi with 2*phi > N: the first preactivation value the
/// threshold nonlinearity maps to 1.
inline int layer_threshold_count(int n_units) { return n_units / 2 + 1; }

/// Truncated power series sum_{k<=terms} A^k / k!.
inline CMat expm_series(const CMat& a, int terms) {
    CMat acc = CMat::Identity(a.rows(), a.cols());
    CMat term = CMat::Identity(a.rows(), a.cols());
    for (int k = 1; k <= terms; ++k) {
        term = (term * a) / double(k);
        acc += term;
    }
    return acc;
}

/// Central finite difference of a scalar function of one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace qdbnn
