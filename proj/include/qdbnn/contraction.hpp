#pragma once

#include <vector>

#include "qdbnn/deformation.hpp"
#include "qdbnn/gates.hpp"

// Local-support evaluation of the layer moments.  The conjugated pair
// observable of unit i acts on chain qubits [2i-1, 2i+2] (3 qubits at the
// chain ends), its product with the neighbour on [2i-1, 2i+4], so each term
// is a contraction over at most 6 single-qubit states; the row moments follow
// in O(N).

namespace qdbnn {

/// Chain of single-qubit states: position 2i activation, 2i+1 weight.
inline std::vector<Vec2> chain_states(std::span<const double> p, std::span<const double> q_row) {
    QDBNN_REQUIRE(p.size() == q_row.size(), "chain size mismatch");
    std::vector<Vec2> chain(2 * p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        QDBNN_REQUIRE(p[i] >= 0.0 && p[i] <= 1.0, "activation probability " << p[i] << " outside [0,1]");
        QDBNN_REQUIRE(q_row[i] >= 0.0 && q_row[i] <= 1.0, "weight probability " << q_row[i] << " outside [0,1]");
        chain[2 * i] = Vec2(std::sqrt(1.0 - p[i]), std::sqrt(p[i]));
        chain[2 * i + 1] = Vec2(std::sqrt(1.0 - q_row[i]), std::sqrt(q_row[i]));
    }
    return chain;
}

namespace detail {

struct LocalGate {
    const UnitaryFactorization* gate;
    int chain_lo;  // lower chain qubit of the pair
};

// Builds the local product state on chain qubits [lo, hi], applies the listed
// gates, and returns the probability that every qubit in `ones` reads 1.
inline double local_projected_probability(const std::vector<Vec2>& chain, int lo, int hi,
                                          std::span<const LocalGate> gates, std::span<const int> ones) {
    const int m = hi - lo + 1;
    const std::size_t dim = std::size_t(1) << m;
    std::vector<cplx> amp(dim);
    for (std::size_t s = 0; s < dim; ++s) {
        double v = 1.0;
        for (int q = 0; q < m; ++q) {
            v *= chain[lo + q][(s >> (m - 1 - q)) & 1u];
        }
        amp[s] = v;
    }
    for (const auto& g : gates) {
        if (g.gate == nullptr || g.gate->identity) continue;
        apply_pair_gate(amp.data(), m, g.chain_lo - lo, Mat4(g.gate->u));
    }
    std::size_t mask = 0;
    for (const int q : ones) mask |= std::size_t(1) << (m - 1 - (q - lo));
    double prob = 0.0;
    for (std::size_t s = 0; s < dim; ++s) {
        if ((s & mask) == mask) prob += std::norm(amp[s]);
    }
    return std::min(1.0, std::max(0.0, prob));
}

}  // namespace detail

/// <K_i>: probability that activation i and weight i both read 1 after the
/// local lightcone of the chain circuit.
inline double compute_mu_i(const std::vector<Vec2>& chain, const RealizedRow& row, int i) {
    const int n = row.n_units;
    QDBNN_REQUIRE(static_cast<int>(chain.size()) == 2 * n, "chain/row size mismatch");
    QDBNN_REQUIRE(i >= 0 && i < n, "unit index " << i << " out of range");
    const int lo = std::max(0, 2 * i - 1);
    const int hi = std::min(2 * n - 1, 2 * i + 2);
    std::vector<detail::LocalGate> gates;
    if (i >= 1) gates.push_back({row.p_at(i - 1), 2 * i - 1});
    if (i <= n - 2) gates.push_back({row.p_at(i), 2 * i + 1});
    gates.push_back({row.q_at(i), 2 * i});
    const int ones[2] = {2 * i, 2 * i + 1};
    return detail::local_projected_probability(chain, lo, hi, gates, ones);
}

/// <K_i K_{i+1}>: probability that units i and i+1 all read (1,1) after the
/// joint lightcone.
inline double compute_gamma(const std::vector<Vec2>& chain, const RealizedRow& row, int i) {
    const int n = row.n_units;
    QDBNN_REQUIRE(static_cast<int>(chain.size()) == 2 * n, "chain/row size mismatch");
    QDBNN_REQUIRE(i >= 0 && i < n - 1, "pair index " << i << " out of range");
    const int lo = std::max(0, 2 * i - 1);
    const int hi = std::min(2 * n - 1, 2 * i + 4);
    std::vector<detail::LocalGate> gates;
    if (i >= 1) gates.push_back({row.p_at(i - 1), 2 * i - 1});
    gates.push_back({row.p_at(i), 2 * i + 1});
    if (i <= n - 3) gates.push_back({row.p_at(i + 1), 2 * i + 3});
    gates.push_back({row.q_at(i), 2 * i});
    gates.push_back({row.q_at(i + 1), 2 * i + 2});
    const int ones[4] = {2 * i, 2 * i + 1, 2 * i + 2, 2 * i + 3};
    return detail::local_projected_probability(chain, lo, hi, gates, ones);
}

struct RowMoments {
    double mu = 0.0;
    double sigma2 = 0.0;
    Eigen::VectorXd mu_i;
    Eigen::VectorXd gamma;  // gamma_{i,i+1}, i = 0..N-2
};

/// Row moments from the local contractions:
///   mu      = sum_i mu_i
///   sigma^2 = 2 sum_i (gamma_{i,i+1} - mu_i mu_{i+1}) + sum_i (mu_i - mu_i^2)
inline RowMoments row_moments_reference(const std::vector<Vec2>& chain, const RealizedRow& row) {
    const int n = row.n_units;
    RowMoments out;
    out.mu_i.resize(n);
    out.gamma.resize(std::max(0, n - 1));
    for (int i = 0; i < n; ++i) out.mu_i[i] = compute_mu_i(chain, row, i);
    for (int i = 0; i + 1 < n; ++i) out.gamma[i] = compute_gamma(chain, row, i);
    out.mu = out.mu_i.sum();
    double s2 = 0.0;
    for (int i = 0; i + 1 < n; ++i) s2 += 2.0 * (out.gamma[i] - out.mu_i[i] * out.mu_i[i + 1]);
    for (int i = 0; i < n; ++i) s2 += out.mu_i[i] - out.mu_i[i] * out.mu_i[i];
    out.sigma2 = s2;
    return out;
}

// Output probability of one unit from its moments: the Gaussian CDF step
// p(2*phi - N > 0) = Phi((2(mu + bias) - N) / (2 sigma)), with sigma floored
// so a degenerate preactivation keeps a finite value and gradient.
inline double clt_output_probability(double mu, double sigma2, double bias, int n_units,
                                     double sigma_floor = 1e-4) {
    const double sigma = std::sqrt(std::max(0.0, sigma2));
    const double s = std::max(sigma, sigma_floor);
    const double z = (2.0 * (mu + bias) - double(n_units)) / (2.0 * s);
    return std_normal_cdf(z);
}

}  // namespace qdbnn
