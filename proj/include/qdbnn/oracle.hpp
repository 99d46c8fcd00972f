#pragma once

#include <span>
#include <vector>

#include "qdbnn/deformation.hpp"
#include "qdbnn/gates.hpp"

// Exact, exponential-cost reference implementations: brute-force enumeration
// of the deformed layer distribution and a gate-level statevector simulation
// of quantum phase estimation.  Desk-scale ground truth for the O(N) layer.

namespace qdbnn {

inline constexpr int kMaxExactUnits = 6;

inline Vec2 prob_qubit(double p) {
    QDBNN_REQUIRE(p >= 0.0 && p <= 1.0, "probability " << p << " outside [0,1]");
    return Vec2(std::sqrt(1.0 - p), std::sqrt(p));
}

/// Product state over the interleaved chain: activation i at qubit 2i (from
/// p[i]), weight i at qubit 2i+1 (from q_row[i]).
inline QubitStateVector build_input_state(std::span<const double> p, std::span<const double> q_row) {
    QDBNN_REQUIRE(p.size() == q_row.size(), "activation/weight size mismatch: " << p.size() << " vs " << q_row.size());
    const int n = static_cast<int>(p.size());
    QubitStateVector s;
    s.n_qubits = 2 * n;
    s.amplitudes = CVec::Ones(1);
    for (int i = 0; i < n; ++i) {
        const Vec2 a = prob_qubit(p[i]);
        const Vec2 w = prob_qubit(q_row[i]);
        CVec pair(4);
        pair << a[0] * w[0], a[0] * w[1], a[1] * w[0], a[1] * w[1];
        s.amplitudes = kron(s.amplitudes, pair);
    }
    return s;
}

/// Number of (activation, weight) pairs that are both 1 in chain basis state s.
inline int chain_phase(std::size_t s, int n_units) {
    int phi = 0;
    const int n_qubits = 2 * n_units;
    for (int i = 0; i < n_units; ++i) {
        phi += qubit_bit(s, 2 * i, n_qubits) & qubit_bit(s, 2 * i + 1, n_qubits);
    }
    return phi;
}

/// Threshold nonlinearity on an integer preactivation: 1 iff phi/(N+1) >= 1/2.
inline int threshold_bit(int phi, int n_units) { return 2 * phi > n_units ? 1 : 0; }

/// Dense matrix of the chain circuit over all 2N qubits (capacity-limited).
inline CMat build_deformation(const RealizedRow& row, int n_units) {
    QDBNN_REQUIRE(row.n_units == n_units, "row built for " << row.n_units << " units, asked for " << n_units);
    if (n_units > kMaxExactUnits) {
        std::ostringstream oss;
        oss << "dense deformation for N=" << n_units << " exceeds the N<=" << kMaxExactUnits << " capacity";
        throw CapacityError(oss.str());
    }
    const std::size_t dim = std::size_t(1) << (2 * n_units);
    CMat out(dim, dim);
    for (std::size_t col = 0; col < dim; ++col) {
        CVec e = CVec::Zero(dim);
        e[col] = 1.0;
        apply_chain(e, row, 2 * n_units, 0, false);
        out.col(col) = e;
    }
    return out;
}

/// Probability table pi over all chain basis states for one output unit.
inline Eigen::VectorXd enumerate_row_pi(std::span<const double> p, std::span<const double> q_row,
                                        const RealizedRow& row) {
    const int n = static_cast<int>(p.size());
    if (n > kMaxExactUnits) {
        throw CapacityError("enumeration capacity exceeded: N=" + std::to_string(n));
    }
    QubitStateVector s = build_input_state(p, q_row);
    apply_chain(s.amplitudes, row, 2 * n, 0, false);
    return s.amplitudes.cwiseAbs2();
}

inline double enumerate_row_marginal(std::span<const double> p, std::span<const double> q_row,
                                     const RealizedRow& row) {
    const int n = static_cast<int>(p.size());
    const Eigen::VectorXd pi = enumerate_row_pi(p, q_row, row);
    double m = 0.0;
    for (std::size_t s = 0; s < static_cast<std::size_t>(pi.size()); ++s) {
        if (threshold_bit(chain_phase(s, n), n)) m += pi[s];
    }
    return m;
}

/// Joint distribution over output bitstrings; bit (M-1-j) of the index is
/// output unit j, matching the qubit-0-is-MSB convention.
struct LayerDistribution {
    int n_outputs = 0;
    std::vector<double> probs;

    double total() const {
        double t = 0.0;
        for (double v : probs) t += v;
        return t;
    }
};

inline LayerDistribution enumerate_layer(std::span<const double> p, const Eigen::MatrixXd& q,
                                         std::span<const RealizedRow> rows) {
    const int n = static_cast<int>(p.size());
    const int m = static_cast<int>(rows.size());
    QDBNN_REQUIRE(q.rows() == m && q.cols() == n,
                  "weight matrix is " << q.rows() << "x" << q.cols() << ", expected " << m << "x" << n);
    std::vector<double> marginals(m);
    for (int j = 0; j < m; ++j) {
        std::vector<double> q_row(q.row(j).begin(), q.row(j).end());
        marginals[j] = enumerate_row_marginal(p, q_row, rows[j]);
    }
    LayerDistribution dist;
    dist.n_outputs = m;
    dist.probs.assign(std::size_t(1) << m, 1.0);
    for (std::size_t h = 0; h < dist.probs.size(); ++h) {
        for (int j = 0; j < m; ++j) {
            const int bit = static_cast<int>((h >> (m - 1 - j)) & 1u);
            dist.probs[h] *= bit ? marginals[j] : 1.0 - marginals[j];
        }
    }
    return dist;
}

/// Exact first two moments of the preactivation under pi (exponential cost).
inline std::pair<double, double> exact_moments(std::span<const double> p, std::span<const double> q_row,
                                               const RealizedRow& row) {
    const int n = static_cast<int>(p.size());
    const Eigen::VectorXd pi = enumerate_row_pi(p, q_row, row);
    double mu = 0.0, second = 0.0;
    for (std::size_t s = 0; s < static_cast<std::size_t>(pi.size()); ++s) {
        const double phi = chain_phase(s, n);
        mu += phi * pi[s];
        second += phi * phi * pi[s];
    }
    return {mu, second - mu * mu};
}

// ---------------------------------------------------------------------------
// Gate-level quantum phase estimation
// ---------------------------------------------------------------------------

inline void apply_hadamard(CVec& state, int qubit, int n_qubits) {
    Eigen::Matrix2cd h;
    const double s = 1.0 / std::sqrt(2.0);
    h << s, s, s, -s;
    apply_single_qubit_gate(state, h, qubit, n_qubits);
}

/// Two-qubit controlled phase: multiplies |11> by e^{i*angle}.
inline void apply_controlled_phase(CVec& state, int qa, int qb, double angle, int n_qubits) {
    const std::size_t mask = (std::size_t(1) << (n_qubits - 1 - qa)) | (std::size_t(1) << (n_qubits - 1 - qb));
    const cplx phase = std::exp(cplx(0.0, angle));
    const std::size_t n = state.size();
    for (std::size_t s = 0; s < n; ++s) {
        if ((s & mask) == mask) state[s] *= phase;
    }
}

inline void apply_swap(CVec& state, int qa, int qb, int n_qubits) {
    const std::size_t ba = std::size_t(1) << (n_qubits - 1 - qa);
    const std::size_t bb = std::size_t(1) << (n_qubits - 1 - qb);
    const std::size_t n = state.size();
    for (std::size_t s = 0; s < n; ++s) {
        if ((s & ba) && !(s & bb)) std::swap(state[s], state[(s & ~ba) | bb]);
    }
}

// Quantum Fourier transform on qubits [begin, begin+t); |j> -> 2^{-t/2} sum_k
// e^{2 pi i jk / 2^t} |k> with j, k read MSB-first.  Explicit Hadamard /
// controlled-phase / swap construction.
inline void apply_qft(CVec& state, int begin, int t, int n_qubits, bool inverse) {
    if (!inverse) {
        for (int q = 0; q < t; ++q) {
            apply_hadamard(state, begin + q, n_qubits);
            for (int r = q + 1; r < t; ++r) {
                apply_controlled_phase(state, begin + r, begin + q, 2.0 * kPi / double(std::size_t(1) << (r - q + 1)),
                                       n_qubits);
            }
        }
        for (int q = 0; q < t / 2; ++q) apply_swap(state, begin + q, begin + t - 1 - q, n_qubits);
    } else {
        for (int q = t / 2 - 1; q >= 0; --q) apply_swap(state, begin + q, begin + t - 1 - q, n_qubits);
        for (int q = t - 1; q >= 0; --q) {
            for (int r = t - 1; r > q; --r) {
                apply_controlled_phase(state, begin + r, begin + q, -2.0 * kPi / double(std::size_t(1) << (r - q + 1)),
                                       n_qubits);
            }
            apply_hadamard(state, begin + q, n_qubits);
        }
    }
}

/// Controlled evolution of the diagonal pair Hamiltonian: for every chain
/// pair, the state picks up e^{i*angle} when the control qubit, the
/// activation qubit and the weight qubit are all 1.
inline void apply_controlled_pair_phases(CVec& state, int control, std::span<const int> act_qubits,
                                         std::span<const int> weight_qubits, double angle, int n_qubits) {
    const std::size_t cmask = std::size_t(1) << (n_qubits - 1 - control);
    const cplx phase = std::exp(cplx(0.0, angle));
    const std::size_t n = state.size();
    std::vector<std::size_t> masks(act_qubits.size());
    for (std::size_t i = 0; i < act_qubits.size(); ++i) {
        masks[i] = (std::size_t(1) << (n_qubits - 1 - act_qubits[i])) |
                   (std::size_t(1) << (n_qubits - 1 - weight_qubits[i]));
    }
    for (std::size_t s = 0; s < n; ++s) {
        if (!(s & cmask)) continue;
        int phi = 0;
        for (const std::size_t m : masks) {
            if ((s & m) == m) ++phi;
        }
        if (phi == 0) continue;
        cplx f = phase;
        for (int k = 1; k < phi; ++k) f *= phase;
        state[s] *= f;
    }
}

inline int min_ancilla_bits(int n_units) {
    int t = 1;
    while ((1 << t) < n_units + 1) ++t;
    return t;
}

struct QpeResult {
    QubitStateVector state;               // full (t + 2N)-qubit register
    double first_ancilla_one = 0.0;       // p(first ancilla bit = 1)
    std::vector<double> phase_distribution;  // ancilla register distribution over 2^t values
};

// One quantum phase estimation pass on an existing register: Hadamards on the
// ancilla block, controlled powers of the conjugated diagonal evolution
// (chain circuit, controlled phases, inverse chain circuit), inverse QFT.
inline void qpe_pass(CVec& state, int n_qubits, int anc_begin, int t,
                     std::span<const int> act_qubits, std::span<const int> weight_qubits,
                     const std::vector<const RealizedRow*>& conjugators,
                     const std::vector<std::vector<int>>& conj_act, const std::vector<std::vector<int>>& conj_w) {
    for (int k = 0; k < t; ++k) apply_hadamard(state, anc_begin + k, n_qubits);
    for (std::size_t c = 0; c < conjugators.size(); ++c) {
        apply_chain_mapped(state, *conjugators[c], n_qubits, conj_act[c], conj_w[c], false);
    }
    const double base_angle = 2.0 * kPi / double(std::size_t(1) << t);
    for (int k = 0; k < t; ++k) {
        const double angle = base_angle * double(std::size_t(1) << (t - 1 - k));
        apply_controlled_pair_phases(state, anc_begin + k, act_qubits, weight_qubits, angle, n_qubits);
    }
    for (std::size_t c = conjugators.size(); c-- > 0;) {
        apply_chain_mapped(state, *conjugators[c], n_qubits, conj_act[c], conj_w[c], true);
    }
    apply_qft(state, anc_begin, t, n_qubits, /*inverse=*/true);
}

/// Gate-level QPE of one deformed unit: register = t ancillas + the 2N chain
/// qubits of `input`.  Requires 2^t > N so every eigenphase is exact.
inline QpeResult qpe_simulate(const QubitStateVector& input, const RealizedRow& row, int t) {
    const int n_units = row.n_units;
    QDBNN_REQUIRE(input.n_qubits == 2 * n_units,
                  "input has " << input.n_qubits << " qubits, expected " << 2 * n_units);
    if (t < 1 || (std::size_t(1) << t) < static_cast<std::size_t>(n_units + 1)) {
        throw ConfigError("ancilla count t=" + std::to_string(t) + " cannot represent phases 0.." +
                          std::to_string(n_units));
    }
    const int n_qubits = t + 2 * n_units;
    CVec anc = CVec::Zero(std::size_t(1) << t);
    anc[0] = 1.0;
    QpeResult res;
    res.state.n_qubits = n_qubits;
    res.state.amplitudes = kron(anc, input.amplitudes);

    std::vector<int> act(n_units), wt(n_units);
    for (int i = 0; i < n_units; ++i) {
        act[i] = t + 2 * i;
        wt[i] = t + 2 * i + 1;
    }
    std::vector<const RealizedRow*> conj{&row};
    std::vector<std::vector<int>> conj_act{act}, conj_w{wt};
    qpe_pass(res.state.amplitudes, n_qubits, 0, t, act, wt, conj, conj_act, conj_w);

    res.phase_distribution.assign(std::size_t(1) << t, 0.0);
    const std::size_t n = res.state.amplitudes.size();
    const int shift = n_qubits - t;
    for (std::size_t s = 0; s < n; ++s) {
        res.phase_distribution[s >> shift] += std::norm(res.state.amplitudes[s]);
    }
    res.first_ancilla_one = 0.0;
    for (std::size_t v = 0; v < res.phase_distribution.size(); ++v) {
        if (v >> (t - 1)) res.first_ancilla_one += res.phase_distribution[v];
    }
    return res;
}

// ---------------------------------------------------------------------------
// Shared-register layer: one activation register, M weight rows, M ancilla
// blocks, sequential QPE passes conjugated by the product of all row chains.
// Outputs are correlated through the shared activation qubits.
// ---------------------------------------------------------------------------

struct CoupledLayerResult {
    LayerDistribution output;
    QubitStateVector state;
};

inline CoupledLayerResult simulate_coupled_layer(std::span<const double> p, const Eigen::MatrixXd& q,
                                                 std::span<const RealizedRow> rows, int t) {
    const int n = static_cast<int>(p.size());
    const int m = static_cast<int>(rows.size());
    const int n_qubits = m * t + n + m * n;
    if (n_qubits > 16) {
        throw CapacityError("coupled register needs " + std::to_string(n_qubits) + " qubits (budget 16)");
    }
    // Register layout: [ancilla block j at j*t][activations][weight row j].
    CVec data = CVec::Ones(1);
    for (int i = 0; i < n; ++i) data = kron(data, CVec(prob_qubit(p[i]).cast<cplx>()));
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) data = kron(data, CVec(prob_qubit(q(j, i)).cast<cplx>()));
    }
    CVec anc = CVec::Zero(std::size_t(1) << (m * t));
    anc[0] = 1.0;
    CVec state = kron(anc, data);

    std::vector<int> act(n);
    for (int i = 0; i < n; ++i) act[i] = m * t + i;
    std::vector<std::vector<int>> row_w(m, std::vector<int>(n));
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) row_w[j][i] = m * t + n + j * n + i;
    }
    std::vector<const RealizedRow*> conj;
    std::vector<std::vector<int>> conj_act, conj_w;
    for (int j = 0; j < m; ++j) {
        conj.push_back(&rows[j]);
        conj_act.push_back(act);
        conj_w.push_back(row_w[j]);
    }
    for (int j = 0; j < m; ++j) {
        qpe_pass(state, n_qubits, j * t, t, act, row_w[j], conj, conj_act, conj_w);
    }

    CoupledLayerResult res;
    res.state.n_qubits = n_qubits;
    res.state.amplitudes = state;
    res.output.n_outputs = m;
    res.output.probs.assign(std::size_t(1) << m, 0.0);
    for (std::size_t s = 0; s < static_cast<std::size_t>(state.size()); ++s) {
        std::size_t key = 0;
        for (int j = 0; j < m; ++j) {
            key = (key << 1) | qubit_bit(s, j * t, n_qubits);
        }
        res.output.probs[key] += std::norm(state[s]);
    }
    return res;
}

/// Brute-force distribution of the shared-register layer: the product of all
/// row chains is applied to the joint state and every basis outcome is
/// thresholded row by row.
inline LayerDistribution enumerate_coupled_layer(std::span<const double> p, const Eigen::MatrixXd& q,
                                                 std::span<const RealizedRow> rows) {
    const int n = static_cast<int>(p.size());
    const int m = static_cast<int>(rows.size());
    const int n_qubits = n + m * n;
    if (n_qubits > 16) {
        throw CapacityError("coupled enumeration needs " + std::to_string(n_qubits) + " qubits (budget 16)");
    }
    CVec state = CVec::Ones(1);
    for (int i = 0; i < n; ++i) state = kron(state, CVec(prob_qubit(p[i]).cast<cplx>()));
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) state = kron(state, CVec(prob_qubit(q(j, i)).cast<cplx>()));
    }
    std::vector<int> act(n);
    for (int i = 0; i < n; ++i) act[i] = i;
    for (int j = 0; j < m; ++j) {
        std::vector<int> wt(n);
        for (int i = 0; i < n; ++i) wt[i] = n + j * n + i;
        apply_chain_mapped(state, rows[j], n_qubits, act, wt, false);
    }
    LayerDistribution dist;
    dist.n_outputs = m;
    dist.probs.assign(std::size_t(1) << m, 0.0);
    for (std::size_t s = 0; s < static_cast<std::size_t>(state.size()); ++s) {
        std::size_t key = 0;
        for (int j = 0; j < m; ++j) {
            int phi = 0;
            for (int i = 0; i < n; ++i) {
                phi += qubit_bit(s, i, n_qubits) & qubit_bit(s, n + j * n + i, n_qubits);
            }
            key = (key << 1) | threshold_bit(phi, n);
        }
        dist.probs[key] += std::norm(state[s]);
    }
    return dist;
}

}  // namespace qdbnn
