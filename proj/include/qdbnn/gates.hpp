#pragma once

#include <span>
#include <vector>

#include "qdbnn/common.hpp"

namespace qdbnn {

struct QubitStateVector {
    int n_qubits = 0;
    CVec amplitudes;

    static QubitStateVector zero_state(int n_qubits) {
        QubitStateVector s;
        s.n_qubits = n_qubits;
        s.amplitudes = CVec::Zero(std::size_t(1) << n_qubits);
        s.amplitudes[0] = 1.0;
        return s;
    }

    double norm_sq() const { return amplitudes.squaredNorm(); }
};

inline CMat kron(const CMat& a, const CMat& b) {
    CMat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

inline CVec kron(const CVec& a, const CVec& b) {
    CVec out(a.size() * b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        out.segment(i * b.size(), b.size()) = a[i] * b;
    }
    return out;
}

// Applies a 2^k x 2^k gate to the named qubit slots of an n-qubit state.
// targets[0] is the most significant slot of the gate's own index, matching
// the global qubit-0-is-MSB convention.
inline void apply_gate(CVec& state, const CMat& gate, std::span<const int> targets, int n_qubits) {
    const int k = static_cast<int>(targets.size());
    const std::size_t dim = std::size_t(1) << k;
    QDBNN_REQUIRE(gate.rows() == static_cast<Eigen::Index>(dim) && gate.cols() == gate.rows(),
                  "gate is " << gate.rows() << "x" << gate.cols() << ", expected " << dim << "x" << dim);
    QDBNN_REQUIRE(state.size() == static_cast<Eigen::Index>(std::size_t(1) << n_qubits),
                  "state has " << state.size() << " amplitudes, expected 2^" << n_qubits);
    std::size_t target_mask = 0;
    std::vector<std::size_t> slot_bit(k);
    for (int j = 0; j < k; ++j) {
        const int t = targets[j];
        QDBNN_REQUIRE(t >= 0 && t < n_qubits, "target qubit " << t << " out of range");
        slot_bit[j] = std::size_t(1) << (n_qubits - 1 - t);
        QDBNN_REQUIRE((target_mask & slot_bit[j]) == 0, "duplicate target qubit " << t);
        target_mask |= slot_bit[j];
    }
    std::vector<std::size_t> offsets(dim, 0);
    for (std::size_t g = 0; g < dim; ++g) {
        for (int j = 0; j < k; ++j) {
            if ((g >> (k - 1 - j)) & 1u) offsets[g] |= slot_bit[j];
        }
    }
    std::vector<cplx> in(dim);
    const std::size_t n = state.size();
    for (std::size_t base = 0; base < n; ++base) {
        if (base & target_mask) continue;
        for (std::size_t g = 0; g < dim; ++g) in[g] = state[base | offsets[g]];
        for (std::size_t g = 0; g < dim; ++g) {
            cplx acc = 0.0;
            for (std::size_t h = 0; h < dim; ++h) acc += gate(g, h) * in[h];
            state[base | offsets[g]] = acc;
        }
    }
}

/// Fast path: a 4x4 gate on the adjacent qubit pair (q, q+1) of an m-qubit state.
inline void apply_pair_gate(cplx* amp, int m, int q, const Mat4& gate) {
    const std::size_t right = std::size_t(1) << (m - 2 - q);
    const std::size_t total = std::size_t(1) << m;
    for (std::size_t hi = 0; hi < total; hi += 4 * right) {
        for (std::size_t lo = 0; lo < right; ++lo) {
            const std::size_t b = hi + lo;
            cplx v0 = amp[b], v1 = amp[b + right], v2 = amp[b + 2 * right], v3 = amp[b + 3 * right];
            amp[b] = gate(0, 0) * v0 + gate(0, 1) * v1 + gate(0, 2) * v2 + gate(0, 3) * v3;
            amp[b + right] = gate(1, 0) * v0 + gate(1, 1) * v1 + gate(1, 2) * v2 + gate(1, 3) * v3;
            amp[b + 2 * right] = gate(2, 0) * v0 + gate(2, 1) * v1 + gate(2, 2) * v2 + gate(2, 3) * v3;
            amp[b + 3 * right] = gate(3, 0) * v0 + gate(3, 1) * v1 + gate(3, 2) * v2 + gate(3, 3) * v3;
        }
    }
}

inline void apply_single_qubit_gate(CVec& state, const Eigen::Matrix2cd& gate, int qubit, int n_qubits) {
    const std::size_t stride = std::size_t(1) << (n_qubits - 1 - qubit);
    const std::size_t n = state.size();
    for (std::size_t base = 0; base < n; ++base) {
        if (base & stride) continue;
        const cplx a = state[base], b = state[base | stride];
        state[base] = gate(0, 0) * a + gate(0, 1) * b;
        state[base | stride] = gate(1, 0) * a + gate(1, 1) * b;
    }
}

}  // namespace qdbnn
