#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qdbnn/gates.hpp"
#include "qdbnn/lie.hpp"

namespace qdbnn {

// Two-qubit gate families of the 1-d entangling circuit.  For a chain of N
// units the Q gate Q_i couples (activation i, weight i) = qubits (2i, 2i+1),
// i = 0..N-1; the P gate P_i couples (weight i, activation i+1) = qubits
// (2i+1, 2i+2), i = 0..N-2.  The circuit applies all P gates, then all Q
// gates.  T-inv variants share one generator across chain positions.
enum class DeformationVariant { identity, q_only, pq, q_tinv, pq_tinv };

inline std::string variant_name(DeformationVariant v) {
    switch (v) {
        case DeformationVariant::identity: return "/";
        case DeformationVariant::q_only: return "Q";
        case DeformationVariant::pq: return "PQ";
        case DeformationVariant::q_tinv: return "Q-Tinv";
        case DeformationVariant::pq_tinv: return "PQ-Tinv";
    }
    return "?";
}

inline std::optional<DeformationVariant> parse_variant(const std::string& s) {
    if (s == "/") return DeformationVariant::identity;
    if (s == "Q") return DeformationVariant::q_only;
    if (s == "PQ") return DeformationVariant::pq;
    if (s == "Q-Tinv") return DeformationVariant::q_tinv;
    if (s == "PQ-Tinv") return DeformationVariant::pq_tinv;
    return std::nullopt;
}

inline bool variant_has_p(DeformationVariant v) {
    return v == DeformationVariant::pq || v == DeformationVariant::pq_tinv;
}

inline bool variant_has_q(DeformationVariant v) { return v != DeformationVariant::identity; }

inline bool variant_tinv(DeformationVariant v) {
    return v == DeformationVariant::q_tinv || v == DeformationVariant::pq_tinv;
}

/// Generators of the entangling gates for one output unit's chain.
struct RowDeformation {
    int n_units = 0;
    DeformationVariant variant = DeformationVariant::identity;
    std::vector<SkewHermitianGenerator> q_gens;  // N, or 1 if shared, or none
    std::vector<SkewHermitianGenerator> p_gens;  // N-1, or 1 if shared, or none

    static int q_gen_count(DeformationVariant v, int n_units) {
        if (!variant_has_q(v)) return 0;
        return variant_tinv(v) ? 1 : n_units;
    }

    static int p_gen_count(DeformationVariant v, int n_units) {
        if (!variant_has_p(v) || n_units < 2) return 0;
        return variant_tinv(v) ? 1 : n_units - 1;
    }

    static RowDeformation make(DeformationVariant v, int n_units) {
        RowDeformation row;
        row.n_units = n_units;
        row.variant = v;
        row.q_gens.assign(q_gen_count(v, n_units), SkewHermitianGenerator::zero(4));
        row.p_gens.assign(p_gen_count(v, n_units), SkewHermitianGenerator::zero(4));
        return row;
    }

    static RowDeformation random(DeformationVariant v, int n_units, double scale, Rng& rng) {
        RowDeformation row = make(v, n_units);
        for (auto& g : row.q_gens) g = random_generator(4, scale, rng);
        for (auto& g : row.p_gens) g = random_generator(4, scale, rng);
        return row;
    }

    int q_gen_index(int i) const {
        if (q_gens.empty()) return -1;
        return variant_tinv(variant) ? 0 : i;
    }

    int p_gen_index(int i) const {
        if (p_gens.empty() || i < 0 || i >= n_units - 1) return -1;
        return variant_tinv(variant) ? 0 : i;
    }

    int param_count() const {
        return 16 * static_cast<int>(q_gens.size() + p_gens.size());
    }
};

/// Per-generator realized unitaries with their eigensystems.
struct RealizedRow {
    int n_units = 0;
    DeformationVariant variant = DeformationVariant::identity;
    std::vector<UnitaryFactorization> q_units;
    std::vector<UnitaryFactorization> p_units;
    bool tinv = false;

    const UnitaryFactorization* q_at(int i) const {
        if (q_units.empty()) return nullptr;
        return &q_units[tinv ? 0 : i];
    }

    const UnitaryFactorization* p_at(int i) const {
        if (p_units.empty() || i < 0 || i >= n_units - 1) return nullptr;
        return &p_units[tinv ? 0 : i];
    }

    bool all_identity() const {
        for (const auto& g : q_units) {
            if (!g.identity) return false;
        }
        for (const auto& g : p_units) {
            if (!g.identity) return false;
        }
        return true;
    }
};

inline RealizedRow realize(const RowDeformation& row) {
    RealizedRow r;
    r.n_units = row.n_units;
    r.variant = row.variant;
    r.tinv = variant_tinv(row.variant);
    r.q_units.reserve(row.q_gens.size());
    for (const auto& g : row.q_gens) r.q_units.push_back(factorize_unitary(g));
    r.p_units.reserve(row.p_gens.size());
    for (const auto& g : row.p_gens) r.p_units.push_back(factorize_unitary(g));
    return r;
}

// Applies the chain circuit to a register holding the 2N chain qubits at
// `offset`: first every P gate on (2i+1, 2i+2), then every Q gate on
// (2i, 2i+1).  With `adjoint` the daggered gates run in reverse order.
inline void apply_chain(CVec& state, const RealizedRow& row, int n_qubits, int offset, bool adjoint) {
    const int n = row.n_units;
    auto apply_one = [&](const UnitaryFactorization* g, int qubit_lo) {
        if (g == nullptr || g->identity) return;
        Mat4 m = g->u;
        if (adjoint) m = m.adjoint().eval();
        const int targets[2] = {offset + qubit_lo, offset + qubit_lo + 1};
        CMat gate = m;
        apply_gate(state, gate, targets, n_qubits);
    };
    if (!adjoint) {
        for (int i = 0; i + 1 < n; ++i) apply_one(row.p_at(i), 2 * i + 1);
        for (int i = 0; i < n; ++i) apply_one(row.q_at(i), 2 * i);
    } else {
        for (int i = n - 1; i >= 0; --i) apply_one(row.q_at(i), 2 * i);
        for (int i = n - 2; i >= 0; --i) apply_one(row.p_at(i), 2 * i + 1);
    }
}

// Same circuit on an arbitrary qubit mapping: activation i at act_qubits[i],
// weight i at weight_qubits[i].  Used by the shared-register simulations.
inline void apply_chain_mapped(CVec& state, const RealizedRow& row, int n_qubits,
                               std::span<const int> act_qubits, std::span<const int> weight_qubits,
                               bool adjoint) {
    const int n = row.n_units;
    auto apply_one = [&](const UnitaryFactorization* g, int qa, int qb) {
        if (g == nullptr || g->identity) return;
        Mat4 m = g->u;
        if (adjoint) m = m.adjoint().eval();
        const int targets[2] = {qa, qb};
        CMat gate = m;
        apply_gate(state, gate, targets, n_qubits);
    };
    if (!adjoint) {
        for (int i = 0; i + 1 < n; ++i) apply_one(row.p_at(i), weight_qubits[i], act_qubits[i + 1]);
        for (int i = 0; i < n; ++i) apply_one(row.q_at(i), act_qubits[i], weight_qubits[i]);
    } else {
        for (int i = n - 1; i >= 0; --i) apply_one(row.q_at(i), act_qubits[i], weight_qubits[i]);
        for (int i = n - 2; i >= 0; --i) apply_one(row.p_at(i), weight_qubits[i], act_qubits[i + 1]);
    }
}

}  // namespace qdbnn
