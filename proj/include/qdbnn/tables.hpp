#pragma once

#include <array>
#include <vector>

#include "qdbnn/deformation.hpp"
#include "qdbnn/gates.hpp"

// Batched evaluation of the local moment contractions.  Every contraction is
// multilinear in the one-qubit density matrices of its support; a weight
// qubit contributes the fixed pure state built from q_ji, an activation qubit
// contributes rho(p) = F0 + p*F1 + s*F2 with s = sqrt(p(1-p)).  Folding the
// gates and weight states into a small coefficient table per (row, position)
// makes the per-sample cost a handful of multiplies, with tables shared
// across a minibatch (and across conv patch locations).
//
// Local registers never exceed 6 qubits, so all scratch lives on the stack.

namespace qdbnn::tables {

inline const std::array<Eigen::Matrix2d, 3>& feature_matrices() {
    static const std::array<Eigen::Matrix2d, 3> f = [] {
        std::array<Eigen::Matrix2d, 3> m;
        m[0] << 1.0, 0.0, 0.0, 0.0;   // constant part
        m[1] << -1.0, 0.0, 0.0, 1.0;  // linear-in-p part
        m[2] << 0.0, 1.0, 1.0, 0.0;   // sqrt(p(1-p)) part
        return m;
    }();
    return f;
}

/// Features of an activation probability: rho(p) = f[0]*F0 + f[1]*F1 + f[2]*F2.
inline std::array<double, 3> activation_features(double p) {
    return {1.0, p, std::sqrt(std::max(0.0, p * (1.0 - p)))};
}

struct GateStep {
    const UnitaryFactorization* u = nullptr;
    int local_pos = 0;   // lower local qubit of the pair
    bool is_q = false;   // Q family (else P)
    int gen_index = -1;  // generator slot in the row, -1 for none
};

/// Static description of one local contraction (fixed per layer shape).
struct Support {
    int lo = 0, hi = 0, m = 0;      // chain qubit range and local register size
    std::vector<int> act_units;      // chain units of activation slots
    std::vector<int> act_pos;        // their local qubit positions
    std::vector<int> weight_units;   // chain units of weight slots
    std::vector<int> weight_pos;
    std::vector<GateStep> gates;     // forward circuit order
    std::size_t proj_mask = 0;       // local mask of qubits that must read 1
    int table_size = 0;              // 3^{#act slots}
};

namespace detail {

constexpr int kMaxLocalDim = 64;   // 6 qubits
constexpr int kMaxActDim = 8;      // 3 activation slots
constexpr int kMaxSteps = 6;       // up to 5 gates + initial state

using LocalVec = std::array<cplx, kMaxLocalDim>;
using ActVec = std::array<cplx, kMaxActDim>;

inline void classify_slots(Support& s) {
    s.m = s.hi - s.lo + 1;
    for (int c = s.lo; c <= s.hi; ++c) {
        const int pos = c - s.lo;
        if (c % 2 == 0) {
            s.act_units.push_back(c / 2);
            s.act_pos.push_back(pos);
        } else {
            s.weight_units.push_back((c - 1) / 2);
            s.weight_pos.push_back(pos);
        }
    }
    s.table_size = 1;
    for (std::size_t k = 0; k < s.act_units.size(); ++k) s.table_size *= 3;
}

inline std::size_t local_bit(const Support& s, int chain_qubit) {
    return std::size_t(1) << (s.m - 1 - (chain_qubit - s.lo));
}

/// Contract every weight slot of v with its weight state; returns the
/// activation-slot residual (act slot 0 is the most significant index bit).
inline void weight_contract(const Support& s, const cplx* v, std::span<const Vec2> weight_states, ActVec& out) {
    const int n_act = static_cast<int>(s.act_pos.size());
    out.fill(cplx(0.0, 0.0));
    const std::size_t dim = std::size_t(1) << s.m;
    for (std::size_t idx = 0; idx < dim; ++idx) {
        double wprod = 1.0;
        for (std::size_t k = 0; k < s.weight_pos.size(); ++k) {
            const int bit = static_cast<int>((idx >> (s.m - 1 - s.weight_pos[k])) & 1u);
            wprod *= weight_states[k][bit];
        }
        if (wprod == 0.0) continue;
        std::size_t act_idx = 0;
        for (int a = 0; a < n_act; ++a) {
            act_idx = (act_idx << 1) | ((idx >> (s.m - 1 - s.act_pos[a])) & 1u);
        }
        out[act_idx] += wprod * v[idx];
    }
}

inline void apply_feature(cplx* vec, int n_act, int slot, const Eigen::Matrix2d& f) {
    const std::size_t stride = std::size_t(1) << (n_act - 1 - slot);
    const std::size_t dim = std::size_t(1) << n_act;
    for (std::size_t base = 0; base < dim; ++base) {
        if (base & stride) continue;
        const cplx a = vec[base], b = vec[base | stride];
        vec[base] = f(0, 0) * a + f(0, 1) * b;
        vec[base | stride] = f(1, 0) * a + f(1, 1) * b;
    }
}

template <typename Fn>
inline void for_each_multi_index(int rank, Fn&& fn) {
    std::array<int, 3> alpha{0, 0, 0};
    const int total = rank == 0 ? 1 : (rank == 1 ? 3 : (rank == 2 ? 9 : 27));
    for (int flat = 0; flat < total; ++flat) {
        int rem = flat;
        for (int s = rank - 1; s >= 0; --s) {
            alpha[s] = rem % 3;
            rem /= 3;
        }
        fn(flat, alpha);
    }
}

/// v_r = (adjoint circuit) e_r with every intermediate state recorded.
/// steps[k] holds the state after k reversed, daggered gates.
inline int back_states(const Support& s, std::size_t e, LocalVec* steps) {
    const std::size_t dim = std::size_t(1) << s.m;
    steps[0].fill(cplx(0.0, 0.0));
    steps[0][e] = 1.0;
    int k = 0;
    for (std::size_t g = s.gates.size(); g-- > 0; ++k) {
        steps[k + 1] = steps[k];
        const Mat4 u = s.gates[g].u->u.adjoint();
        apply_pair_gate(steps[k + 1].data(), s.m, s.gates[g].local_pos, u);
    }
    (void)dim;
    return k;  // number of gate applications
}

}  // namespace detail

struct Table {
    std::array<double, 27> t{};  // first table_size entries used
};

/// Folds gates and weight states into the coefficient table of one support.
inline Table build_table(const Support& s, std::span<const Vec2> weight_states) {
    Table tab;
    const int n_act = static_cast<int>(s.act_pos.size());
    const std::size_t act_dim = std::size_t(1) << n_act;
    const auto& fmats = feature_matrices();
    const std::size_t dim = std::size_t(1) << s.m;
    detail::LocalVec steps[detail::kMaxSteps];
    detail::ActVec vt, w;
    for (std::size_t e = 0; e < dim; ++e) {
        if ((e & s.proj_mask) != s.proj_mask) continue;
        const int n_steps = detail::back_states(s, e, steps);
        detail::weight_contract(s, steps[n_steps].data(), weight_states, vt);
        detail::for_each_multi_index(n_act, [&](int flat, const std::array<int, 3>& alpha) {
            w = vt;
            for (int a = 0; a < n_act; ++a) detail::apply_feature(w.data(), n_act, a, fmats[alpha[a]]);
            double acc = 0.0;
            for (std::size_t i = 0; i < act_dim; ++i) acc += (std::conj(vt[i]) * w[i]).real();
            tab.t[flat] += acc;
        });
    }
    return tab;
}

/// Table value at the given per-slot activation features.
inline double eval_table(const Table& tab, const Support& s, const std::array<const double*, 3>& feats) {
    switch (s.act_pos.size()) {
        case 1: {
            const double* f = feats[0];
            return tab.t[0] * f[0] + tab.t[1] * f[1] + tab.t[2] * f[2];
        }
        case 2: {
            const double* fa = feats[0];
            const double* fb = feats[1];
            double acc = 0.0;
            for (int a = 0; a < 3; ++a) {
                acc += fa[a] * (tab.t[3 * a] * fb[0] + tab.t[3 * a + 1] * fb[1] + tab.t[3 * a + 2] * fb[2]);
            }
            return acc;
        }
        case 3: {
            const double* fa = feats[0];
            const double* fb = feats[1];
            const double* fc = feats[2];
            double acc = 0.0;
            for (int a = 0; a < 3; ++a) {
                double mid = 0.0;
                for (int b = 0; b < 3; ++b) {
                    const int base = 9 * a + 3 * b;
                    mid += fb[b] * (tab.t[base] * fc[0] + tab.t[base + 1] * fc[1] + tab.t[base + 2] * fc[2]);
                }
                acc += fa[a] * mid;
            }
            return acc;
        }
        default:
            return tab.t[0];
    }
}

/// Accumulates d(value)/d(features) scaled by `upstream` into feat_grads.
inline void eval_table_feature_grad(const Table& tab, const Support& s, const std::array<const double*, 3>& feats,
                                    double upstream, const std::array<double*, 3>& feat_grads) {
    switch (s.act_pos.size()) {
        case 1: {
            for (int a = 0; a < 3; ++a) feat_grads[0][a] += upstream * tab.t[a];
            return;
        }
        case 2: {
            const double* fa = feats[0];
            const double* fb = feats[1];
            for (int a = 0; a < 3; ++a) {
                const double* row = tab.t.data() + 3 * a;
                feat_grads[0][a] += upstream * (row[0] * fb[0] + row[1] * fb[1] + row[2] * fb[2]);
                const double ua = upstream * fa[a];
                feat_grads[1][0] += ua * row[0];
                feat_grads[1][1] += ua * row[1];
                feat_grads[1][2] += ua * row[2];
            }
            return;
        }
        case 3: {
            const double* fa = feats[0];
            const double* fb = feats[1];
            const double* fc = feats[2];
            for (int a = 0; a < 3; ++a) {
                double ga = 0.0;
                for (int b = 0; b < 3; ++b) {
                    const double* row = tab.t.data() + 9 * a + 3 * b;
                    const double rc = row[0] * fc[0] + row[1] * fc[1] + row[2] * fc[2];
                    ga += fb[b] * rc;
                    const double uab = upstream * fa[a] * fb[b];
                    feat_grads[2][0] += uab * row[0];
                    feat_grads[2][1] += uab * row[1];
                    feat_grads[2][2] += uab * row[2];
                    feat_grads[1][b] += upstream * fa[a] * rc;
                }
                feat_grads[0][a] += upstream * ga;
            }
            return;
        }
        default:
            return;
    }
}

/// Accumulates upstream * (feature outer product) into a table cotangent.
inline void accumulate_table_cotangent(const Support& s, const std::array<const double*, 3>& feats,
                                       double upstream, double* g_table) {
    switch (s.act_pos.size()) {
        case 1: {
            for (int a = 0; a < 3; ++a) g_table[a] += upstream * feats[0][a];
            return;
        }
        case 2: {
            const double* fa = feats[0];
            const double* fb = feats[1];
            for (int a = 0; a < 3; ++a) {
                const double ua = upstream * fa[a];
                g_table[3 * a] += ua * fb[0];
                g_table[3 * a + 1] += ua * fb[1];
                g_table[3 * a + 2] += ua * fb[2];
            }
            return;
        }
        case 3: {
            const double* fa = feats[0];
            const double* fb = feats[1];
            const double* fc = feats[2];
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    const double uab = upstream * fa[a] * fb[b];
                    double* slot = g_table + 9 * a + 3 * b;
                    slot[0] += uab * fc[0];
                    slot[1] += uab * fc[1];
                    slot[2] += uab * fc[2];
                }
            }
            return;
        }
        default:
            g_table[0] += upstream;
            return;
    }
}

/// Adjoint of build_table: distributes dL/dT into gate environments (for the
/// generator gradients) and weight-state gradients.
inline void table_backward(const Support& s, std::span<const Vec2> weight_states,
                           const std::array<double, 27>& g_table, std::span<Mat4> env_q, std::span<Mat4> env_p,
                           std::span<Vec2> weight_grads) {
    const int n_act = static_cast<int>(s.act_pos.size());
    const std::size_t act_dim = std::size_t(1) << n_act;
    const auto& fmats = feature_matrices();
    const std::size_t dim = std::size_t(1) << s.m;
    detail::LocalVec steps[detail::kMaxSteps];
    detail::ActVec vt, w, lam_vt;
    detail::LocalVec lam;
    for (std::size_t e = 0; e < dim; ++e) {
        if ((e & s.proj_mask) != s.proj_mask) continue;
        const int n_steps = detail::back_states(s, e, steps);
        const cplx* v = steps[n_steps].data();
        detail::weight_contract(s, v, weight_states, vt);
        // lambda_vt = sum_alpha G[alpha] (F tensor) vt
        lam_vt.fill(cplx(0.0, 0.0));
        detail::for_each_multi_index(n_act, [&](int flat, const std::array<int, 3>& alpha) {
            if (g_table[flat] == 0.0) return;
            w = vt;
            for (int a = 0; a < n_act; ++a) detail::apply_feature(w.data(), n_act, a, fmats[alpha[a]]);
            for (std::size_t i = 0; i < act_dim; ++i) lam_vt[i] += g_table[flat] * w[i];
        });
        // Weight-state gradients: partial contraction leaving one slot open.
        for (std::size_t k = 0; k < s.weight_pos.size(); ++k) {
            Eigen::Vector2d g = Eigen::Vector2d::Zero();
            for (std::size_t idx = 0; idx < dim; ++idx) {
                double wprod = 1.0;
                for (std::size_t j = 0; j < s.weight_pos.size(); ++j) {
                    if (j == k) continue;
                    const int bit = static_cast<int>((idx >> (s.m - 1 - s.weight_pos[j])) & 1u);
                    wprod *= weight_states[j][bit];
                }
                if (wprod == 0.0) continue;
                std::size_t act_idx = 0;
                for (int a = 0; a < n_act; ++a) {
                    act_idx = (act_idx << 1) | ((idx >> (s.m - 1 - s.act_pos[a])) & 1u);
                }
                const int kbit = static_cast<int>((idx >> (s.m - 1 - s.weight_pos[k])) & 1u);
                g[kbit] += 2.0 * (std::conj(lam_vt[act_idx]) * wprod * v[idx]).real();
            }
            weight_grads[k] += g;
        }
        // lambda_v: expand lambda_vt over the weight slots.
        lam.fill(cplx(0.0, 0.0));
        for (std::size_t idx = 0; idx < dim; ++idx) {
            double wprod = 1.0;
            for (std::size_t j = 0; j < s.weight_pos.size(); ++j) {
                const int bit = static_cast<int>((idx >> (s.m - 1 - s.weight_pos[j])) & 1u);
                wprod *= weight_states[j][bit];
            }
            if (wprod == 0.0) continue;
            std::size_t act_idx = 0;
            for (int a = 0; a < n_act; ++a) {
                act_idx = (act_idx << 1) | ((idx >> (s.m - 1 - s.act_pos[a])) & 1u);
            }
            lam[idx] = wprod * lam_vt[act_idx];
        }
        // Walk the adjoint circuit backwards; steps[g] holds the state before
        // applying the (reversed, daggered) gate number g.
        for (std::size_t back_step = s.gates.size(); back_step-- > 0;) {
            const GateStep& gs = s.gates[s.gates.size() - 1 - back_step];
            const cplx* x_before = steps[back_step].data();
            // env[a,b] += sum conj(lam_after[..a..]) x_before[..b..] on the pair.
            Mat4 env = Mat4::Zero();
            const std::size_t right = std::size_t(1) << (s.m - 2 - gs.local_pos);
            for (std::size_t hi2 = 0; hi2 < dim; hi2 += 4 * right) {
                for (std::size_t lo2 = 0; lo2 < right; ++lo2) {
                    const std::size_t base = hi2 + lo2;
                    for (int a = 0; a < 4; ++a) {
                        const cplx la = std::conj(lam[base + a * right]);
                        if (la == cplx(0.0, 0.0)) continue;
                        for (int b = 0; b < 4; ++b) {
                            env(a, b) += la * x_before[base + b * right];
                        }
                    }
                }
            }
            if (gs.is_q) {
                env_q[gs.gen_index] += env;
            } else {
                env_p[gs.gen_index] += env;
            }
            // propagate: forward map was Emb(U^dagger), so the adjoint is Emb(U)
            apply_pair_gate(lam.data(), s.m, gs.local_pos, gs.u->u);
        }
    }
}

/// Support of <K_i> (3 or 4 chain qubits; shrinks when bridge gates are absent).
inline Support mu_support(const RealizedRow& row, int i) {
    const int n = row.n_units;
    Support s;
    const bool left_bridge = i >= 1 && row.p_at(i - 1) != nullptr;
    const bool right_bridge = i <= n - 2 && row.p_at(i) != nullptr;
    s.lo = left_bridge ? 2 * i - 1 : 2 * i;
    s.hi = right_bridge ? 2 * i + 2 : 2 * i + 1;
    detail::classify_slots(s);
    if (left_bridge) s.gates.push_back({row.p_at(i - 1), 2 * i - 1 - s.lo, false, row.tinv ? 0 : i - 1});
    if (right_bridge) s.gates.push_back({row.p_at(i), 2 * i + 1 - s.lo, false, row.tinv ? 0 : i});
    if (row.q_at(i)) s.gates.push_back({row.q_at(i), 2 * i - s.lo, true, row.tinv ? 0 : i});
    s.proj_mask = detail::local_bit(s, 2 * i) | detail::local_bit(s, 2 * i + 1);
    return s;
}

/// Support of <K_i K_{i+1}> (4, 5 or 6 chain qubits).
inline Support gamma_support(const RealizedRow& row, int i) {
    const int n = row.n_units;
    Support s;
    const bool left_bridge = i >= 1 && row.p_at(i - 1) != nullptr;
    const bool right_bridge = i <= n - 3 && row.p_at(i + 1) != nullptr;
    s.lo = left_bridge ? 2 * i - 1 : 2 * i;
    s.hi = right_bridge ? 2 * i + 4 : 2 * i + 3;
    detail::classify_slots(s);
    if (left_bridge) s.gates.push_back({row.p_at(i - 1), 2 * i - 1 - s.lo, false, row.tinv ? 0 : i - 1});
    if (row.p_at(i)) s.gates.push_back({row.p_at(i), 2 * i + 1 - s.lo, false, row.tinv ? 0 : i});
    if (right_bridge) s.gates.push_back({row.p_at(i + 1), 2 * i + 3 - s.lo, false, row.tinv ? 0 : i + 1});
    if (row.q_at(i)) s.gates.push_back({row.q_at(i), 2 * i - s.lo, true, row.tinv ? 0 : i});
    if (row.q_at(i + 1)) s.gates.push_back({row.q_at(i + 1), 2 * i + 2 - s.lo, true, row.tinv ? 0 : i + 1});
    s.proj_mask = detail::local_bit(s, 2 * i) | detail::local_bit(s, 2 * i + 1) | detail::local_bit(s, 2 * i + 2) |
                  detail::local_bit(s, 2 * i + 3);
    return s;
}

}  // namespace qdbnn::tables
