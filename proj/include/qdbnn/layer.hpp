#pragma once

#include <vector>

#include "qdbnn/contraction.hpp"
#include "qdbnn/parallel.hpp"
#include "qdbnn/tables.hpp"

namespace qdbnn {

inline constexpr double kSigmaFloor = 1e-4;      // on sigma, not sigma^2
inline constexpr double kInputGradFloor = 1e-9;  // probability clamp inside d/dp factors

struct LayerSpec {
    enum class Kind { dense, conv };
    Kind kind = Kind::dense;
    int n_in = 0, n_out = 0;               // dense
    int kernel_h = 0, kernel_w = 0;        // conv
    int stride = 1, c_in = 0, c_out = 0;   // conv
    DeformationVariant variant = DeformationVariant::identity;
    bool bias = true;

    static LayerSpec dense(int n_in, int n_out, DeformationVariant v, bool bias = true) {
        LayerSpec s;
        s.kind = Kind::dense;
        s.n_in = n_in;
        s.n_out = n_out;
        s.variant = v;
        s.bias = bias;
        return s;
    }

    static LayerSpec conv(int kernel, int stride, int c_in, int c_out, DeformationVariant v, bool bias = true) {
        LayerSpec s;
        s.kind = Kind::conv;
        s.kernel_h = kernel;
        s.kernel_w = kernel;
        s.stride = stride;
        s.c_in = c_in;
        s.c_out = c_out;
        s.variant = v;
        s.bias = bias;
        return s;
    }

    /// Chain length of one output unit's contraction.
    int chain_len() const {
        return kind == Kind::dense ? n_in : kernel_h * kernel_w * c_in;
    }

    int n_rows() const { return kind == Kind::dense ? n_out : c_out; }
};

/// Learnable state of one layer: weight logits (q = logistic(logit)), the
/// deformation generators per output row, and biases.
struct LayerParams {
    LayerSpec spec;
    Eigen::MatrixXd w_logits;            // n_rows x chain_len
    std::vector<RowDeformation> rows;    // size n_rows
    Eigen::VectorXd bias;                // n_rows (zeros when spec.bias is false)

    static LayerParams make(const LayerSpec& spec) {
        LayerParams p;
        p.spec = spec;
        p.w_logits = Eigen::MatrixXd::Zero(spec.n_rows(), spec.chain_len());
        p.rows.assign(spec.n_rows(), RowDeformation::make(spec.variant, spec.chain_len()));
        p.bias = Eigen::VectorXd::Zero(spec.n_rows());
        return p;
    }

    int gen_params_per_row() const { return rows.empty() ? 0 : rows[0].param_count(); }
};

struct LayerGrads {
    Eigen::MatrixXd d_logits;
    std::vector<Eigen::VectorXd> d_gens;  // per row: q generators then p generators, 16 each
    Eigen::VectorXd d_bias;

    static LayerGrads zero(const LayerParams& p) {
        LayerGrads g;
        g.d_logits = Eigen::MatrixXd::Zero(p.w_logits.rows(), p.w_logits.cols());
        g.d_gens.assign(p.rows.size(), Eigen::VectorXd::Zero(p.gen_params_per_row()));
        g.d_bias = Eigen::VectorXd::Zero(p.bias.size());
        return g;
    }
};

namespace detail {

/// Factorized-case row output; one fixed summation order so the
/// zero-deformation contraction path can reproduce it bit for bit.
inline double closed_form_row(std::span<const double> p, const double* q_row, double bias, int n,
                              double* mu_out = nullptr, double* sig2_out = nullptr) {
    double mu = 0.0, sig2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double m = p[i] * q_row[i];
        mu += m;
        sig2 += m - m * m;
    }
    if (mu_out) *mu_out = mu;
    if (sig2_out) *sig2_out = sig2;
    return clt_output_probability(mu, sig2, bias, n);
}

}  // namespace detail

/// Forward pass of one dense row (exact local contractions; rows whose
/// realized gates are all identity reduce to the factorized closed form).
inline double dense_forward_row(std::span<const double> p, const double* q_row, const RealizedRow& row,
                                double bias) {
    const int n = row.n_units;
    if (row.all_identity()) {
        return detail::closed_form_row(p, q_row, bias, n);
    }
    std::vector<double> q(q_row, q_row + n);
    const auto chain = chain_states(p, q);
    const RowMoments m = row_moments_reference(chain, row);
    return clt_output_probability(m.mu, m.sigma2, bias, n);
}

/// CLT forward pass of a dense layer.
inline void dense_forward(std::span<const double> p, const LayerParams& params, std::span<double> out) {
    QDBNN_REQUIRE(params.spec.kind == LayerSpec::Kind::dense, "dense_forward on a non-dense layer");
    const int n = params.spec.n_in;
    const int m = params.spec.n_out;
    QDBNN_REQUIRE(static_cast<int>(p.size()) == n && static_cast<int>(out.size()) == m,
                  "dense_forward shape mismatch");
    Eigen::MatrixXd q = params.w_logits.unaryExpr([](double x) { return logistic(x); });
    for (int j = 0; j < m; ++j) {
        const RealizedRow row = realize(params.rows[j]);
        std::vector<double> q_row(n);
        for (int i = 0; i < n; ++i) q_row[i] = q(j, i);
        out[j] = dense_forward_row(p, q_row.data(), row, params.bias[j]);
    }
}

struct ConvShape {
    int in_h = 0, in_w = 0, c_in = 0;
    int out_h = 0, out_w = 0, c_out = 0;
};

inline ConvShape conv_shape(const LayerSpec& spec, int in_h, int in_w) {
    QDBNN_REQUIRE(spec.kind == LayerSpec::Kind::conv, "conv_shape on a non-conv layer");
    ConvShape s;
    s.in_h = in_h;
    s.in_w = in_w;
    s.c_in = spec.c_in;
    s.out_h = (in_h - spec.kernel_h) / spec.stride + 1;
    s.out_w = (in_w - spec.kernel_w) / spec.stride + 1;
    s.c_out = spec.c_out;
    QDBNN_REQUIRE(s.out_h > 0 && s.out_w > 0,
                  "conv output is empty for input " << in_h << "x" << in_w << " kernel " << spec.kernel_h
                                                    << " stride " << spec.stride);
    return s;
}

/// Chain position of kernel element (kh, kw, c): row-major (kh, kw, c) order.
inline int patch_chain_index(const LayerSpec& spec, int kh, int kw, int c) {
    return (kh * spec.kernel_w + kw) * spec.c_in + c;
}

/// Valid-padding convolution: every output unit is a dense row over the patch
/// chain, with kernel distribution and gates shared across locations.
inline void conv_forward(std::span<const double> image, const LayerParams& params, int in_h, int in_w,
                         std::span<double> out) {
    const LayerSpec& spec = params.spec;
    const ConvShape cs = conv_shape(spec, in_h, in_w);
    QDBNN_REQUIRE(static_cast<int>(image.size()) == in_h * in_w * spec.c_in, "conv input size mismatch");
    QDBNN_REQUIRE(static_cast<int>(out.size()) == cs.out_h * cs.out_w * cs.c_out, "conv output size mismatch");
    const int chain = spec.chain_len();
    Eigen::MatrixXd q = params.w_logits.unaryExpr([](double x) { return logistic(x); });
    std::vector<RealizedRow> rows;
    rows.reserve(spec.c_out);
    for (int d = 0; d < spec.c_out; ++d) rows.push_back(realize(params.rows[d]));
    std::vector<double> patch(chain);
    for (int y = 0; y < cs.out_h; ++y) {
        for (int x = 0; x < cs.out_w; ++x) {
            for (int kh = 0; kh < spec.kernel_h; ++kh) {
                for (int kw = 0; kw < spec.kernel_w; ++kw) {
                    for (int c = 0; c < spec.c_in; ++c) {
                        patch[patch_chain_index(spec, kh, kw, c)] =
                            image[((y * spec.stride + kh) * in_w + (x * spec.stride + kw)) * spec.c_in + c];
                    }
                }
            }
            for (int d = 0; d < spec.c_out; ++d) {
                std::vector<double> q_row(chain);
                for (int i = 0; i < chain; ++i) q_row[i] = q(d, i);
                out[(y * cs.out_w + x) * cs.c_out + d] =
                    dense_forward_row(patch, q_row.data(), rows[d], params.bias[d]);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Batched engine: coefficient tables shared across a minibatch (and across
// conv patch locations); backward accumulates table cotangents per sample and
// runs the table adjoint once per step.
// ---------------------------------------------------------------------------

class LayerEngine {
  public:
    void build(const LayerParams& params, int n_threads = 1) {
        params_ = &params;
        const LayerSpec& spec = params.spec;
        chain_ = spec.chain_len();
        n_rows_ = spec.n_rows();
        identity_ = spec.variant == DeformationVariant::identity;
        q_ = params.w_logits.unaryExpr([](double x) { return logistic(x); });
        rows_.clear();
        rows_.reserve(n_rows_);
        for (int j = 0; j < n_rows_; ++j) rows_.push_back(realize(params.rows[j]));
        if (identity_) {
            has_p_ = false;
            return;
        }
        has_p_ = !params.rows[0].p_gens.empty();
        wvecs_.assign(n_rows_, std::vector<Vec2>(chain_));
        for (int j = 0; j < n_rows_; ++j) {
            for (int i = 0; i < chain_; ++i) {
                const double qv = q_(j, i);
                wvecs_[j][i] = Vec2(std::sqrt(1.0 - qv), std::sqrt(qv));
            }
        }
        mu_sup_.assign(n_rows_, {});
        mu_tab_.assign(n_rows_, {});
        ga_sup_.assign(n_rows_, {});
        ga_tab_.assign(n_rows_, {});
        for (int j = 0; j < n_rows_; ++j) {
            mu_sup_[j].reserve(chain_);
            for (int i = 0; i < chain_; ++i) mu_sup_[j].push_back(tables::mu_support(rows_[j], i));
            mu_tab_[j].resize(chain_);
            if (has_p_) {
                ga_sup_[j].reserve(chain_ - 1);
                for (int i = 0; i + 1 < chain_; ++i) ga_sup_[j].push_back(tables::gamma_support(rows_[j], i));
                ga_tab_[j].resize(chain_ - 1);
            }
        }
        const std::size_t total = std::size_t(n_rows_) * (chain_ + (has_p_ ? chain_ - 1 : 0));
        parallel_chunks(total, 64, n_threads, [&](std::size_t b, std::size_t e, std::size_t) {
            for (std::size_t k = b; k < e; ++k) {
                const int j = static_cast<int>(k / (chain_ + (has_p_ ? chain_ - 1 : 0)));
                const int r = static_cast<int>(k % (chain_ + (has_p_ ? chain_ - 1 : 0)));
                if (r < chain_) {
                    mu_tab_[j][r] = build_one(mu_sup_[j][r], j);
                } else {
                    ga_tab_[j][r - chain_] = build_one(ga_sup_[j][r - chain_], j);
                }
            }
        });
    }

    int chain_len() const { return chain_; }
    int n_rows() const { return n_rows_; }
    bool deformed() const { return !identity_; }
    bool has_pair_correlations() const { return has_p_; }
    const Eigen::MatrixXd& weight_probs() const { return q_; }
    const RealizedRow& realized_row(int j) const { return rows_[j]; }

    struct RowEval {
        double mu_tot = 0.0, sig2 = 0.0, z = 0.0, out = 0.0;
        std::vector<double> mu_i, gam;  // plain vectors so reuse never reallocates
    };

    /// Features of a chain of activation probabilities (chain_len x 3).
    void features_of(std::span<const double> p, double* feats) const {
        for (int i = 0; i < static_cast<int>(p.size()); ++i) {
            const auto f = tables::activation_features(p[i]);
            feats[3 * i] = f[0];
            feats[3 * i + 1] = f[1];
            feats[3 * i + 2] = f[2];
        }
    }

    void forward_row(int j, const double* feats, RowEval* ev) const {
        const double bias = params_->bias[j];
        if (identity_) {
            ev->mu_i.resize(chain_);
            double mu = 0.0, sig2 = 0.0;
            for (int i = 0; i < chain_; ++i) {
                const double m = feats[3 * i + 1] * q_(j, i);
                ev->mu_i[i] = m;
                mu += m;
                sig2 += m - m * m;
            }
            ev->mu_tot = mu;
            ev->sig2 = sig2;
        } else {
            ev->mu_i.resize(chain_);
            double mu_tot = 0.0;
            for (int i = 0; i < chain_; ++i) {
                ev->mu_i[i] = tables::eval_table(mu_tab_[j][i], mu_sup_[j][i], slot_feats(mu_sup_[j][i], feats));
                mu_tot += ev->mu_i[i];
            }
            ev->mu_tot = mu_tot;
            double sig2 = 0.0;
            if (has_p_) {
                ev->gam.resize(chain_ - 1);
                for (int i = 0; i + 1 < chain_; ++i) {
                    ev->gam[i] = tables::eval_table(ga_tab_[j][i], ga_sup_[j][i], slot_feats(ga_sup_[j][i], feats));
                    sig2 += 2.0 * (ev->gam[i] - ev->mu_i[i] * ev->mu_i[i + 1]);
                }
            }
            for (int i = 0; i < chain_; ++i) sig2 += ev->mu_i[i] - ev->mu_i[i] * ev->mu_i[i];
            ev->sig2 = sig2;
        }
        const double sigma = std::sqrt(std::max(0.0, ev->sig2));
        const double s = std::max(sigma, kSigmaFloor);
        ev->z = (2.0 * (ev->mu_tot + bias) - double(chain_)) / (2.0 * s);
        ev->out = std_normal_cdf(ev->z);
    }

    /// Per-sample cotangent accumulator (reduced deterministically by chunk).
    struct Accum {
        std::vector<std::vector<std::array<double, 27>>> g_mu, g_ga;  // [row][pos]
        Eigen::MatrixXd d_logits_direct;                              // identity path only
        Eigen::VectorXd d_bias;
        bool used = false;

        void init(const LayerEngine& e) {
            if (e.deformed()) {
                g_mu.assign(e.n_rows_, std::vector<std::array<double, 27>>(e.chain_, std::array<double, 27>{}));
                if (e.has_p_) {
                    g_ga.assign(e.n_rows_, std::vector<std::array<double, 27>>(e.chain_ - 1, std::array<double, 27>{}));
                }
            }
            d_logits_direct = Eigen::MatrixXd::Zero(e.n_rows_, e.chain_);
            d_bias = Eigen::VectorXd::Zero(e.n_rows_);
            used = true;
        }

        void add(const Accum& other) {
            if (!other.used) return;
            if (!used) {
                *this = other;
                return;
            }
            for (std::size_t j = 0; j < g_mu.size(); ++j) {
                for (std::size_t i = 0; i < g_mu[j].size(); ++i) {
                    for (int k = 0; k < 27; ++k) g_mu[j][i][k] += other.g_mu[j][i][k];
                }
            }
            for (std::size_t j = 0; j < g_ga.size(); ++j) {
                for (std::size_t i = 0; i < g_ga[j].size(); ++i) {
                    for (int k = 0; k < 27; ++k) g_ga[j][i][k] += other.g_ga[j][i][k];
                }
            }
            d_logits_direct += other.d_logits_direct;
            d_bias += other.d_bias;
        }
    };

    // Backpropagates one row evaluation.  Accumulates table cotangents (or
    // direct logit gradients on the factorized path) plus, when dfeats is not
    // null, d(loss)/d(features) for chaining into the previous layer.
    void backward_row(int j, const double* feats, const RowEval& ev, double upstream, Accum* acc,
                      double* dfeats) const {
        const double pdf = std_normal_pdf(ev.z);
        const double dL_dz = upstream * pdf;
        if (dL_dz == 0.0) return;
        const double sigma = std::sqrt(std::max(0.0, ev.sig2));
        const double s = std::max(sigma, kSigmaFloor);
        const double dL_dmu_tot = dL_dz * (1.0 / s);
        acc->d_bias[j] += dL_dmu_tot;
        double dL_dsig2 = 0.0;
        if (sigma > kSigmaFloor) {
            dL_dsig2 = dL_dz * -(2.0 * (ev.mu_tot + params_->bias[j]) - double(chain_)) / (4.0 * s * s * sigma);
        }
        if (identity_) {
            for (int i = 0; i < chain_; ++i) {
                const double m = ev.mu_i[i];
                const double dL_dm = dL_dmu_tot + dL_dsig2 * (1.0 - 2.0 * m);
                const double p = feats[3 * i + 1];
                const double qv = q_(j, i);
                acc->d_logits_direct(j, i) += dL_dm * p * qv * (1.0 - qv);
                if (dfeats) dfeats[3 * i + 1] += dL_dm * qv;
            }
            return;
        }
        Eigen::VectorXd dL_dmu(chain_);
        for (int i = 0; i < chain_; ++i) {
            double d = dL_dmu_tot + dL_dsig2 * (1.0 - 2.0 * ev.mu_i[i]);
            if (has_p_) {
                if (i > 0) d += dL_dsig2 * (-2.0 * ev.mu_i[i - 1]);
                if (i + 1 < chain_) d += dL_dsig2 * (-2.0 * ev.mu_i[i + 1]);
            }
            dL_dmu[i] = d;
        }
        std::array<double, 9> scratch{};
        for (int i = 0; i < chain_; ++i) {
            accumulate_table_grads(mu_sup_[j][i], mu_tab_[j][i], feats, dL_dmu[i], acc->g_mu[j][i].data(), dfeats,
                                   scratch.data());
        }
        if (has_p_) {
            const double dL_dgam = 2.0 * dL_dsig2;
            for (int i = 0; i + 1 < chain_; ++i) {
                accumulate_table_grads(ga_sup_[j][i], ga_tab_[j][i], feats, dL_dgam, acc->g_ga[j][i].data(), dfeats,
                                       scratch.data());
            }
        }
    }

    /// Runs the table adjoints once for the accumulated cotangents.
    void finalize(const Accum& acc, LayerGrads* grads, int n_threads = 1) const {
        grads->d_bias += acc.d_bias;
        if (identity_) {
            grads->d_logits += acc.d_logits_direct;
            return;
        }
        parallel_chunks(n_rows_, 1, n_threads, [&](std::size_t b, std::size_t e, std::size_t) {
            for (std::size_t j = b; j < e; ++j) finalize_row(static_cast<int>(j), acc, grads);
        });
    }

  private:
    tables::Table build_one(const tables::Support& s, int j) const {
        std::vector<Vec2> ws(s.weight_units.size());
        for (std::size_t k = 0; k < s.weight_units.size(); ++k) ws[k] = wvecs_[j][s.weight_units[k]];
        return tables::build_table(s, ws);
    }

    static std::array<const double*, 3> slot_feats(const tables::Support& s, const double* feats) {
        std::array<const double*, 3> f{nullptr, nullptr, nullptr};
        for (std::size_t a = 0; a < s.act_units.size(); ++a) f[a] = feats + 3 * s.act_units[a];
        return f;
    }

    void accumulate_table_grads(const tables::Support& s, const tables::Table& tab, const double* feats,
                                double upstream, double* g_table, double* dfeats, double* scratch) const {
        if (upstream == 0.0) return;
        const auto f = slot_feats(s, feats);
        const int n_act = static_cast<int>(s.act_units.size());
        tables::accumulate_table_cotangent(s, f, upstream, g_table);
        if (dfeats) {
            std::array<double*, 3> fg{scratch, scratch + 3, scratch + 6};
            for (int k = 0; k < 9; ++k) scratch[k] = 0.0;
            tables::eval_table_feature_grad(tab, s, f, upstream, fg);
            for (int a = 0; a < n_act; ++a) {
                for (int c = 0; c < 3; ++c) dfeats[3 * s.act_units[a] + c] += fg[a][c];
            }
        }
    }

    void finalize_row(int j, const Accum& acc, LayerGrads* grads) const {
        const RowDeformation& def = params_->rows[j];
        const int n_q = static_cast<int>(def.q_gens.size());
        const int n_p = static_cast<int>(def.p_gens.size());
        std::vector<Mat4> env_q(n_q, Mat4::Zero()), env_p(n_p, Mat4::Zero());
        std::vector<Vec2> wgrad(chain_, Vec2::Zero());
        auto run = [&](const tables::Support& s, const std::array<double, 27>& g) {
            bool any = false;
            for (int k = 0; k < s.table_size; ++k) {
                if (g[k] != 0.0) {
                    any = true;
                    break;
                }
            }
            if (!any) return;
            std::vector<Vec2> ws(s.weight_units.size());
            for (std::size_t k = 0; k < s.weight_units.size(); ++k) ws[k] = wvecs_[j][s.weight_units[k]];
            std::vector<Vec2> wg(s.weight_units.size(), Vec2::Zero());
            tables::table_backward(s, ws, g, env_q, env_p, wg);
            for (std::size_t k = 0; k < s.weight_units.size(); ++k) wgrad[s.weight_units[k]] += wg[k];
        };
        for (int i = 0; i < chain_; ++i) run(mu_sup_[j][i], acc.g_mu[j][i]);
        if (has_p_) {
            for (int i = 0; i + 1 < chain_; ++i) run(ga_sup_[j][i], acc.g_ga[j][i]);
        }
        // weight-state gradient -> logit gradient; d w / d logit has no
        // singularity at the interval ends.
        for (int i = 0; i < chain_; ++i) {
            const double qv = q_(j, i);
            const double d0 = -qv * std::sqrt(1.0 - qv) / 2.0;
            const double d1 = (1.0 - qv) * std::sqrt(qv) / 2.0;
            grads->d_logits(j, i) += wgrad[i][0] * d0 + wgrad[i][1] * d1;
        }
        Eigen::VectorXd& dg = grads->d_gens[j];
        for (int k = 0; k < n_q; ++k) {
            dg.segment(16 * k, 16) += rows_[j].q_units[k].param_gradient(env_q[k], /*applied_adjoint=*/true);
        }
        for (int k = 0; k < n_p; ++k) {
            dg.segment(16 * (n_q + k), 16) +=
                rows_[j].p_units[k].param_gradient(env_p[k], /*applied_adjoint=*/true);
        }
    }

    const LayerParams* params_ = nullptr;
    int chain_ = 0, n_rows_ = 0;
    bool identity_ = true, has_p_ = false;
    Eigen::MatrixXd q_;
    std::vector<RealizedRow> rows_;
    std::vector<std::vector<Vec2>> wvecs_;
    std::vector<std::vector<tables::Support>> mu_sup_, ga_sup_;
    std::vector<std::vector<tables::Table>> mu_tab_, ga_tab_;
};

/// d(features)/d(probability), with the sqrt slope clamped away from the
/// interval ends so saturated activations keep finite gradients.
inline void feature_prob_grad(double p, double dfeat1, double dfeat2, double* dp) {
    const double pc = std::min(std::max(p, kInputGradFloor), 1.0 - kInputGradFloor);
    const double s = std::sqrt(pc * (1.0 - pc));
    *dp += dfeat1 + dfeat2 * (1.0 - 2.0 * pc) / (2.0 * s);
}

struct DenseBackwardResult {
    LayerGrads grads;
    Eigen::VectorXd d_input;
};

/// Reverse-mode gradients of one dense-layer evaluation (single sample).
inline DenseBackwardResult layer_backward(std::span<const double> p, const LayerParams& params,
                                          std::span<const double> upstream) {
    QDBNN_REQUIRE(params.spec.kind == LayerSpec::Kind::dense, "layer_backward expects a dense layer");
    LayerEngine engine;
    engine.build(params);
    const int n = engine.chain_len();
    const int m = engine.n_rows();
    QDBNN_REQUIRE(static_cast<int>(upstream.size()) == m, "upstream gradient size mismatch");
    std::vector<double> feats(3 * n);
    engine.features_of(p, feats.data());
    LayerEngine::Accum acc;
    acc.init(engine);
    std::vector<double> dfeats(3 * n, 0.0);
    for (int j = 0; j < m; ++j) {
        LayerEngine::RowEval ev;
        engine.forward_row(j, feats.data(), &ev);
        engine.backward_row(j, feats.data(), ev, upstream[j], &acc, dfeats.data());
    }
    DenseBackwardResult res;
    res.grads = LayerGrads::zero(params);
    engine.finalize(acc, &res.grads);
    res.d_input = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        double dp = 0.0;
        feature_prob_grad(p[i], dfeats[3 * i + 1], dfeats[3 * i + 2], &dp);
        res.d_input[i] = dp;
    }
    return res;
}

}  // namespace qdbnn
