#pragma once

#include <string>
#include <vector>

#include "qdbnn/layer.hpp"

namespace qdbnn {

inline constexpr double kHiddenClamp = 1e-9;       // hidden activation clamp
inline constexpr double kProbFloor = 1e-12;        // floor inside log / normalizer
inline constexpr double kGeneratorInitScale = 1e-4;

struct ModelSpec {
    int input_h = 0, input_w = 0, input_c = 1;
    int n_classes = 0;
    std::vector<LayerSpec> layers;

    int input_size() const { return input_h * input_w * input_c; }
};

struct TensorShape {
    int h = 1, w = 1, c = 1;
    int size() const { return h * w * c; }
};

/// Shapes flowing through the layer stack; dense layers consume the flattened
/// (h, w, c) block row-major.
inline std::vector<TensorShape> model_shapes(const ModelSpec& spec) {
    std::vector<TensorShape> shapes;
    TensorShape cur{spec.input_h, spec.input_w, spec.input_c};
    shapes.push_back(cur);
    for (const auto& layer : spec.layers) {
        if (layer.kind == LayerSpec::Kind::dense) {
            QDBNN_REQUIRE(layer.n_in == cur.size(),
                          "dense layer expects " << layer.n_in << " inputs, previous shape gives " << cur.size());
            cur = TensorShape{1, 1, layer.n_out};
        } else {
            QDBNN_REQUIRE(layer.c_in == cur.c, "conv layer expects " << layer.c_in << " channels, got " << cur.c);
            const ConvShape cs = conv_shape(layer, cur.h, cur.w);
            cur = TensorShape{cs.out_h, cs.out_w, cs.c_out};
        }
        shapes.push_back(cur);
    }
    QDBNN_REQUIRE(shapes.back().size() == spec.n_classes,
                  "final layer produces " << shapes.back().size() << " units, expected " << spec.n_classes
                                          << " classes");
    return shapes;
}

struct TrainState {
    ModelSpec spec;
    std::vector<LayerParams> layers;
    Eigen::VectorXd adam_m, adam_v;
    long step = 0;
    std::uint64_t seed = 0;

    int n_params() const {
        int n = 0;
        for (const auto& l : layers) {
            n += static_cast<int>(l.w_logits.size());
            for (const auto& r : l.rows) n += r.param_count();
            n += static_cast<int>(l.bias.size());
        }
        return n;
    }
};

// Flat parameter order (also the checkpoint order): per layer, weight logits
// row-major, then per row all Q generators then all P generators (16 numbers
// each), then biases.
inline void gather_params(const TrainState& s, Eigen::VectorXd* flat) {
    flat->resize(s.n_params());
    int off = 0;
    for (const auto& l : s.layers) {
        for (Eigen::Index j = 0; j < l.w_logits.rows(); ++j) {
            for (Eigen::Index i = 0; i < l.w_logits.cols(); ++i) (*flat)[off++] = l.w_logits(j, i);
        }
        for (const auto& r : l.rows) {
            for (const auto& g : r.q_gens) {
                flat->segment(off, 16) = g.params;
                off += 16;
            }
            for (const auto& g : r.p_gens) {
                flat->segment(off, 16) = g.params;
                off += 16;
            }
        }
        for (Eigen::Index j = 0; j < l.bias.size(); ++j) (*flat)[off++] = l.bias[j];
    }
}

inline void scatter_params(const Eigen::VectorXd& flat, TrainState* s) {
    int off = 0;
    for (auto& l : s->layers) {
        for (Eigen::Index j = 0; j < l.w_logits.rows(); ++j) {
            for (Eigen::Index i = 0; i < l.w_logits.cols(); ++i) l.w_logits(j, i) = flat[off++];
        }
        for (auto& r : l.rows) {
            for (auto& g : r.q_gens) {
                g.params = flat.segment(off, 16);
                off += 16;
            }
            for (auto& g : r.p_gens) {
                g.params = flat.segment(off, 16);
                off += 16;
            }
        }
        for (Eigen::Index j = 0; j < l.bias.size(); ++j) l.bias[j] = flat[off++];
    }
}

inline void gather_grads(const TrainState& s, const std::vector<LayerGrads>& grads, Eigen::VectorXd* flat) {
    flat->resize(s.n_params());
    int off = 0;
    for (std::size_t li = 0; li < s.layers.size(); ++li) {
        const auto& l = s.layers[li];
        const auto& g = grads[li];
        for (Eigen::Index j = 0; j < l.w_logits.rows(); ++j) {
            for (Eigen::Index i = 0; i < l.w_logits.cols(); ++i) (*flat)[off++] = g.d_logits(j, i);
        }
        for (std::size_t r = 0; r < l.rows.size(); ++r) {
            const int pc = l.rows[r].param_count();
            if (pc > 0) flat->segment(off, pc) = g.d_gens[r];
            off += pc;
        }
        for (Eigen::Index j = 0; j < l.bias.size(); ++j) (*flat)[off++] = g.d_bias[j];
    }
}

/// Fresh state: weight logits from a uniform q in [0.25, 0.75] draw,
/// generators near zero so training starts next to the undeformed model,
/// biases zero.
inline TrainState init_train_state(const ModelSpec& spec, std::uint64_t seed) {
    model_shapes(spec);  // validates composition
    TrainState s;
    s.spec = spec;
    s.seed = seed;
    Rng rng(seed);
    Rng logit_rng = rng.fork(1);
    Rng gen_rng = rng.fork(2);
    for (const auto& lspec : spec.layers) {
        LayerParams p = LayerParams::make(lspec);
        for (Eigen::Index j = 0; j < p.w_logits.rows(); ++j) {
            for (Eigen::Index i = 0; i < p.w_logits.cols(); ++i) {
                p.w_logits(j, i) = logit(logit_rng.uniform(0.25, 0.75));
            }
        }
        for (auto& r : p.rows) {
            for (auto& g : r.q_gens) g = random_generator(4, kGeneratorInitScale, gen_rng);
            for (auto& g : r.p_gens) g = random_generator(4, kGeneratorInitScale, gen_rng);
        }
        s.layers.push_back(std::move(p));
    }
    s.adam_m = Eigen::VectorXd::Zero(s.n_params());
    s.adam_v = Eigen::VectorXd::Zero(s.n_params());
    return s;
}

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

struct SampleTrace {
    // acts[l] = input activations of layer l; acts[L] = final layer outputs.
    std::vector<std::vector<double>> acts;
    std::vector<std::vector<double>> feats;  // per layer: features of acts[l]
    // evals[l][location * n_rows + j]
    std::vector<std::vector<LayerEngine::RowEval>> evals;
    std::vector<double> patch_scratch;
    double normalizer = 0.0;
    bool degenerate = false;
};

class ModelRunner {
  public:
    void build(const TrainState& state, int n_threads = 1) {
        state_ = &state;
        shapes_ = model_shapes(state.spec);
        engines_.resize(state.layers.size());
        for (std::size_t l = 0; l < state.layers.size(); ++l) {
            engines_[l].build(state.layers[l], n_threads);
        }
    }

    const TrainState& state() const { return *state_; }
    const std::vector<TensorShape>& shapes() const { return shapes_; }
    LayerEngine& engine(std::size_t l) { return engines_[l]; }

    // Forward pass; returns normalized class probabilities.  The trace's
    // buffers are reused across calls, so evaluating a batch through one
    // trace object performs no per-sample allocation; passing nullptr uses a
    // thread-local scratch trace.
    Eigen::VectorXd forward_sample(std::span<const double> input, SampleTrace* trace) const {
        thread_local SampleTrace scratch;
        SampleTrace& t = trace ? *trace : scratch;
        const std::size_t n_layers = state_->layers.size();
        t.acts.resize(n_layers + 1);
        t.feats.resize(n_layers);
        t.evals.resize(n_layers);
        t.degenerate = false;
        t.acts[0].assign(input.begin(), input.end());
        for (std::size_t l = 0; l < n_layers; ++l) {
            const LayerSpec& spec = state_->layers[l].spec;
            const std::vector<double>& cur = t.acts[l];
            std::vector<double>& next = t.acts[l + 1];
            std::vector<double>& feats = t.feats[l];
            feats.resize(3 * cur.size());
            engines_[l].features_of(cur, feats.data());
            if (spec.kind == LayerSpec::Kind::dense) {
                next.resize(spec.n_out);
                t.evals[l].resize(spec.n_out);
                for (int j = 0; j < spec.n_out; ++j) {
                    engines_[l].forward_row(j, feats.data(), &t.evals[l][j]);
                    next[j] = t.evals[l][j].out;
                }
            } else {
                const ConvShape cs = conv_shape(spec, shapes_[l].h, shapes_[l].w);
                next.resize(std::size_t(cs.out_h) * cs.out_w * cs.c_out);
                t.evals[l].resize(next.size());
                t.patch_scratch.resize(3 * spec.chain_len());
                for (int y = 0; y < cs.out_h; ++y) {
                    for (int x = 0; x < cs.out_w; ++x) {
                        gather_patch_feats(spec, cs, feats.data(), y, x, t.patch_scratch.data());
                        for (int d = 0; d < cs.c_out; ++d) {
                            const std::size_t loc = (std::size_t(y) * cs.out_w + x) * cs.c_out + d;
                            engines_[l].forward_row(d, t.patch_scratch.data(), &t.evals[l][loc]);
                            next[loc] = t.evals[l][loc].out;
                        }
                    }
                }
            }
            if (l + 1 < n_layers) {
                for (double& v : next) v = std::min(std::max(v, kHiddenClamp), 1.0 - kHiddenClamp);
            }
        }
        const auto& outs = t.acts[n_layers];
        Eigen::VectorXd probs = Eigen::Map<const Eigen::VectorXd>(outs.data(), outs.size());
        const double total = probs.sum();
        t.normalizer = total;
        if (total < kProbFloor) {
            t.degenerate = true;
            probs.setConstant(1.0 / double(probs.size()));
        } else {
            probs /= total;
        }
        return probs;
    }

    /// Backward pass from d(loss)/d(final layer outputs).
    void backward_sample(const SampleTrace& trace, std::span<const double> d_outputs,
                         std::vector<LayerEngine::Accum>* accums) const {
        const std::size_t n_layers = state_->layers.size();
        std::vector<double> up(d_outputs.begin(), d_outputs.end());
        for (std::size_t l = n_layers; l-- > 0;) {
            const LayerSpec& spec = state_->layers[l].spec;
            const bool want_input_grad = l > 0;
            std::vector<double> dfeats;
            if (want_input_grad) dfeats.assign(trace.feats[l].size(), 0.0);
            if (spec.kind == LayerSpec::Kind::dense) {
                for (int j = 0; j < spec.n_out; ++j) {
                    engines_[l].backward_row(j, trace.feats[l].data(), trace.evals[l][j], up[j], &(*accums)[l],
                                             want_input_grad ? dfeats.data() : nullptr);
                }
            } else {
                const ConvShape cs = conv_shape(spec, shapes_[l].h, shapes_[l].w);
                std::vector<double> patch_feats(3 * spec.chain_len());
                std::vector<double> patch_dfeats(3 * spec.chain_len());
                for (int y = 0; y < cs.out_h; ++y) {
                    for (int x = 0; x < cs.out_w; ++x) {
                        gather_patch_feats(spec, cs, trace.feats[l].data(), y, x, patch_feats.data());
                        std::fill(patch_dfeats.begin(), patch_dfeats.end(), 0.0);
                        bool any = false;
                        for (int d = 0; d < cs.c_out; ++d) {
                            const std::size_t loc = (std::size_t(y) * cs.out_w + x) * cs.c_out + d;
                            if (up[loc] == 0.0) continue;
                            any = true;
                            engines_[l].backward_row(d, patch_feats.data(), trace.evals[l][loc], up[loc],
                                                     &(*accums)[l], want_input_grad ? patch_dfeats.data() : nullptr);
                        }
                        if (want_input_grad && any) {
                            scatter_patch_dfeats(spec, cs, y, x, patch_dfeats.data(), dfeats.data());
                        }
                    }
                }
            }
            if (want_input_grad) {
                const auto& acts = trace.acts[l];
                std::vector<double> dprev(acts.size(), 0.0);
                for (std::size_t i = 0; i < acts.size(); ++i) {
                    feature_prob_grad(acts[i], dfeats[3 * i + 1], dfeats[3 * i + 2], &dprev[i]);
                }
                up = std::move(dprev);
            }
        }
    }

  private:
    void gather_patch_feats(const LayerSpec& spec, const ConvShape& cs, const double* feats, int y, int x,
                            double* out) const {
        for (int kh = 0; kh < spec.kernel_h; ++kh) {
            for (int kw = 0; kw < spec.kernel_w; ++kw) {
                for (int c = 0; c < spec.c_in; ++c) {
                    const int pix = ((y * spec.stride + kh) * cs.in_w + (x * spec.stride + kw)) * spec.c_in + c;
                    const int k = patch_chain_index(spec, kh, kw, c);
                    out[3 * k] = feats[3 * pix];
                    out[3 * k + 1] = feats[3 * pix + 1];
                    out[3 * k + 2] = feats[3 * pix + 2];
                }
            }
        }
    }

    void scatter_patch_dfeats(const LayerSpec& spec, const ConvShape& cs, int y, int x, const double* patch_d,
                              double* dfeats) const {
        for (int kh = 0; kh < spec.kernel_h; ++kh) {
            for (int kw = 0; kw < spec.kernel_w; ++kw) {
                for (int c = 0; c < spec.c_in; ++c) {
                    const int pix = ((y * spec.stride + kh) * cs.in_w + (x * spec.stride + kw)) * spec.c_in + c;
                    const int k = patch_chain_index(spec, kh, kw, c);
                    dfeats[3 * pix] += patch_d[3 * k];
                    dfeats[3 * pix + 1] += patch_d[3 * k + 1];
                    dfeats[3 * pix + 2] += patch_d[3 * k + 2];
                }
            }
        }
    }

    const TrainState* state_ = nullptr;
    std::vector<TensorShape> shapes_;
    std::vector<LayerEngine> engines_;
};

/// Normalized class probabilities of one input (inference entry point).
inline Eigen::VectorXd forward_model(const TrainState& state, std::span<const double> input) {
    ModelRunner runner;
    runner.build(state);
    return runner.forward_sample(input, nullptr);
}

}  // namespace qdbnn
