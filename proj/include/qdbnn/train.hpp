#pragma once

#include <functional>
#include <numeric>

#include "qdbnn/data.hpp"
#include "qdbnn/model.hpp"
#include "qdbnn/optimizer.hpp"
#include "qdbnn/parallel.hpp"

namespace qdbnn {

struct TrainConfig {
    double beta = 1e-6;      // weight-distribution regularizer coefficient
    double lambda_l2 = 0.0;  // L2 on deformation parameters
    LrSchedule schedule;
    int epochs = 50;
    int batch_size = 100;
    std::uint64_t seed = 1;
    int threads = 0;
    AdamConfig adam;
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0, train_loss = 0.0, train_acc = 0.0, test_acc = 0.0;
};

class TrainAbort : public std::runtime_error {
  public:
    explicit TrainAbort(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

/// Sum of q(1-q) over all weight distributions.
inline double weight_regularizer(const TrainState& s) {
    double acc = 0.0;
    for (const auto& l : s.layers) {
        for (Eigen::Index j = 0; j < l.w_logits.rows(); ++j) {
            for (Eigen::Index i = 0; i < l.w_logits.cols(); ++i) {
                const double q = logistic(l.w_logits(j, i));
                acc += q * (1.0 - q);
            }
        }
    }
    return acc;
}

/// Sum of squared deformation parameters.
inline double generator_l2(const TrainState& s) {
    double acc = 0.0;
    for (const auto& l : s.layers) {
        for (const auto& r : l.rows) {
            for (const auto& g : r.q_gens) acc += g.params.squaredNorm();
            for (const auto& g : r.p_gens) acc += g.params.squaredNorm();
        }
    }
    return acc;
}

inline void add_regularizer_grads(const TrainState& s, double beta, double lambda, Eigen::VectorXd* grad) {
    int off = 0;
    for (const auto& l : s.layers) {
        for (Eigen::Index j = 0; j < l.w_logits.rows(); ++j) {
            for (Eigen::Index i = 0; i < l.w_logits.cols(); ++i) {
                const double q = logistic(l.w_logits(j, i));
                (*grad)[off++] += beta * (1.0 - 2.0 * q) * q * (1.0 - q);
            }
        }
        for (const auto& r : l.rows) {
            const int pc = r.param_count();
            if (lambda != 0.0) {
                int o = off;
                for (const auto& g : r.q_gens) {
                    for (int k = 0; k < 16; ++k) (*grad)[o + k] += 2.0 * lambda * g.params[k];
                    o += 16;
                }
                for (const auto& g : r.p_gens) {
                    for (int k = 0; k < 16; ++k) (*grad)[o + k] += 2.0 * lambda * g.params[k];
                    o += 16;
                }
            }
            off += pc;
        }
        off += static_cast<int>(l.bias.size());
    }
}

}  // namespace detail

struct BatchStats {
    double nll_sum = 0.0;
    int correct = 0;
    int count = 0;
};

// Forward+backward over a set of samples.  Samples are processed in fixed
// chunks whose partial results are reduced in chunk order, so the outcome is
// bit-identical for any worker count.
inline BatchStats batch_gradients(ModelRunner& runner, const ProbDataset& data,
                                  std::span<const int> indices, int threads,
                                  std::vector<LayerGrads>* grads_out) {
    const TrainState& state = runner.state();
    const std::size_t n_layers = state.layers.size();
    const std::size_t n_chunks = (indices.size() + kGradChunk - 1) / kGradChunk;
    std::vector<std::vector<LayerEngine::Accum>> chunk_accums(n_chunks);
    std::vector<BatchStats> chunk_stats(n_chunks);
    parallel_chunks(indices.size(), kGradChunk, threads, [&](std::size_t b, std::size_t e, std::size_t chunk) {
        auto& accums = chunk_accums[chunk];
        accums.resize(n_layers);
        for (std::size_t l = 0; l < n_layers; ++l) accums[l].init(runner.engine(l));
        std::vector<double> input;
        SampleTrace trace;
        for (std::size_t k = b; k < e; ++k) {
            const int idx = indices[k];
            data.sample_input(idx, input);
            const Eigen::VectorXd probs = runner.forward_sample(input, &trace);
            const int label = data.labels[idx];
            int argmax = 0;
            for (int c2 = 1; c2 < probs.size(); ++c2) {
                if (probs[c2] > probs[argmax]) argmax = c2;
            }
            chunk_stats[chunk].correct += argmax == label;
            chunk_stats[chunk].count += 1;
            const double r_true = probs[label];
            chunk_stats[chunk].nll_sum += -std::log(std::max(r_true, kProbFloor));
            if (trace.degenerate || r_true <= kProbFloor) continue;  // flat region of the floored loss
            // d(-log(p_y / S))/dp_c = 1/S - delta_cy / p_y on raw outputs
            const auto& outs = trace.acts.back();
            const double inv_s = 1.0 / trace.normalizer;
            std::vector<double> d_out(outs.size());
            for (std::size_t c2 = 0; c2 < outs.size(); ++c2) {
                d_out[c2] = inv_s;
                if (static_cast<int>(c2) == label) d_out[c2] -= 1.0 / std::max(outs[c2], kProbFloor);
            }
            runner.backward_sample(trace, d_out, &accums);
        }
    });
    BatchStats total;
    std::vector<LayerEngine::Accum> accums(n_layers);
    for (std::size_t c2 = 0; c2 < n_chunks; ++c2) {
        total.nll_sum += chunk_stats[c2].nll_sum;
        total.correct += chunk_stats[c2].correct;
        total.count += chunk_stats[c2].count;
        for (std::size_t l = 0; l < n_layers; ++l) accums[l].add(chunk_accums[c2][l]);
    }
    grads_out->clear();
    for (std::size_t l = 0; l < n_layers; ++l) grads_out->push_back(LayerGrads::zero(state.layers[l]));
    for (std::size_t l = 0; l < n_layers; ++l) {
        runner.engine(l).finalize(accums[l], &(*grads_out)[l], threads);
    }
    // mean over the batch
    const double inv = 1.0 / double(std::max(1, total.count));
    for (auto& g : *grads_out) {
        g.d_logits *= inv;
        g.d_bias *= inv;
        for (auto& dg : g.d_gens) dg *= inv;
    }
    return total;
}

/// Mean floored negative log-likelihood plus both regularizers.
inline double loss(const TrainState& state, const ProbDataset& data, std::span<const int> indices,
                   double beta, double lambda, int threads = 1) {
    QDBNN_REQUIRE(!indices.empty(), "loss over an empty batch");
    ModelRunner runner;
    runner.build(state, threads);
    double nll = 0.0;
    std::vector<double> input;
    for (const int idx : indices) {
        data.sample_input(idx, input);
        const Eigen::VectorXd probs = runner.forward_sample(input, nullptr);
        nll += -std::log(std::max(probs[data.labels[idx]], kProbFloor));
    }
    return nll / double(indices.size()) + beta * detail::weight_regularizer(state) +
           lambda * detail::generator_l2(state);
}

/// Fraction of samples whose argmax class matches the label.
inline double evaluate(const TrainState& state, const ProbDataset& data, int threads = 0) {
    ModelRunner runner;
    runner.build(state, threads);
    std::vector<int> correct_per_chunk((data.count + 255) / 256, 0);
    parallel_chunks(data.count, 256, threads, [&](std::size_t b, std::size_t e, std::size_t chunk) {
        std::vector<double> input;
        int correct = 0;
        for (std::size_t k = b; k < e; ++k) {
            data.sample_input(static_cast<int>(k), input);
            const Eigen::VectorXd probs = runner.forward_sample(input, nullptr);
            int argmax = 0;
            for (int c2 = 1; c2 < probs.size(); ++c2) {
                if (probs[c2] > probs[argmax]) argmax = c2;
            }
            correct += argmax == data.labels[k];
        }
        correct_per_chunk[chunk] = correct;
    });
    const int correct = std::accumulate(correct_per_chunk.begin(), correct_per_chunk.end(), 0);
    return double(correct) / double(std::max(1, data.count));
}

struct TrainResult {
    TrainState state;
    std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Adam minibatch training; deterministic for a fixed seed (any thread count).
inline TrainResult train(const ModelSpec& spec, const TrainConfig& cfg, const ProbDataset& train_set,
                         const ProbDataset& test_set, const EpochCallback& on_epoch = nullptr) {
    TrainResult res;
    res.state = init_train_state(spec, cfg.seed);
    TrainState& state = res.state;
    Eigen::VectorXd params;
    gather_params(state, &params);
    Rng shuffle_rng = Rng(cfg.seed).fork(3);
    std::vector<int> order(train_set.count);
    std::iota(order.begin(), order.end(), 0);
    std::vector<LayerGrads> layer_grads;
    Eigen::VectorXd flat_grad;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.schedule.learning_rate(epoch, cfg.epochs);
        shuffle_rng.shuffle(order);
        double nll_sum = 0.0;
        int correct = 0, seen = 0;
        for (int start = 0; start < train_set.count; start += cfg.batch_size) {
            const int len = std::min(cfg.batch_size, train_set.count - start);
            ModelRunner runner;
            runner.build(state, cfg.threads);
            const BatchStats stats =
                batch_gradients(runner, train_set, std::span<const int>(order.data() + start, len), cfg.threads,
                                &layer_grads);
            nll_sum += stats.nll_sum;
            correct += stats.correct;
            seen += stats.count;
            gather_grads(state, layer_grads, &flat_grad);
            detail::add_regularizer_grads(state, cfg.beta, cfg.lambda_l2, &flat_grad);
            if (!flat_grad.allFinite()) {
                throw TrainAbort("non-finite gradient at step " + std::to_string(state.step));
            }
            state.step += 1;
            adam_step(&params, &state.adam_m, &state.adam_v, flat_grad, state.step, lr, cfg.adam);
            scatter_params(params, &state);
        }
        const double train_loss = nll_sum / double(std::max(1, seen)) +
                                  cfg.beta * detail::weight_regularizer(state) +
                                  cfg.lambda_l2 * detail::generator_l2(state);
        if (!std::isfinite(train_loss)) {
            throw TrainAbort("non-finite loss after epoch " + std::to_string(epoch));
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.train_loss = train_loss;
        m.train_acc = double(correct) / double(std::max(1, seen));
        m.test_acc = test_set.count > 0 ? evaluate(state, test_set, cfg.threads) : 0.0;
        res.metrics.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return res;
}

/// Metrics CSV, schema `epoch,lr,train_loss,train_acc,test_acc`.
inline std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
    std::string out = "epoch,lr,train_loss,train_acc,test_acc\n";
    char buf[256];
    for (const auto& m : metrics) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.lr, m.train_loss, m.train_acc,
                      m.test_acc);
        out += buf;
    }
    return out;
}

}  // namespace qdbnn
