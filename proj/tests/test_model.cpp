#include "qdbnn/model.hpp"

#include <gtest/gtest.h>

#include "qdbnn/checkpoint.hpp"
#include "qdbnn/train.hpp"

using namespace qdbnn;

namespace {

ModelSpec dense_spec(int n_in, std::vector<std::pair<int, DeformationVariant>> layers, int n_classes) {
    ModelSpec spec;
    spec.input_h = n_in;
    spec.input_w = 1;
    spec.input_c = 1;
    spec.n_classes = n_classes;
    int cur = n_in;
    for (const auto& [n_out, v] : layers) {
        spec.layers.push_back(LayerSpec::dense(cur, n_out, v));
        cur = n_out;
    }
    return spec;
}

}  // namespace

TEST(ForwardModel, EqualOutputsNormalizeToUniform) {
    ModelSpec spec = dense_spec(4, {{3, DeformationVariant::identity}}, 3);
    TrainState state = init_train_state(spec, 1);
    // identical rows -> identical outputs
    for (int j = 0; j < 3; ++j) {
        state.layers[0].w_logits.row(j) = state.layers[0].w_logits.row(0);
        state.layers[0].bias[j] = 0.0;
    }
    const std::vector<double> input{0.2, 0.8, 0.5, 0.1};
    const Eigen::VectorXd probs = forward_model(state, input);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(probs[c], 1.0 / 3.0, 1e-12);
}

TEST(ForwardModel, SingleLayerIsDenseForwardPlusNormalization) {
    Rng rng(2);
    ModelSpec spec = dense_spec(5, {{3, DeformationVariant::pq}}, 3);
    TrainState state = init_train_state(spec, 3);
    for (auto& r : state.layers[0].rows) {
        for (auto& g : r.q_gens) g = random_generator(4, 0.4, rng);
        for (auto& g : r.p_gens) g = random_generator(4, 0.4, rng);
    }
    std::vector<double> input(5);
    for (auto& v : input) v = rng.uniform();
    std::vector<double> raw(3);
    dense_forward(input, state.layers[0], raw);
    const double total = raw[0] + raw[1] + raw[2];
    const Eigen::VectorXd probs = forward_model(state, input);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(probs[c], raw[c] / total, 1e-13);
}

TEST(ForwardModel, TwoLayerMatchesHandRolledComposition) {
    Rng rng(3);
    ModelSpec spec = dense_spec(4, {{3, DeformationVariant::q_only}, {2, DeformationVariant::pq}}, 2);
    TrainState state = init_train_state(spec, 4);
    for (auto& l : state.layers) {
        for (auto& r : l.rows) {
            for (auto& g : r.q_gens) g = random_generator(4, 0.4, rng);
            for (auto& g : r.p_gens) g = random_generator(4, 0.4, rng);
        }
    }
    std::vector<double> input(4);
    for (auto& v : input) v = rng.uniform(0.2, 0.8);
    std::vector<double> hidden(3), raw(2);
    dense_forward(input, state.layers[0], hidden);
    for (double& v : hidden) v = std::min(std::max(v, kHiddenClamp), 1.0 - kHiddenClamp);
    dense_forward(hidden, state.layers[1], raw);
    const Eigen::VectorXd probs = forward_model(state, input);
    const double total = raw[0] + raw[1];
    EXPECT_NEAR(probs[0], raw[0] / total, 1e-13);
    EXPECT_NEAR(probs[1], raw[1] / total, 1e-13);
}

TEST(Loss, PerfectPredictionGivesZero) {
    // Saturate one output to 1 and the other to 0 via large biases.
    ModelSpec spec = dense_spec(2, {{2, DeformationVariant::identity}}, 2);
    TrainState state = init_train_state(spec, 5);
    state.layers[0].bias[0] = 50.0;    // output ~ 1
    state.layers[0].bias[1] = -50.0;   // output ~ 0
    ProbDataset data;
    data.count = 1;
    data.h = 2;
    data.w = 1;
    data.c = 1;
    data.values = {1.0f, 0.0f};
    data.labels = {0};
    const std::vector<int> idx{0};
    EXPECT_DOUBLE_EQ(loss(state, data, idx, 0.0, 0.0), 0.0);
}

TEST(Loss, WeightRegularizerClosedForm) {
    ModelSpec spec = dense_spec(4, {{2, DeformationVariant::identity}}, 2);
    TrainState state = init_train_state(spec, 6);
    state.layers[0].w_logits.setZero();  // q = 0.5 everywhere
    ProbDataset data;
    data.count = 1;
    data.h = 4;
    data.w = 1;
    data.c = 1;
    data.values = {0.5f, 0.5f, 0.5f, 0.5f};
    data.labels = {0};
    const std::vector<int> idx{0};
    const double beta = 1e-6;
    const double with_reg = loss(state, data, idx, beta, 0.0);
    const double without = loss(state, data, idx, 0.0, 0.0);
    EXPECT_NEAR(with_reg - without, beta * 0.25 * 8, 1e-15);
}

TEST(ParameterCounts, VariantOrdering) {
    const int n = 7, m = 3;
    auto count = [&](DeformationVariant v) {
        ModelSpec spec = dense_spec(n, {{m, v}}, m);
        return init_train_state(spec, 1).n_params();
    };
    const int plain = count(DeformationVariant::identity);
    const int q_tinv = count(DeformationVariant::q_tinv);
    const int q = count(DeformationVariant::q_only);
    const int pq = count(DeformationVariant::pq);
    EXPECT_LT(plain, q_tinv);
    EXPECT_LT(q_tinv, q);
    EXPECT_LT(q, pq);
    EXPECT_EQ(plain, n * m + m);
    EXPECT_EQ(q_tinv, n * m + m + m * 16);
    EXPECT_EQ(q, n * m + m + m * n * 16);
    EXPECT_EQ(pq, n * m + m + m * (2 * n - 1) * 16);
}

TEST(Initialization, DeformedStartTracksBaseline) {
    // Fresh deformed models stay within 1e-3 of the undeformed model carrying
    // the same weight logits.
    Rng rng(7);
    const int n = 12, m = 4;
    ModelSpec spec_pq = dense_spec(n, {{m, DeformationVariant::pq}}, m);
    ModelSpec spec_id = dense_spec(n, {{m, DeformationVariant::identity}}, m);
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        TrainState deformed = init_train_state(spec_pq, seed);
        TrainState baseline = init_train_state(spec_id, seed);
        baseline.layers[0].w_logits = deformed.layers[0].w_logits;
        baseline.layers[0].bias = deformed.layers[0].bias;
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> input(n);
            for (auto& v : input) v = rng.uniform();
            const Eigen::VectorXd a = forward_model(deformed, input);
            const Eigen::VectorXd b = forward_model(baseline, input);
            worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
        }
    }
    EXPECT_LT(worst, 1e-3);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Rng rng(8);
    ModelSpec spec = dense_spec(6, {{4, DeformationVariant::pq_tinv}, {3, DeformationVariant::q_only}}, 3);
    TrainState state = init_train_state(spec, 99);
    state.step = 1234;
    for (Eigen::Index i = 0; i < state.adam_m.size(); ++i) {
        state.adam_m[i] = rng.normal();
        state.adam_v[i] = std::abs(rng.normal());
    }
    const fs::path path = fs::temp_directory_path() / "qdbnn_ckpt_test.bin";
    json cfg;
    cfg["note"] = "test";
    save_checkpoint(path, state, cfg);
    const LoadedCheckpoint loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.state.step, state.step);
    EXPECT_EQ(loaded.state.seed, state.seed);
    EXPECT_EQ(loaded.run_config.at("note"), "test");
    Eigen::VectorXd before, after;
    gather_params(state, &before);
    gather_params(loaded.state, &after);
    ASSERT_EQ(before.size(), after.size());
    for (Eigen::Index i = 0; i < before.size(); ++i) {
        EXPECT_EQ(before[i], after[i]);
        EXPECT_EQ(state.adam_m[i], loaded.state.adam_m[i]);
        EXPECT_EQ(state.adam_v[i], loaded.state.adam_v[i]);
    }
    fs::remove(path);
}

TEST(Training, ZeroEpochsReturnsInitialState) {
    ModelSpec spec = dense_spec(4, {{2, DeformationVariant::identity}}, 2);
    TrainConfig cfg;
    cfg.epochs = 0;
    const ProbDataset train_set = synthetic_dataset(2, 4, 8, 1, 0.0);
    const ProbDataset test_set = synthetic_dataset(2, 4, 8, 2, 0.0);
    const TrainResult res = train(spec, cfg, train_set, test_set);
    EXPECT_TRUE(res.metrics.empty());
    EXPECT_EQ(res.state.step, 0);
}

TEST(Training, LearnsSeparableToyProblem) {
    // Linearly separable 2-class set, single dense layer, a few hundred steps.
    const ProbDataset train_set = synthetic_dataset(2, 8, 64, 3, 0.0);
    ModelSpec spec = dense_spec(8, {{2, DeformationVariant::identity}}, 2);
    TrainConfig cfg;
    cfg.epochs = 50;  // 4 batches/epoch -> 200 steps
    cfg.batch_size = 16;
    cfg.seed = 3;
    cfg.threads = 1;
    const TrainResult res = train(spec, cfg, train_set, train_set);
    EXPECT_DOUBLE_EQ(evaluate(res.state, train_set), 1.0);
}

TEST(Training, DeterministicAcrossRunsAndThreadCounts) {
    const ProbDataset train_set = synthetic_dataset(3, 9, 30, 4, 0.1);
    const ProbDataset test_set = synthetic_dataset(3, 9, 15, 5, 0.1);
    ModelSpec spec = dense_spec(9, {{3, DeformationVariant::pq}}, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 10;
    cfg.seed = 42;
    cfg.threads = 1;
    const TrainResult a = train(spec, cfg, train_set, test_set);
    const TrainResult b = train(spec, cfg, train_set, test_set);
    cfg.threads = 2;
    const TrainResult c = train(spec, cfg, train_set, test_set);
    EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(b.metrics));
    EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(c.metrics));
    Eigen::VectorXd pa, pb, pc;
    gather_params(a.state, &pa);
    gather_params(b.state, &pb);
    gather_params(c.state, &pc);
    for (Eigen::Index i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i], pb[i]);
        EXPECT_EQ(pa[i], pc[i]);
    }
}

TEST(Evaluate, PerfectAndConstantPredictors) {
    const ProbDataset data = synthetic_dataset(10, 20, 100, 6, 0.0);
    ModelSpec spec = dense_spec(20, {{10, DeformationVariant::identity}}, 10);
    TrainState state = init_train_state(spec, 7);
    // constant predictor: bias drives one class to dominate
    state.layers[0].bias.setConstant(-50.0);
    state.layers[0].bias[3] = 50.0;
    EXPECT_DOUBLE_EQ(evaluate(state, data), 0.1);  // balanced labels
}

TEST(Training, AbortsOnNonFiniteLoss) {
    // A poisoned input must abort with a diagnostic, not silently corrupt
    // the optimizer state.
    ProbDataset bad = synthetic_dataset(2, 4, 8, 8, 0.0);
    bad.values[0] = std::numeric_limits<float>::quiet_NaN();
    ModelSpec spec = dense_spec(4, {{2, DeformationVariant::pq}}, 2);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    EXPECT_THROW(train(spec, cfg, bad, bad), TrainAbort);
}
