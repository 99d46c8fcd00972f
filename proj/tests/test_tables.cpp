#include "qdbnn/tables.hpp"

#include <gtest/gtest.h>

#include "qdbnn/contraction.hpp"
#include "qdbnn/layer.hpp"
#include "qdbnn/oracle.hpp"

using namespace qdbnn;

namespace {

std::vector<double> random_probs(int n, Rng& rng) {
    std::vector<double> p(n);
    for (auto& v : p) v = rng.uniform();
    return p;
}

LayerParams random_dense_params(int n, int m, DeformationVariant v, Rng& rng, double gen_scale = 0.8) {
    LayerParams params = LayerParams::make(LayerSpec::dense(n, m, v));
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) params.w_logits(j, i) = rng.uniform(-2.0, 2.0);
        params.rows[j] = RowDeformation::random(v, n, gen_scale, rng);
        params.bias[j] = rng.uniform(-0.5, 0.5);
    }
    return params;
}

}  // namespace

TEST(Tables, TablePathMatchesReferenceContractions) {
    Rng rng(21);
    for (const auto variant : {DeformationVariant::q_only, DeformationVariant::pq, DeformationVariant::q_tinv,
                               DeformationVariant::pq_tinv}) {
        for (int n : {1, 2, 3, 5}) {
            for (int trial = 0; trial < 8; ++trial) {
                const auto params = random_dense_params(n, 1, variant, rng);
                LayerEngine engine;
                engine.build(params);
                const auto p = random_probs(n, rng);
                std::vector<double> feats(3 * n);
                engine.features_of(p, feats.data());
                LayerEngine::RowEval ev;
                engine.forward_row(0, feats.data(), &ev);

                std::vector<double> q_row(n);
                for (int i = 0; i < n; ++i) q_row[i] = engine.weight_probs()(0, i);
                const auto chain = chain_states(p, q_row);
                const auto ref = row_moments_reference(chain, engine.realized_row(0));
                EXPECT_NEAR(ev.mu_tot, ref.mu, 1e-12) << variant_name(variant) << " n=" << n;
                EXPECT_NEAR(ev.sig2, ref.sigma2, 1e-12) << variant_name(variant) << " n=" << n;
                for (int i = 0; i < n; ++i) EXPECT_NEAR(ev.mu_i[i], ref.mu_i[i], 1e-12);
            }
        }
    }
}

TEST(Tables, MomentsMatchExactEnumeration) {
    Rng rng(22);
    for (const auto variant : {DeformationVariant::q_only, DeformationVariant::pq, DeformationVariant::q_tinv,
                               DeformationVariant::pq_tinv}) {
        for (int n : {2, 3, 4, 5}) {
            const auto params = random_dense_params(n, 1, variant, rng);
            LayerEngine engine;
            engine.build(params);
            for (int trial = 0; trial < 5; ++trial) {
                const auto p = random_probs(n, rng);
                std::vector<double> feats(3 * n);
                engine.features_of(p, feats.data());
                LayerEngine::RowEval ev;
                engine.forward_row(0, feats.data(), &ev);
                std::vector<double> q_row(n);
                for (int i = 0; i < n; ++i) q_row[i] = engine.weight_probs()(0, i);
                const auto [mu, sig2] = exact_moments(p, q_row, engine.realized_row(0));
                EXPECT_NEAR(ev.mu_tot, mu, 1e-10) << variant_name(variant) << " n=" << n;
                EXPECT_NEAR(ev.sig2, sig2, 1e-10) << variant_name(variant) << " n=" << n;
            }
        }
    }
}

TEST(Tables, BinaryActivationsHaveNoSqrtFeature) {
    const auto f0 = tables::activation_features(0.0);
    const auto f1 = tables::activation_features(1.0);
    EXPECT_EQ(f0[2], 0.0);
    EXPECT_EQ(f1[2], 0.0);
    EXPECT_EQ(f0[1], 0.0);
    EXPECT_EQ(f1[1], 1.0);
}

TEST(Tables, DenseForwardDispatchesIdenticallyAtZeroDeformation) {
    // A deformed variant with all-zero generators must produce bit-identical
    // output to the identity variant.
    Rng rng(23);
    const int n = 9, m = 4;
    LayerParams pq = LayerParams::make(LayerSpec::dense(n, m, DeformationVariant::pq));
    LayerParams id = LayerParams::make(LayerSpec::dense(n, m, DeformationVariant::identity));
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) {
            const double l = rng.uniform(-2.0, 2.0);
            pq.w_logits(j, i) = l;
            id.w_logits(j, i) = l;
        }
        const double b = rng.uniform(-0.5, 0.5);
        pq.bias[j] = b;
        id.bias[j] = b;
    }
    const auto p = random_probs(n, rng);
    std::vector<double> out_pq(m), out_id(m);
    dense_forward(p, pq, out_pq);
    dense_forward(p, id, out_id);
    for (int j = 0; j < m; ++j) {
        EXPECT_EQ(out_pq[j], out_id[j]) << "row " << j;
    }
}

TEST(Tables, EngineMatchesDenseForwardOp) {
    Rng rng(24);
    const int n = 6, m = 3;
    const auto params = random_dense_params(n, m, DeformationVariant::pq, rng);
    LayerEngine engine;
    engine.build(params);
    const auto p = random_probs(n, rng);
    std::vector<double> out_op(m);
    dense_forward(p, params, out_op);
    std::vector<double> feats(3 * n);
    engine.features_of(p, feats.data());
    for (int j = 0; j < m; ++j) {
        LayerEngine::RowEval ev;
        engine.forward_row(j, feats.data(), &ev);
        EXPECT_NEAR(ev.out, out_op[j], 1e-12);
    }
}
