#include "qdbnn/layer.hpp"

#include <gtest/gtest.h>

#include <chrono>

#include "qdbnn/reference_oracles.hpp"

using namespace qdbnn;

namespace {

std::vector<double> random_probs(int n, Rng& rng, double lo = 0.0, double hi = 1.0) {
    std::vector<double> p(n);
    for (auto& v : p) v = rng.uniform(lo, hi);
    return p;
}

LayerParams identity_params(int n, int m, Rng& rng) {
    LayerParams params = LayerParams::make(LayerSpec::dense(n, m, DeformationVariant::identity));
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) params.w_logits(j, i) = rng.uniform(-2.0, 2.0);
    }
    return params;
}

}  // namespace

TEST(DenseForward, BalancedPreactivationGivesHalf) {
    // mu + bias = N/2 puts the Gaussian threshold at its median.
    const int n = 4;
    LayerParams params = LayerParams::make(LayerSpec::dense(n, 1, DeformationVariant::identity));
    for (int i = 0; i < n; ++i) params.w_logits(0, i) = logit(0.5);
    const std::vector<double> p{1.0, 1.0, 1.0, 1.0};  // mu = 2 = N/2
    std::vector<double> out(1);
    dense_forward(p, params, out);
    EXPECT_DOUBLE_EQ(out[0], 0.5);
}

TEST(DenseForward, MatchesClosedFormBitIdentically) {
    Rng rng(1);
    const int n = 50, m = 3;
    const auto params = identity_params(n, m, rng);
    const auto p = random_probs(n, rng);
    std::vector<double> out(m);
    dense_forward(p, params, out);
    for (int j = 0; j < m; ++j) {
        double mu = 0.0, sig2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double mji = p[i] * logistic(params.w_logits(j, i));
            mu += mji;
            sig2 += mji - mji * mji;
        }
        const double expected = std_normal_cdf((2.0 * mu - n) / (2.0 * std::max(std::sqrt(sig2), kSigmaFloor)));
        EXPECT_EQ(out[j], expected) << "row " << j;
    }
}

TEST(DenseForward, GaussianApproximationTracksPoissonBinomialAtScale) {
    // N = 784 with preactivations steered near the decision threshold, where
    // the CLT error is largest.
    Rng rng(2);
    const int n = 784;
    double worst = 0.0;
    int near_threshold = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p = random_probs(n, rng), q(n), prod(n);
        for (int i = 0; i < n; ++i) q[i] = rng.uniform(0.3, 1.0);
        // rescale activations so mu lands within ~2.5 sigma of N/2; the clamp
        // at 1 shifts the mean, so refine the scale a few times
        const double target = n / 2.0 + rng.uniform(-2.5, 2.5) * std::sqrt(n / 4.0);
        for (int it = 0; it < 6; ++it) {
            double mu_now = 0.0;
            for (int i = 0; i < n; ++i) mu_now += p[i] * q[i];
            for (int i = 0; i < n; ++i) p[i] = std::min(1.0, p[i] * (target / mu_now));
        }
        for (int i = 0; i < n; ++i) prod[i] = p[i] * q[i];
        LayerParams params = LayerParams::make(LayerSpec::dense(n, 1, DeformationVariant::identity));
        for (int i = 0; i < n; ++i) params.w_logits(0, i) = logit(std::min(std::max(q[i], 1e-9), 1.0 - 1e-9));
        std::vector<double> out(1);
        std::vector<double> prod_actual(n);
        for (int i = 0; i < n; ++i) prod_actual[i] = p[i] * logistic(params.w_logits(0, i));
        dense_forward(p, params, out);
        const double tail = poisson_binomial_tail(prod_actual, layer_threshold_count(n));
        if (out[0] > 0.02 && out[0] < 0.98) ++near_threshold;
        worst = std::max(worst, std::abs(out[0] - tail));
    }
    EXPECT_GE(near_threshold, 5) << "steering failed; the comparison would be vacuous";
    EXPECT_LE(worst, 0.02);
}

TEST(DenseForward, NeverNanForExtremeParameters) {
    Rng rng(3);
    const int n = 6, m = 2;
    LayerParams params = LayerParams::make(LayerSpec::dense(n, m, DeformationVariant::pq));
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) params.w_logits(j, i) = rng.uniform(-60.0, 60.0);
        params.rows[j] = RowDeformation::random(DeformationVariant::pq, n, 5.0, rng);
        params.bias[j] = rng.uniform(-100.0, 100.0);
    }
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> p(n);
        for (auto& v : p) v = rng.uniform() < 0.3 ? 0.0 : (rng.uniform() < 0.5 ? 1.0 : rng.uniform());
        std::vector<double> out(m);
        dense_forward(p, params, out);
        for (const double v : out) {
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(DenseForward, DeterministicRowGivesDegenerateOutput) {
    // All probabilities 1: phi = N always, sigma = 0; the clamp keeps the
    // output finite and saturated.
    const int n = 4;
    LayerParams params = LayerParams::make(LayerSpec::dense(n, 1, DeformationVariant::identity));
    for (int i = 0; i < n; ++i) params.w_logits(0, i) = 60.0;  // q ~ 1
    const std::vector<double> p{1.0, 1.0, 1.0, 1.0};
    std::vector<double> out(1);
    dense_forward(p, params, out);
    EXPECT_NEAR(out[0], 1.0, 1e-12);
}

TEST(ConvForward, OneByOneKernelMatchesPixelwiseDense) {
    Rng rng(4);
    LayerParams conv = LayerParams::make(LayerSpec::conv(1, 1, 1, 1, DeformationVariant::identity));
    conv.w_logits(0, 0) = rng.uniform(-1.0, 1.0);
    conv.bias[0] = 0.1;
    LayerParams dense = LayerParams::make(LayerSpec::dense(1, 1, DeformationVariant::identity));
    dense.w_logits(0, 0) = conv.w_logits(0, 0);
    dense.bias[0] = 0.1;
    const int h = 3, w = 3;
    const auto img = random_probs(h * w, rng);
    std::vector<double> out(h * w);
    conv_forward(img, conv, h, w, out);
    for (int i = 0; i < h * w; ++i) {
        std::vector<double> one{img[i]}, res(1);
        dense_forward(one, dense, res);
        EXPECT_EQ(out[i], res[0]) << "pixel " << i;
    }
}

TEST(ConvForward, EachOutputMatchesDenseOnExtractedPatch) {
    Rng rng(5);
    LayerParams conv = LayerParams::make(LayerSpec::conv(3, 2, 1, 2, DeformationVariant::pq));
    for (int d = 0; d < 2; ++d) {
        for (int i = 0; i < 9; ++i) conv.w_logits(d, i) = rng.uniform(-1.5, 1.5);
        conv.rows[d] = RowDeformation::random(DeformationVariant::pq, 9, 0.7, rng);
        conv.bias[d] = rng.uniform(-0.3, 0.3);
    }
    const int h = 5, w = 5;
    const auto img = random_probs(h * w, rng);
    std::vector<double> out(2 * 2 * 2);
    conv_forward(img, conv, h, w, out);
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
            std::vector<double> patch(9);
            for (int kh = 0; kh < 3; ++kh) {
                for (int kw = 0; kw < 3; ++kw) patch[kh * 3 + kw] = img[(y * 2 + kh) * w + (x * 2 + kw)];
            }
            for (int d = 0; d < 2; ++d) {
                LayerParams dense = LayerParams::make(LayerSpec::dense(9, 1, DeformationVariant::pq));
                dense.w_logits.row(0) = conv.w_logits.row(d);
                dense.rows[0] = conv.rows[d];
                dense.bias[0] = conv.bias[d];
                std::vector<double> res(1);
                dense_forward(patch, dense, res);
                EXPECT_EQ(out[(y * 2 + x) * 2 + d], res[0]) << y << "," << x << "," << d;
            }
        }
    }
}

TEST(ConvForward, TranslationEquivariance) {
    // Shifting the input by one stride shifts the output by one pixel;
    // overlapping interior values are bit-identical.
    Rng rng(6);
    for (const auto variant : {DeformationVariant::identity, DeformationVariant::q_only, DeformationVariant::pq,
                               DeformationVariant::q_tinv, DeformationVariant::pq_tinv}) {
        LayerParams conv = LayerParams::make(LayerSpec::conv(3, 2, 1, 2, variant));
        for (int d = 0; d < 2; ++d) {
            for (int i = 0; i < 9; ++i) conv.w_logits(d, i) = rng.uniform(-1.5, 1.5);
            conv.rows[d] = RowDeformation::random(variant, 9, 0.7, rng);
        }
        const int h = 9, w = 9, stride = 2;
        const auto img = random_probs(h * w, rng);
        const ConvShape cs = conv_shape(conv.spec, h, w);
        std::vector<double> out(cs.out_h * cs.out_w * cs.c_out);
        conv_forward(img, conv, h, w, out);
        // shift the image content up by one stride
        std::vector<double> shifted(h * w, 0.25);
        for (int y = 0; y + stride < h; ++y) {
            for (int x = 0; x < w; ++x) shifted[y * w + x] = img[(y + stride) * w + x];
        }
        std::vector<double> out_shifted(out.size());
        conv_forward(shifted, conv, h, w, out_shifted);
        for (int y = 0; y + 1 < cs.out_h; ++y) {
            for (int x = 0; x < cs.out_w; ++x) {
                for (int d = 0; d < cs.c_out; ++d) {
                    EXPECT_EQ(out_shifted[(y * cs.out_w + x) * cs.c_out + d],
                              out[((y + 1) * cs.out_w + x) * cs.c_out + d])
                        << variant_name(variant) << " " << y << "," << x << "," << d;
                }
            }
        }
    }
}

TEST(DenseForward, CostScalesLinearlyInChainLength) {
    Rng rng(7);
    auto time_forward = [&rng](int n) {
        LayerParams params = LayerParams::make(LayerSpec::dense(n, 1, DeformationVariant::pq));
        for (int i = 0; i < n; ++i) params.w_logits(0, i) = rng.uniform(-1.0, 1.0);
        params.rows[0] = RowDeformation::random(DeformationVariant::pq, n, 0.5, rng);
        std::vector<double> p(n), out(1);
        for (auto& v : p) v = rng.uniform();
        double best = 1e100;
        for (int rep = 0; rep < 3; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            dense_forward(p, params, out);
            const auto t1 = std::chrono::steady_clock::now();
            best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
        }
        return best;
    };
    const double t_small = time_forward(400);
    const double t_large = time_forward(1600);
    // 4x the work at fixed gate size; allow generous slack over the linear
    // ratio but reject anything resembling quadratic growth (16x).
    EXPECT_LT(t_large, 10.0 * t_small) << "t(400)=" << t_small << " t(1600)=" << t_large;
}
