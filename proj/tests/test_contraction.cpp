#include "qdbnn/contraction.hpp"

#include <gtest/gtest.h>

#include "qdbnn/oracle.hpp"

using namespace qdbnn;

namespace {

constexpr DeformationVariant kAllVariants[] = {DeformationVariant::identity, DeformationVariant::q_only,
                                               DeformationVariant::pq, DeformationVariant::q_tinv,
                                               DeformationVariant::pq_tinv};

std::vector<double> random_probs(int n, Rng& rng) {
    std::vector<double> p(n);
    for (auto& v : p) v = rng.uniform();
    return p;
}

}  // namespace

TEST(ComputeMu, IdentityGatesGiveProductProbability) {
    Rng rng(1);
    const int n = 4;
    const auto p = random_probs(n, rng);
    const auto q = random_probs(n, rng);
    const auto row = realize(RowDeformation::make(DeformationVariant::identity, n));
    const auto chain = chain_states(p, q);
    for (int i = 0; i < n; ++i) {
        EXPECT_NEAR(compute_mu_i(chain, row, i), p[i] * q[i], 1e-13);
    }
}

TEST(ComputeMu, DeterministicUnitIsOne) {
    const std::vector<double> p{1.0, 1.0}, q{1.0, 1.0};
    const auto row = realize(RowDeformation::make(DeformationVariant::identity, 2));
    const auto chain = chain_states(p, q);
    EXPECT_NEAR(compute_mu_i(chain, row, 0), 1.0, 1e-14);
    EXPECT_NEAR(compute_mu_i(chain, row, 1), 1.0, 1e-14);
}

TEST(ComputeGamma, FactorizesWithoutBridgeGates) {
    Rng rng(2);
    const int n = 4;
    const auto p = random_probs(n, rng);
    const auto q = random_probs(n, rng);
    // Q gates random, no P gates -> neighbouring observables uncorrelated.
    const auto row = realize(RowDeformation::random(DeformationVariant::q_only, n, 0.9, rng));
    const auto chain = chain_states(p, q);
    for (int i = 0; i + 1 < n; ++i) {
        const double mu_a = compute_mu_i(chain, row, i);
        const double mu_b = compute_mu_i(chain, row, i + 1);
        EXPECT_NEAR(compute_gamma(chain, row, i), mu_a * mu_b, 1e-12);
    }
}

TEST(ComputeGamma, IdentityGatesFactorize) {
    Rng rng(3);
    const int n = 3;
    const auto p = random_probs(n, rng);
    const auto q = random_probs(n, rng);
    const auto row = realize(RowDeformation::make(DeformationVariant::identity, n));
    const auto chain = chain_states(p, q);
    for (int i = 0; i + 1 < n; ++i) {
        EXPECT_NEAR(compute_gamma(chain, row, i), p[i] * q[i] * p[i + 1] * q[i + 1], 1e-13);
    }
}

TEST(RowMoments, MeanMatchesExactMomentsAcrossVariants) {
    Rng rng(4);
    for (const auto variant : kAllVariants) {
        for (int n : {1, 2, 3, 4, 5}) {
            for (int trial = 0; trial < 10; ++trial) {
                const auto p = random_probs(n, rng);
                const auto q = random_probs(n, rng);
                const auto row = realize(RowDeformation::random(variant, n, 0.9, rng));
                const auto chain = chain_states(p, q);
                const auto m = row_moments_reference(chain, row);
                const auto [mu, sig2] = exact_moments(p, q, row);
                EXPECT_NEAR(m.mu, mu, 1e-10) << variant_name(variant) << " n=" << n;
                EXPECT_NEAR(m.sigma2, sig2, 1e-10) << variant_name(variant) << " n=" << n;
            }
        }
    }
}

TEST(RowMoments, SumOfLocalTermsEqualsExactMean) {
    Rng rng(5);
    const int n = 4;
    const auto p = random_probs(n, rng);
    const auto q = random_probs(n, rng);
    const auto row = realize(RowDeformation::random(DeformationVariant::pq, n, 1.0, rng));
    const auto chain = chain_states(p, q);
    double mu = 0.0;
    for (int i = 0; i < n; ++i) mu += compute_mu_i(chain, row, i);
    const auto [mu_exact, sig2_exact] = exact_moments(p, q, row);
    (void)sig2_exact;
    EXPECT_NEAR(mu, mu_exact, 1e-10);
}

TEST(RowMoments, GateSupportIsLocal) {
    // Perturbing Q_i may change mu only at positions i-1, i, i+1 and the
    // adjacent pair terms; everything else must be bit-identical.
    Rng rng(6);
    const int n = 6;
    const auto p = random_probs(n, rng);
    const auto q = random_probs(n, rng);
    auto def = RowDeformation::random(DeformationVariant::pq, n, 0.8, rng);
    const auto chain = chain_states(p, q);
    const auto base = row_moments_reference(chain, realize(def));
    const int target = 3;
    def.q_gens[target].params[5] += 0.3;
    const auto bumped = row_moments_reference(chain, realize(def));
    for (int i = 0; i < n; ++i) {
        if (std::abs(i - target) > 1) {
            EXPECT_EQ(base.mu_i[i], bumped.mu_i[i]) << "mu_" << i << " moved";
        }
    }
    EXPECT_NE(base.mu_i[target], bumped.mu_i[target]);
    for (int i = 0; i + 1 < n; ++i) {
        if (i < target - 2 || i > target + 1) {
            EXPECT_EQ(base.gamma[i], bumped.gamma[i]) << "gamma_" << i << " moved";
        }
    }
}

TEST(RowMoments, BridgeGateSupportIsLocal) {
    Rng rng(7);
    const int n = 6;
    const auto p = random_probs(n, rng);
    const auto q = random_probs(n, rng);
    auto def = RowDeformation::random(DeformationVariant::pq, n, 0.8, rng);
    const auto chain = chain_states(p, q);
    const auto base = row_moments_reference(chain, realize(def));
    const int target = 2;  // P_2 couples weight 2 with activation 3
    def.p_gens[target].params[9] += 0.4;
    const auto bumped = row_moments_reference(chain, realize(def));
    for (int i = 0; i < n; ++i) {
        if (i != target && i != target + 1) {
            EXPECT_EQ(base.mu_i[i], bumped.mu_i[i]) << "mu_" << i << " moved";
        }
    }
}

TEST(RowMoments, MomentsAreRealAndInRange) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_int(5));
        const auto p = random_probs(n, rng);
        const auto q = random_probs(n, rng);
        const auto row = realize(RowDeformation::random(DeformationVariant::pq, n, 1.2, rng));
        const auto m = row_moments_reference(chain_states(p, q), row);
        EXPECT_GE(m.mu, -1e-12);
        EXPECT_LE(m.mu, n + 1e-12);
        EXPECT_GE(m.sigma2, -1e-10);
        for (int i = 0; i < n; ++i) {
            EXPECT_GE(m.mu_i[i], 0.0);
            EXPECT_LE(m.mu_i[i], 1.0);
        }
    }
}
