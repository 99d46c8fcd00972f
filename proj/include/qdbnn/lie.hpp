#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "qdbnn/common.hpp"

namespace qdbnn {

// Hermitian basis {G_k} of u(dim), enumerated in a fixed order:
//   k in [0, d)                : diagonal units E_aa,
//   next d(d-1)/2 entries      : symmetric pairs  E_ab + E_ba, (a,b) a<b in
//                                row-major order,
//   last d(d-1)/2 entries      : antisymmetric pairs i(E_ab - E_ba), same
//                                (a,b) order.
// A generator with parameters theta realizes A = i * sum_k theta_k G_k, which
// is skew-Hermitian, so exp(A) is unitary.
inline std::vector<CMat> hermitian_basis(int dim) {
    std::vector<CMat> basis;
    basis.reserve(static_cast<std::size_t>(dim) * dim);
    for (int a = 0; a < dim; ++a) {
        CMat g = CMat::Zero(dim, dim);
        g(a, a) = 1.0;
        basis.push_back(g);
    }
    for (int a = 0; a < dim; ++a) {
        for (int b = a + 1; b < dim; ++b) {
            CMat g = CMat::Zero(dim, dim);
            g(a, b) = 1.0;
            g(b, a) = 1.0;
            basis.push_back(g);
        }
    }
    for (int a = 0; a < dim; ++a) {
        for (int b = a + 1; b < dim; ++b) {
            CMat g = CMat::Zero(dim, dim);
            g(a, b) = cplx(0.0, 1.0);
            g(b, a) = cplx(0.0, -1.0);
            basis.push_back(g);
        }
    }
    return basis;
}

struct SkewHermitianGenerator {
    int dim = 4;
    Eigen::VectorXd params;  // dim*dim real coefficients

    static SkewHermitianGenerator zero(int dim) {
        SkewHermitianGenerator g;
        g.dim = dim;
        g.params = Eigen::VectorXd::Zero(dim * dim);
        return g;
    }

    bool is_zero() const { return params.isZero(0.0); }
};

/// H = sum_k theta_k G_k (Hermitian); the realized algebra element is i*H.
inline CMat hermitian_from_params(const SkewHermitianGenerator& gen) {
    QDBNN_REQUIRE(gen.params.size() == gen.dim * gen.dim,
                  "generator has " << gen.params.size() << " params, expected " << gen.dim * gen.dim);
    const auto basis = hermitian_basis(gen.dim);
    CMat h = CMat::Zero(gen.dim, gen.dim);
    for (int k = 0; k < gen.params.size(); ++k) {
        if (gen.params[k] != 0.0) h += gen.params[k] * basis[k];
    }
    return h;
}

inline CMat realize_skew(const SkewHermitianGenerator& gen) {
    return cplx(0.0, 1.0) * hermitian_from_params(gen);
}

// Eigen-factorized unitary exp(i*H).  Keeping the eigensystem around makes
// every parameter derivative a cheap divided-difference evaluation.
struct UnitaryFactorization {
    int dim = 0;
    bool identity = false;    // generator was exactly zero
    CMat u;                   // exp(i*H)
    CMat eigvecs;             // columns: eigenvectors of H
    Eigen::VectorXd eigvals;  // eigenvalues of H

    // Divided differences of exp(i*x) on eigenvalue pairs; near-degenerate
    // pairs switch to the analytic limit to avoid cancellation.
    cplx divided_difference(int a, int b) const {
        const double la = eigvals[a], lb = eigvals[b];
        if (std::abs(la - lb) < 1e-9) {
            const double m = 0.5 * (la + lb);
            return cplx(0.0, 1.0) * std::exp(cplx(0.0, m));
        }
        return (std::exp(cplx(0.0, la)) - std::exp(cplx(0.0, lb))) / cplx(la - lb, 0.0);
    }

    /// dU/dtheta_k for the fixed-basis parametrization.
    CMat derivative(int k) const {
        const auto basis = hermitian_basis(dim);
        QDBNN_REQUIRE(k >= 0 && k < static_cast<int>(basis.size()),
                      "parameter index " << k << " out of range for dim " << dim);
        CMat inner = eigvecs.adjoint() * basis[k] * eigvecs;
        for (int a = 0; a < dim; ++a) {
            for (int b = 0; b < dim; ++b) {
                inner(a, b) *= divided_difference(a, b);
            }
        }
        return eigvecs * inner * eigvecs.adjoint();
    }

    // Real gradient of a scalar loss from an accumulated complex environment:
    //   dL = 2 Re sum_{ab} dM[a,b] * env[a,b]
    // where M is the matrix as applied (either U or its adjoint).
    Eigen::VectorXd param_gradient(const CMat& env, bool applied_adjoint) const {
        Eigen::VectorXd grad(dim * dim);
        const auto basis = hermitian_basis(dim);
        for (int k = 0; k < dim * dim; ++k) {
            CMat inner = eigvecs.adjoint() * basis[k] * eigvecs;
            for (int a = 0; a < dim; ++a) {
                for (int b = 0; b < dim; ++b) {
                    inner(a, b) *= divided_difference(a, b);
                }
            }
            CMat du = eigvecs * inner * eigvecs.adjoint();
            if (applied_adjoint) du = du.adjoint().eval();
            grad[k] = 2.0 * (du.array() * env.array()).sum().real();
        }
        return grad;
    }
};

inline UnitaryFactorization factorize_unitary(const SkewHermitianGenerator& gen) {
    UnitaryFactorization f;
    f.dim = gen.dim;
    if (gen.is_zero()) {
        f.identity = true;
        f.u = CMat::Identity(gen.dim, gen.dim);
        f.eigvecs = CMat::Identity(gen.dim, gen.dim);
        f.eigvals = Eigen::VectorXd::Zero(gen.dim);
        return f;
    }
    const CMat h = hermitian_from_params(gen);
    Eigen::SelfAdjointEigenSolver<CMat> solver(h);
    if (solver.info() != Eigen::Success) {
        std::ostringstream oss;
        oss << "eigendecomposition failed for generator params: " << gen.params.transpose();
        throw std::runtime_error(oss.str());
    }
    f.eigvecs = solver.eigenvectors();
    f.eigvals = solver.eigenvalues();
    CVec phases(gen.dim);
    for (int a = 0; a < gen.dim; ++a) phases[a] = std::exp(cplx(0.0, f.eigvals[a]));
    f.u = f.eigvecs * phases.asDiagonal() * f.eigvecs.adjoint();
    return f;
}

/// U = exp(A) for the skew-Hermitian A realized by `gen`.
inline CMat expm_skew_hermitian(const SkewHermitianGenerator& gen) {
    return factorize_unitary(gen).u;
}

/// dU/dtheta_k via divided differences in the eigenbasis of H.
inline CMat expm_derivative(const SkewHermitianGenerator& gen, int param_index) {
    return factorize_unitary(gen).derivative(param_index);
}

inline SkewHermitianGenerator random_generator(int dim, double scale, Rng& rng) {
    SkewHermitianGenerator g;
    g.dim = dim;
    g.params = Eigen::VectorXd(dim * dim);
    for (int k = 0; k < g.params.size(); ++k) g.params[k] = scale * rng.normal();
    return g;
}

}  // namespace qdbnn
