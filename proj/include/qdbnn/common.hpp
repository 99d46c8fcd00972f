#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Conventions used throughout the library:
//  * qubit 0 is the most significant bit of an amplitude index,
//  * in a chain of 2N qubits, unit i owns the activation qubit 2i and the
//    weight qubit 2i+1,
//  * single-qubit states built from a probability p are (sqrt(1-p), sqrt(p)).

namespace qdbnn {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using Mat4 = Eigen::Matrix4cd;
using Vec2 = Eigen::Vector2d;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

class CapacityError : public std::runtime_error {
  public:
    explicit CapacityError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

#define QDBNN_REQUIRE(cond, msg)                                                \
    do {                                                                        \
        if (!(cond)) {                                                          \
            std::ostringstream oss_;                                            \
            oss_ << msg;                                                        \
            throw std::invalid_argument(oss_.str());                            \
        }                                                                       \
    } while (0)

/// Bit of `qubit` inside amplitude index `index` of an n-qubit register.
inline int qubit_bit(std::size_t index, int qubit, int n_qubits) {
    return static_cast<int>((index >> (n_qubits - 1 - qubit)) & 1u);
}

inline double std_normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

inline double std_normal_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi);
}

inline double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) {
    QDBNN_REQUIRE(p > 0.0 && p < 1.0, "logit requires p in (0,1), got " << p);
    return std::log(p / (1.0 - p));
}

// Portable deterministic RNG (splitmix64 core + Box-Muller normals).  Used
// instead of <random> distributions so seeded values are identical across
// standard library implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        return next_u64() % n;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * kPi * u2);
    }

    /// Independent stream for a named subtask of this seed.
    Rng fork(std::uint64_t salt) {
        return Rng(next_u64() ^ (0xd1b54a32d192ed03ull * (salt + 1)));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_int(i)]);
        }
    }

  private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace qdbnn
