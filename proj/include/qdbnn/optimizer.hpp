#pragma once

#include <optional>
#include <string>

#include "qdbnn/common.hpp"

namespace qdbnn {

struct LrSchedule {
    enum class Kind { constant, piecewise };
    Kind kind = Kind::constant;
    double high = 0.01;
    double low = 0.001;

    /// Piecewise decay: high for the first half of the epoch budget, low after.
    double learning_rate(int epoch, int total_epochs) const {
        if (kind == Kind::constant) return high;
        return epoch < total_epochs / 2 ? high : low;
    }

    std::string name() const {
        return kind == Kind::constant ? "constant-0.01" : "piecewise-0.01-to-0.001";
    }

    static std::optional<LrSchedule> parse(const std::string& s) {
        if (s == "constant-0.01") return LrSchedule{Kind::constant, 0.01, 0.01};
        if (s == "piecewise-0.01-to-0.001") return LrSchedule{Kind::piecewise, 0.01, 0.001};
        return std::nullopt;
    }
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update; `step` is 1-based for the bias correction.
inline void adam_step(Eigen::VectorXd* params, Eigen::VectorXd* m, Eigen::VectorXd* v,
                      const Eigen::VectorXd& grad, long step, double lr, const AdamConfig& cfg) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * grad;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double mc = 1.0 - std::pow(cfg.beta1, double(step));
    const double vc = 1.0 - std::pow(cfg.beta2, double(step));
    for (Eigen::Index i = 0; i < params->size(); ++i) {
        (*params)[i] -= lr * ((*m)[i] / mc) / (std::sqrt((*v)[i] / vc) + cfg.eps);
    }
}

}  // namespace qdbnn
