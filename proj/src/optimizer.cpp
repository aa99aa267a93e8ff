#include "occsplat/optimizer.hpp"

#include "occsplat/errors.hpp"

#include <algorithm>
#include <cmath>

namespace occsplat {

void AdamSettings::validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw InvalidInput("Adam betas must lie in [0, 1)");
    }
    if (!(eps_gaussian > 0.0 && eps_net > 0.0)) {
        throw InvalidInput("Adam eps must be positive");
    }
}

void adam_step(AdamGroup& group, Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad, double lr,
               const AdamSettings& s) {
    if (params.size() != grad.size() || group.m.size() != grad.size()) {
        throw Fault("Adam group '" + group.name + "' size mismatch");
    }
    ++group.step;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(group.step));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(group.step));
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
        group.m[i] = s.beta1 * group.m[i] + (1.0 - s.beta1) * grad[i];
        group.v[i] = s.beta2 * group.v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
        const double mhat = group.m[i] / bc1;
        const double vhat = group.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + group.eps);
    }
}

double exp_decay_lr(double init, double final, double progress) {
    const double p = std::clamp(progress, 0.0, 1.0);
    if (init <= 0.0 || final <= 0.0) {
        return (1.0 - p) * init + p * final;
    }
    return std::exp(std::log(init) * (1.0 - p) + std::log(final) * p);
}

} // namespace occsplat
