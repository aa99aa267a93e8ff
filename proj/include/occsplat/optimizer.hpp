#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>

namespace occsplat {

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_gaussian = 1e-15;
    double eps_net = 1e-8;

    void validate() const;
};

/// Moment buffers of one parameter group.
struct AdamGroup {
    std::string name;
    double eps = 1e-8;
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::int64_t step = 0;

    AdamGroup() = default;
    AdamGroup(std::string n, Eigen::Index size, double e)
        : name(std::move(n)), eps(e), m(Eigen::VectorXd::Zero(size)), v(Eigen::VectorXd::Zero(size)) {}
};

/// Bias-corrected Adam: m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g²,
/// p ← p − lr·m̂/(√v̂ + ε).
void adam_step(AdamGroup& group, Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad, double lr,
               const AdamSettings& s);

/// Log-linear interpolation from `init` to `final` as progress goes 0 → 1.
double exp_decay_lr(double init, double final, double progress);

} // namespace occsplat
