#pragma once

#include "occsplat/geometry.hpp"

#include <vector>

namespace occsplat {

/// Canonical Gaussian set. Stored as an array of primitives; optimizer code
/// gathers each attribute into a flat group with pack/unpack.
struct GaussianCloud {
    std::vector<Gaussian3D> gaussians;

    std::size_t size() const { return gaussians.size(); }
    std::vector<Vec3> means() const;
    /// Throws Fault naming the first Gaussian with a non-finite attribute.
    void check_finite() const;
};

enum class CloudGroup { Means, Rotations, LogScales, Opacity, Colors };

inline constexpr CloudGroup kCloudGroups[] = {CloudGroup::Means, CloudGroup::Rotations, CloudGroup::LogScales,
                                              CloudGroup::Opacity, CloudGroup::Colors};

const char* group_name(CloudGroup g);
int group_width(CloudGroup g);

Eigen::VectorXd pack_group(const GaussianCloud& cloud, CloudGroup g);
void unpack_group(GaussianCloud& cloud, CloudGroup g, const Eigen::VectorXd& flat);

/// Per-Gaussian gradients on the canonical attributes.
struct CloudGrad {
    std::vector<Vec3> mean;
    std::vector<Quat> rotation;
    std::vector<Vec3> log_scale;
    std::vector<double> opacity_logit;
    std::vector<Vec3> color;

    explicit CloudGrad(std::size_t n = 0);
    Eigen::VectorXd pack(CloudGroup g) const;
};

} // namespace occsplat
