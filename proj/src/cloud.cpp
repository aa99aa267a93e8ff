#include "occsplat/cloud.hpp"

#include "occsplat/errors.hpp"

#include <string>

namespace occsplat {

std::vector<Vec3> GaussianCloud::means() const {
    std::vector<Vec3> out;
    out.reserve(gaussians.size());
    for (const auto& g : gaussians) {
        out.push_back(g.mean);
    }
    return out;
}

void GaussianCloud::check_finite() const {
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const auto& g = gaussians[i];
        if (!g.mean.allFinite() || !g.rotation.allFinite() || !g.log_scale.allFinite() ||
            !std::isfinite(g.opacity_logit) || !g.color.allFinite()) {
            throw Fault("Gaussian " + std::to_string(i) + " has a non-finite attribute");
        }
    }
}

const char* group_name(CloudGroup g) {
    switch (g) {
    case CloudGroup::Means: return "means";
    case CloudGroup::Rotations: return "rotations";
    case CloudGroup::LogScales: return "log_scales";
    case CloudGroup::Opacity: return "opacity";
    case CloudGroup::Colors: return "colors";
    }
    return "?";
}

int group_width(CloudGroup g) {
    switch (g) {
    case CloudGroup::Rotations: return 4;
    case CloudGroup::Opacity: return 1;
    default: return 3;
    }
}

namespace {

template <typename Fn>
void for_each_slot(std::size_t n, CloudGroup g, Fn&& fn) {
    const int w = group_width(g);
    for (std::size_t i = 0; i < n; ++i) {
        fn(i, static_cast<Eigen::Index>(i) * w);
    }
}

} // namespace

Eigen::VectorXd pack_group(const GaussianCloud& cloud, CloudGroup g) {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(cloud.size()) * group_width(g));
    for_each_slot(cloud.size(), g, [&](std::size_t i, Eigen::Index o) {
        const auto& p = cloud.gaussians[i];
        switch (g) {
        case CloudGroup::Means: flat.segment<3>(o) = p.mean; break;
        case CloudGroup::Rotations: flat.segment<4>(o) = p.rotation; break;
        case CloudGroup::LogScales: flat.segment<3>(o) = p.log_scale; break;
        case CloudGroup::Opacity: flat[o] = p.opacity_logit; break;
        case CloudGroup::Colors: flat.segment<3>(o) = p.color; break;
        }
    });
    return flat;
}

void unpack_group(GaussianCloud& cloud, CloudGroup g, const Eigen::VectorXd& flat) {
    if (flat.size() != static_cast<Eigen::Index>(cloud.size()) * group_width(g)) {
        throw Fault(std::string("flat buffer size mismatch for group ") + group_name(g));
    }
    for_each_slot(cloud.size(), g, [&](std::size_t i, Eigen::Index o) {
        auto& p = cloud.gaussians[i];
        switch (g) {
        case CloudGroup::Means: p.mean = flat.segment<3>(o); break;
        case CloudGroup::Rotations: p.rotation = flat.segment<4>(o); break;
        case CloudGroup::LogScales: p.log_scale = flat.segment<3>(o); break;
        case CloudGroup::Opacity: p.opacity_logit = flat[o]; break;
        case CloudGroup::Colors: p.color = flat.segment<3>(o); break;
        }
    });
}

CloudGrad::CloudGrad(std::size_t n)
    : mean(n, Vec3::Zero()), rotation(n, Quat::Zero()), log_scale(n, Vec3::Zero()), opacity_logit(n, 0.0),
      color(n, Vec3::Zero()) {}

Eigen::VectorXd CloudGrad::pack(CloudGroup g) const {
    const std::size_t n = mean.size();
    Eigen::VectorXd flat(static_cast<Eigen::Index>(n) * group_width(g));
    for_each_slot(n, g, [&](std::size_t i, Eigen::Index o) {
        switch (g) {
        case CloudGroup::Means: flat.segment<3>(o) = mean[i]; break;
        case CloudGroup::Rotations: flat.segment<4>(o) = rotation[i]; break;
        case CloudGroup::LogScales: flat.segment<3>(o) = log_scale[i]; break;
        case CloudGroup::Opacity: flat[o] = opacity_logit[i]; break;
        case CloudGroup::Colors: flat.segment<3>(o) = color[i]; break;
        }
    });
    return flat;
}

} // namespace occsplat
