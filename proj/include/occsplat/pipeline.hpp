#pragma once

#include "occsplat/cloud.hpp"
#include "occsplat/deformation_net.hpp"
#include "occsplat/render.hpp"
#include "occsplat/skeleton.hpp"

#include <optional>
#include <vector>

namespace occsplat {

enum class Mode { A, B, C, D };

char mode_letter(Mode m);
/// Parses "A".."D" (case-insensitive); throws InvalidInput otherwise.
Mode parse_mode(const std::string& s);

struct PipelineOptions {
    /// Evaluate the deformation network (otherwise the canonical cloud is
    /// skinned directly).
    bool use_net = true;
    /// Feed the network's σ into the uncertainty pass; when false every splat
    /// carries σ = 0 and the σ head receives no gradient.
    bool render_sigma = true;
    ProjectionParams projection;
    RasterConfig raster;
};

/// Options matching a training mode: mode A skips the network and the σ pass.
PipelineOptions options_for_mode(Mode m, const RasterConfig& raster = {});

/// Everything one frame's forward pass produces and its backward pass reads.
struct ForwardState {
    RowMatrix net_raw;
    NetCache net_cache;
    std::vector<DeformationOutput> deform;
    std::vector<Gaussian3D> deformed;
    std::vector<LbsResult> lbs;
    std::vector<Vec3> mean_obs;
    std::vector<Covariance3D> cov_obs;
    std::vector<Splat> splats;
    /// Splat index of each Gaussian, −1 when culled.
    std::vector<int> splat_of;
    Camera camera;
    PipelineOptions options;
    RenderOutput render;
};

/// Canonical cloud → network offsets → LBS → projection → rasterization.
/// `net` may be null when options.use_net is false.
ForwardState full_forward(const GaussianCloud& cloud, const DeformationNet* net, const Skeleton& skel,
                          const PoseFrame& pose, double t_norm, const Camera& cam, const PipelineOptions& opt);

/// Net-only evaluation of the raw head for every Gaussian at one timestamp.
RowMatrix evaluate_net(const GaussianCloud& cloud, const DeformationNet& net, const PoseFrame& pose, double t_norm,
                       NetCache* cache);

struct PipelineGrad {
    CloudGrad cloud;
    /// dL/d(raw head) per Gaussian (N × HeadLayout::kSize).
    RowMatrix head;
    /// dL/dψ, same layout as DeformationNet::params().
    Eigen::VectorXd net;
};

/// Backpropagates image-space gradients to the canonical cloud and, through
/// the network's head, to its parameters. `extra_head` (may be null) is added
/// to the head gradient before the network backward, which lets regularizers
/// that read the same forward pass share one network backward. Canonical
/// means receive no gradient through the network input unless
/// `stop_gradient_means` is false (used only to test the contract).
PipelineGrad full_backward(const GaussianCloud& cloud, const DeformationNet* net, const ForwardState& fwd,
                           const Image* dL_dcolor, const Image* dL_duncertainty, const Image* dL_dopacity,
                           const RowMatrix* extra_head = nullptr, bool stop_gradient_means = true);

} // namespace occsplat
