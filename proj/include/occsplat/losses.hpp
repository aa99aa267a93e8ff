#pragma once

#include "occsplat/deformation_net.hpp"
#include "occsplat/image.hpp"
#include "occsplat/pipeline.hpp"

#include <limits>
#include <vector>

namespace occsplat {

struct LossWeights {
    double lambda_reg = 1.0;
    double lambda_rot = 0.5;
    double lambda_scl = 0.5;
    double lambda_spa = 0.01;
    double lambda_temp = 0.01;
    double lambda_mask = 0.1;
    double lambda_ssim = 0.01;
    /// Carried for completeness; no perceptual network exists, so it has no effect.
    double lambda_lpips = 0.01;
    double eps = 1e-7;
    int frame_interval = 5;
    int knn = 5;

    void validate() const;
};

/// Scalar loss plus the gradient w.r.t. the image it was differentiated against.
struct ImageLoss {
    double value = 0.0;
    Image grad;
};

/// Mean over pixels of the channel-summed absolute residual; gradient w.r.t. pred.
ImageLoss l1_loss(const Image& gt, const Image& pred);

struct NllResult {
    double value = 0.0;
    Image d_color;
    Image d_uncertainty;
};

/// Mean over pixels of ‖gt − pred‖₁/(U + ε) + λ_reg·log(U + ε).
NllResult nll_loss(const Image& gt, const Image& pred, const Image& uncertainty, const LossWeights& w);

/// Per-pixel NLL term and its derivative in U for a fixed L1 residual r.
double nll_pixel(double r, double u, double lambda_reg, double eps);
double nll_pixel_du(double r, double u, double lambda_reg, double eps);

/// Mean squared difference; gradient w.r.t. the accumulated opacity.
ImageLoss mask_loss(const Image& opacity, const Image& mask);

/// 1 − mean SSIM; gradient w.r.t. pred.
ImageLoss ssim_loss(const Image& pred, const Image& gt);

/// Frozen canonical-space neighbour graph with row-stochastic weights.
struct KnnGraph {
    int k = 0;
    std::vector<std::vector<int>> neighbors;
    std::vector<std::vector<double>> weights;
};

/// K nearest neighbours (excluding self) weighted by normalized inverse distance.
KnnGraph build_knn_graph(const std::vector<Vec3>& points, int k);

struct HeadLoss {
    double value = 0.0;
    /// dL/d(raw head), N × HeadLayout::kSize; the σ column is always zero.
    RowMatrix d_head;
};

/// Confidence-weighted spatial consistency on the raw head outputs. `sigma`
/// only weights the terms and receives no gradient.
HeadLoss spatial_loss(const RowMatrix& head, const std::vector<double>& sigma, const KnnGraph& graph,
                      const LossWeights& w);

/// Head outputs at t−k, t, t+k and the (gradient-stopped) σ at t.
struct TemporalSample {
    RowMatrix prev;
    RowMatrix cur;
    RowMatrix next;
    std::vector<double> sigma;
};

struct TemporalLoss {
    double value = 0.0;
    std::vector<RowMatrix> d_prev, d_cur, d_next;
};

/// Uncertainty-weighted second difference of the 10-vector (Δμ, Δr_raw, Δs),
/// averaged over Gaussians and samples. An empty sample set yields 0 and a
/// warning.
TemporalLoss temporal_loss(const std::vector<TemporalSample>& samples, const LossWeights& w);

/// Per-component values of one step; NaN marks a component that is inactive.
struct LossTerms {
    static constexpr double kNone = std::numeric_limits<double>::quiet_NaN();
    double l1 = kNone;
    double nll = kNone;
    double spa = kNone;
    double temp = kNone;
    double mask = kNone;
    double ssim = kNone;
};

/// Weighted objective of `mode`: A = L1 + λ_mask·mask + λ_ssim·ssim; B replaces
/// L1 by NLL; C adds λ_spa·spa; D adds λ_temp·temp.
double total_loss(const LossTerms& t, Mode mode, const LossWeights& w);

struct ImageObjective {
    LossTerms terms;
    double value = 0.0;
    Image d_color;
    Image d_uncertainty;
    Image d_opacity;
};

/// The rendered-image part of the objective (photometric, mask, SSIM) with
/// its gradients on color, Û and Ô.
ImageObjective image_objective(const RenderOutput& render, const Image& gt, const Image& skel_mask, Mode mode,
                               const LossWeights& w);

} // namespace occsplat
