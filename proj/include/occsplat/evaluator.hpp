#pragma once

#include "occsplat/image.hpp"
#include "occsplat/synth.hpp"

#include <limits>
#include <string>
#include <vector>

namespace occsplat {

struct TrainState;
struct TrainConfig;

/// psnr() of identical images; written as "inf" in reports.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();
/// ρ when a frame's visible-subject mean is zero but its occluded mean is not.
inline constexpr double kRhoCap = 1e6;
/// ρ when no frame has occluded subject pixels.
inline constexpr double kRhoUndefined = -1.0;

double mse(const Image& a, const Image& b);
/// 10·log10(1/MSE); kPsnrIdentical when MSE is zero.
double psnr(const Image& a, const Image& b);
/// PSNR over pixels with mask > 0.5, pooled over all frames; NaN when no
/// pixel is selected.
double masked_psnr(const std::vector<Image>& a, const std::vector<Image>& b, const std::vector<Image>& masks);

/// Per-frame mean(Û | occ ∧ subject) / mean(Û | subject ∧ ¬occ), averaged over
/// frames with occluded subject pixels. Frames with no visible subject pixels
/// are skipped.
double uncertainty_localization(const std::vector<Image>& uncertainty, const std::vector<Image>& occ_masks,
                                const std::vector<Image>& subject_masks);

/// Binary Ô > 0.5 mask.
Image subject_mask(const Image& opacity);

struct ProbeStability {
    int gaussian = -1;
    int visible_frames = 0;
    /// Channel-summed variance of (model − GT) color at the probe's projected
    /// mean; NaN when the probe is visible in fewer than two frames.
    double variance = std::numeric_limits<double>::quiet_NaN();
};

struct StabilityReport {
    std::vector<ProbeStability> probes;
    double mean_variance = std::numeric_limits<double>::quiet_NaN();
    int skipped = 0;
};

/// Evenly spaced GT Gaussian indices.
std::vector<int> choose_probes(const Dataset& ds, int count);

/// `model_frames[t]` is the model's training-view color at frame t. A probe
/// counts at frame t when it contributes at least 10% of the GT color at its
/// projected pixel.
StabilityReport temporal_color_stability(const Dataset& ds, const std::vector<Image>& model_frames,
                                         const std::vector<int>& probes);

struct MetricsReport {
    std::string label;
    std::vector<double> holdout_psnr_frames;
    double holdout_psnr = 0.0;
    double holdout_ssim = 0.0;
    double train_psnr = 0.0;
    double train_ssim = 0.0;
    double occluded_psnr = std::numeric_limits<double>::quiet_NaN();
    double rho = kRhoUndefined;
    double temporal_variance = std::numeric_limits<double>::quiet_NaN();
};

/// Renders the trained state on every frame of the training and hold-out
/// cameras and scores it against clean ground truth.
MetricsReport evaluate_state(const TrainState& state, const Dataset& ds, const TrainConfig& cfg,
                             const std::string& label, int probes = 24);

/// Formats a metric value; infinities become "inf", NaN becomes empty.
std::string format_metric(double v);

std::string report_csv_header();
std::string report_csv_row(const MetricsReport& r);

/// One row per report plus delta rows against the first report.
std::string ablation_table(const std::vector<MetricsReport>& runs);

} // namespace occsplat
