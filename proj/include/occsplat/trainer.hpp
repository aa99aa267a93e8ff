#pragma once

#include "occsplat/cloud.hpp"
#include "occsplat/deformation_net.hpp"
#include "occsplat/io.hpp"
#include "occsplat/losses.hpp"
#include "occsplat/optimizer.hpp"
#include "occsplat/pipeline.hpp"
#include "occsplat/synth.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace occsplat {

struct LearningRates {
    double means_init = 1.6e-4;
    double means_final = 1.6e-6;
    double rotation = 1e-3;
    double log_scale = 5e-3;
    double opacity = 5e-2;
    double color = 2.5e-3;
    double net = 1.6e-4;
};

struct TrainConfig {
    Mode mode = Mode::D;
    int iterations = 10000;
    /// Iterations run with the photometric (mode A) objective and the σ pass off.
    int warmup = 2000;
    AdamSettings adam;
    LearningRates lr;
    std::uint64_t seed = 1;
    bool deterministic = true;
    /// Average Gaussians per bone at initialization (allocated by capsule area).
    int init_per_bone = 84;
    double init_opacity = 0.1;
    /// Timestamps per step for the temporal term.
    int temporal_samples = 2;
    /// Mode A evaluates the network too (σ pass still off).
    bool baseline_uses_net = false;
    /// Opacity pruning threshold after warmup; 0 disables.
    double prune_opacity = 0.0;
    int prune_interval = 1000;
    DeformationNetConfig net;
    LossWeights loss;

    /// Throws InvalidInput; also enforces warmup < iterations and positive rates.
    void validate() const;
};

/// Everything that evolves during training.
struct TrainState {
    GaussianCloud cloud;
    DeformationNet net;
    /// Groups in kCloudGroups order, then "net".
    std::vector<AdamGroup> adam;
    std::mt19937_64 rng;
    int iteration = 0;
    KnnGraph graph;
};

struct StepReport {
    int iteration = 0;
    Mode mode = Mode::A;
    int frame = 0;
    LossTerms terms;
    double total = 0.0;
    double psnr_train = 0.0;
};

/// Samples Gaussians on bone capsules in the bind pose: the per-bone count is
/// n_per_bone · J split in proportion to capsule area, each bone getting at
/// least one. Scales start isotropic at the mean distance to the three nearest
/// neighbours.
GaussianCloud init_cloud(const Skeleton& skel, int n_per_bone, std::mt19937_64& rng, double opacity = 0.1);

/// Mode in effect at `iteration` (A during warmup).
Mode active_mode(const TrainConfig& cfg, int iteration);

/// Options used for the forward pass at `iteration`.
PipelineOptions step_options(const TrainConfig& cfg, const Dataset& ds, int iteration);

TrainState init_state(const TrainConfig& cfg, const Dataset& ds);

/// One optimizer step on one uniformly sampled frame. Throws Fault when the
/// loss or any parameter becomes non-finite.
StepReport train_step(TrainState& state, const Dataset& ds, const TrainConfig& cfg);

/// Trains until state.iteration reaches cfg.iterations. `on_step` (optional)
/// sees every report.
void train(TrainState& state, const Dataset& ds, const TrainConfig& cfg,
           const std::function<void(const StepReport&, const TrainState&)>& on_step = {});

/// Header plus one row per report in the fixed metrics column order.
std::string metrics_header();
std::string metrics_row(const StepReport& r);

TensorFile state_to_file(const TrainState& state, const std::string& config_hash);
/// Rebuilds a state; `cfg` must match the one the file was written with.
TrainState state_from_file(const TensorFile& file, const TrainConfig& cfg);

/// Forward pass of a trained state for any frame and camera (no gradients).
ForwardState render_state(const TrainState& state, const Dataset& ds, const TrainConfig& cfg, int frame,
                          const Camera& cam);

} // namespace occsplat
