#pragma once

#include "occsplat/cloud.hpp"
#include "occsplat/image.hpp"
#include "occsplat/render.hpp"
#include "occsplat/skeleton.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace occsplat {

enum class OcclusionPattern { CenterRectangle, MovingBar, RandomPatches };

const char* pattern_name(OcclusionPattern p);
OcclusionPattern parse_pattern(const std::string& s);

enum class OccluderFill { Solid, Noise };

const char* fill_name(OccluderFill f);
OccluderFill parse_fill(const std::string& s);

struct OcclusionSpec {
    OcclusionPattern pattern = OcclusionPattern::CenterRectangle;
    /// Fraction of the subject bounding box covered per affected frame.
    double coverage = 0.0;
    /// Leading fraction of frames that carry an occluder.
    double affected_fraction = 0.0;
    Vec3 color = Vec3::Zero();
    /// Noise fills draw a per-pixel color around `color` with this amplitude.
    OccluderFill fill = OccluderFill::Solid;
    double noise_amplitude = 0.3;

    void validate() const;
    /// Number of leading frames that receive an occluder.
    int affected_frames(int frames) const;
};

struct SceneSpec {
    int height = 64;
    int width = 64;
    int frames = 30;
    /// Stored frame interval (1 keeps every generated frame).
    int frame_interval = 1;
    double focal = 80.0;
    double camera_distance = 3.0;
    /// Extra cameras on the ring at 45°, 90°, ... azimuth from the training view.
    int holdout_views = 3;
    int gt_gaussians = 300;
    /// Bind vertices per bone: rings × per_ring.
    int bind_rings = 4;
    int bind_per_ring = 8;
    /// Peak joint swing of the motion script, radians.
    double motion_amplitude = 0.6;
    Vec3 background = Vec3::Zero();
    OcclusionSpec occlusion;

    void validate() const;
};

/// The articulated desk figure (pelvis, spine, two two-bone arms) with bind
/// vertices and skinning weights.
Skeleton make_figure_skeleton(const SceneSpec& spec);

/// Scripted poses for frames 0..T−1: periodic waving, elbow bending and a
/// slow torso twist. Deterministic, seed-free.
std::vector<PoseFrame> motion_script(const Skeleton& skel, const SceneSpec& spec);

/// Ground-truth textured Gaussian figure on the bone capsules. Colors form
/// bands and patches plus a marking on the left chest only.
GaussianCloud make_figure_cloud(const Skeleton& skel, const SceneSpec& spec, std::uint64_t seed);

Camera training_camera(const SceneSpec& spec);

/// Training camera followed by spec.holdout_views cameras on the same ring,
/// spaced 180°/(n+1) apart in azimuth, all aimed at the root.
std::vector<Camera> hold_out_views(const SceneSpec& spec);

/// Integer-pixel box, half-open [x0, x1) × [y0, y1).
struct PixelBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long area() const { return static_cast<long>(width()) * height(); }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
};

/// Bounding box of pixels where opacity > 0.5.
PixelBox subject_bbox(const Image& opacity);

/// Binary occluder mask for one affected frame; `frame`/`frames` position the
/// moving bar, `rng_seed` seeds the random patches.
Image occlusion_mask(const OcclusionSpec& spec, const PixelBox& bbox, int height, int width, int frame, int frames,
                     std::uint64_t rng_seed);

struct Dataset {
    SceneSpec spec;
    std::uint64_t seed = 0;
    Skeleton skeleton;
    std::vector<PoseFrame> poses;
    /// cameras[0] is the training view; the rest are hold-out views.
    std::vector<Camera> cameras;
    GaussianCloud gt_cloud;
    std::vector<Image> clean;
    std::vector<Image> occluded;
    std::vector<Image> occ_mask;
    std::vector<Image> skel_mask;
    /// holdout[v][t]: clean render of frame t from cameras[v + 1].
    std::vector<std::vector<Image>> holdout;

    int frames() const { return static_cast<int>(poses.size()); }
    double t_norm(int frame) const;
};

/// Maps a float image onto the 8-bit grid, round(255·clamp(x, 0, 1)) / 255.
Image quantize(const Image& img);

/// Renders the ground-truth figure at one frame from `cam` (quantized).
RenderOutput render_ground_truth(const Dataset& ds, int frame, const Camera& cam);

Dataset generate_sequence(const SceneSpec& spec, std::uint64_t seed);

} // namespace occsplat
