#include "occsplat/synth.hpp"

#include "occsplat/errors.hpp"
#include "occsplat/parallel.hpp"
#include "occsplat/pipeline.hpp"
#include "occsplat/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace occsplat {

namespace {

constexpr double kPi = std::numbers::pi;

Quat rot(const Vec3& axis, double angle) { return quat_from_axis_angle(axis, angle); }

// Orthonormal frame around a bone direction.
std::pair<Vec3, Vec3> bone_frame(const Vec3& dir) {
    const Vec3 helper = std::abs(dir.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
    const Vec3 e1 = dir.cross(helper).normalized();
    return {e1, dir.cross(e1)};
}

Vec3 surface_color(const std::string& bone, double u, double angle, const Vec3& p) {
    const Vec3 navy(0.15, 0.2, 0.55);
    const Vec3 slate(0.35, 0.4, 0.7);
    const Vec3 red(0.85, 0.25, 0.2);
    const Vec3 yellow(0.95, 0.8, 0.3);
    const Vec3 skin(0.9, 0.68, 0.52);
    const Vec3 teal(0.2, 0.6, 0.6);
    if (bone == "pelvis") {
        const int sector = static_cast<int>(std::floor(4.0 * angle / (2.0 * kPi))) % 4;
        return sector % 2 == 0 ? navy : slate;
    }
    if (bone == "spine") {
        // Marking on the figure's left chest (+x), front side (−z) only.
        if (p.x() > 0.03 && p.x() < 0.16 && p.z() < 0.0 && u > 0.45 && u < 0.85) {
            return Vec3(0.08, 0.08, 0.1);
        }
        return static_cast<int>(std::floor(u * 4.0)) % 2 == 0 ? red : yellow;
    }
    if (bone.ends_with("upper")) {
        return u < 0.5 ? teal : Vec3(0.9, 0.9, 0.88);
    }
    return static_cast<int>(std::floor(u * 3.0)) % 2 == 0 ? skin : Vec3(0.6, 0.42, 0.3);
}

} // namespace

const char* pattern_name(OcclusionPattern p) {
    switch (p) {
    case OcclusionPattern::CenterRectangle:
        return "center-rectangle";
    case OcclusionPattern::MovingBar:
        return "moving-bar";
    case OcclusionPattern::RandomPatches:
        return "random-patches";
    }
    return "?";
}

OcclusionPattern parse_pattern(const std::string& s) {
    for (auto p : {OcclusionPattern::CenterRectangle, OcclusionPattern::MovingBar, OcclusionPattern::RandomPatches}) {
        if (s == pattern_name(p)) {
            return p;
        }
    }
    throw InvalidInput("unknown occlusion pattern '" + s + "'");
}

const char* fill_name(OccluderFill f) { return f == OccluderFill::Solid ? "solid" : "noise"; }

OccluderFill parse_fill(const std::string& s) {
    if (s == "solid") {
        return OccluderFill::Solid;
    }
    if (s == "noise") {
        return OccluderFill::Noise;
    }
    throw InvalidInput("unknown occluder fill '" + s + "'");
}

void OcclusionSpec::validate() const {
    if (!(coverage >= 0.0 && coverage <= 1.0)) {
        throw InvalidInput("occlusion coverage must lie in [0, 1]");
    }
    if (!(affected_fraction >= 0.0 && affected_fraction <= 1.0)) {
        throw InvalidInput("occlusion affected fraction must lie in [0, 1]");
    }
    if ((color.array() < 0.0).any() || (color.array() > 1.0).any() || !(noise_amplitude >= 0.0)) {
        throw InvalidInput("occluder color must lie in [0, 1]");
    }
}

int OcclusionSpec::affected_frames(int frames) const {
    return static_cast<int>(std::lround(affected_fraction * frames));
}

void SceneSpec::validate() const {
    if (height < 8 || width < 8) {
        throw InvalidInput("scene images must be at least 8×8");
    }
    if (frames < 1 || frame_interval < 1) {
        throw InvalidInput("scene needs at least one frame and a positive frame interval");
    }
    if (!(focal > 0.0) || !(camera_distance > 0.5)) {
        throw InvalidInput("camera focal length and distance must be positive");
    }
    if (holdout_views < 0 || gt_gaussians < 1 || bind_rings < 1 || bind_per_ring < 3) {
        throw InvalidInput("invalid hold-out, Gaussian or bind-vertex count");
    }
    if (!std::isfinite(motion_amplitude)) {
        throw InvalidInput("motion amplitude must be finite");
    }
    occlusion.validate();
}

Skeleton make_figure_skeleton(const SceneSpec& spec) {
    Skeleton s;
    auto add = [&](const char* name, int parent, Vec3 offset, Vec3 tail, double radius) {
        s.joints.push_back(Joint{name, parent, offset, tail, radius});
    };
    add("pelvis", -1, Vec3::Zero(), Vec3(0, -0.45, 0), 0.15);
    add("spine", 0, Vec3::Zero(), Vec3(0, 0.35, 0), 0.17);
    add("l_upper", 1, Vec3(0.18, 0.3, 0), Vec3(0.3, 0, 0), 0.07);
    add("l_lower", 2, Vec3(0.3, 0, 0), Vec3(0.28, 0, 0), 0.06);
    add("r_upper", 1, Vec3(-0.18, 0.3, 0), Vec3(-0.3, 0, 0), 0.07);
    add("r_lower", 4, Vec3(-0.3, 0, 0), Vec3(-0.28, 0, 0), 0.06);
    generate_bind_vertices(s, spec.bind_rings, spec.bind_per_ring);
    s.validate();
    return s;
}

std::vector<PoseFrame> motion_script(const Skeleton& skel, const SceneSpec& spec) {
    if (skel.num_joints() != 6) {
        throw InvalidInput("motion script expects the six-joint desk figure");
    }
    const double a = spec.motion_amplitude;
    const double period = 30.0;
    std::vector<PoseFrame> poses;
    for (int t = 0; t < spec.frames; ++t) {
        const double ph = 2.0 * kPi * (t * spec.frame_interval) / period;
        PoseFrame p = PoseFrame::identity(6, t);
        p.root_translation = Vec3(0.03 * std::sin(ph), 0.02 * std::sin(2 * ph), 0.0);
        p.joint_rotations[0] = rot(Vec3::UnitY(), 0.5 * a * std::sin(ph));
        p.joint_rotations[1] =
            quat_multiply(rot(Vec3::UnitY(), 0.3 * a * std::sin(ph)), rot(Vec3::UnitZ(), 0.25 * a * std::sin(ph + 0.7)));
        p.joint_rotations[2] = rot(Vec3::UnitZ(), a * (0.5 + 0.5 * std::sin(ph)));
        p.joint_rotations[3] = rot(Vec3::UnitZ(), a * (0.6 + 0.6 * std::sin(2 * ph + 1.0)));
        p.joint_rotations[4] = quat_multiply(rot(Vec3::UnitX(), 0.5 * a * std::sin(ph)),
                                             rot(Vec3::UnitZ(), -a * (0.4 + 0.4 * std::cos(ph))));
        p.joint_rotations[5] = rot(Vec3::UnitY(), a * (0.5 + 0.5 * std::sin(ph + 2.0)));
        poses.push_back(p);
    }
    return poses;
}

GaussianCloud make_figure_cloud(const Skeleton& skel, const SceneSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, 1));
    const auto heads = skel.bind_heads();
    const auto tails = skel.bind_tails();
    const int nj = skel.num_joints();

    std::vector<double> area(static_cast<std::size_t>(nj));
    double total = 0.0;
    for (int j = 0; j < nj; ++j) {
        area[j] = 2.0 * kPi * skel.joints[j].radius * (tails[j] - heads[j]).norm();
        total += area[j];
    }
    std::vector<int> count(static_cast<std::size_t>(nj));
    int assigned = 0;
    for (int j = 0; j < nj; ++j) {
        count[j] = std::max(1, static_cast<int>(std::floor(spec.gt_gaussians * area[j] / total)));
        assigned += count[j];
    }
    for (int j = 0; assigned < spec.gt_gaussians; j = (j + 1) % nj, ++assigned) {
        ++count[j];
    }

    GaussianCloud cloud;
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int j = 0; j < nj; ++j) {
        const Vec3 axis = tails[j] - heads[j];
        const double len = axis.norm();
        const Vec3 dir = axis / len;
        const auto [e1, e2] = bone_frame(dir);
        const double r = skel.joints[j].radius;
        const double spacing = std::sqrt(area[j] / count[j]);
        const double phase = 2.0 * kPi * uniform01(rng);
        for (int i = 0; i < count[j]; ++i) {
            const double u = (i + 0.25 + 0.5 * uniform01(rng)) / count[j];
            const double ang = std::fmod(phase + i * golden, 2.0 * kPi);
            const Vec3 normal = std::cos(ang) * e1 + std::sin(ang) * e2;
            Gaussian3D g;
            g.mean = heads[j] + u * axis + r * normal;
            Mat3 frame;
            frame.col(0) = dir;
            frame.col(1) = normal.cross(dir);
            frame.col(2) = normal;
            g.rotation = matrix_to_quat(frame);
            g.log_scale = Vec3(std::log(0.6 * spacing), std::log(0.6 * spacing), std::log(0.2 * spacing));
            g.opacity_logit = logit(0.95);
            g.color = surface_color(skel.joints[j].name, u, ang, g.mean);
            g.bind_vertex = nearest_bind_vertex(skel, g.mean);
            cloud.gaussians.push_back(g);
        }
    }
    return cloud;
}

namespace {

Camera ring_camera(const SceneSpec& spec, double azimuth) {
    const Vec3 eye(spec.camera_distance * std::sin(azimuth), 0.0, -spec.camera_distance * std::cos(azimuth));
    Pinhole k{spec.focal, spec.focal, 0.5 * (spec.width - 1), 0.5 * (spec.height - 1)};
    return Camera::look_at(eye, Vec3::Zero(), Vec3::UnitY(), k, spec.height, spec.width);
}

} // namespace

Camera training_camera(const SceneSpec& spec) { return ring_camera(spec, 0.0); }

std::vector<Camera> hold_out_views(const SceneSpec& spec) {
    std::vector<Camera> cams{training_camera(spec)};
    for (int v = 1; v <= spec.holdout_views; ++v) {
        cams.push_back(ring_camera(spec, kPi * v / (spec.holdout_views + 1)));
    }
    return cams;
}

PixelBox subject_bbox(const Image& opacity) {
    PixelBox b{opacity.width, opacity.height, 0, 0};
    for (int y = 0; y < opacity.height; ++y) {
        for (int x = 0; x < opacity.width; ++x) {
            if (opacity.at(y, x) > 0.5) {
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x + 1);
                b.y1 = std::max(b.y1, y + 1);
            }
        }
    }
    if (b.empty()) {
        return PixelBox{};
    }
    return b;
}

Image occlusion_mask(const OcclusionSpec& spec, const PixelBox& bbox, int height, int width, int frame, int frames,
                     std::uint64_t rng_seed) {
    Image mask(height, width, 1, 0.0);
    if (bbox.empty() || spec.coverage <= 0.0) {
        return mask;
    }
    auto fill = [&](int x0, int y0, int x1, int y1) {
        for (int y = std::max(0, y0); y < std::min(height, y1); ++y) {
            for (int x = std::max(0, x0); x < std::min(width, x1); ++x) {
                mask.at(y, x) = 1.0;
            }
        }
    };
    const int bw = bbox.width();
    const int bh = bbox.height();
    const double target = spec.coverage * bw * bh;
    switch (spec.pattern) {
    case OcclusionPattern::CenterRectangle: {
        // Integer rectangle closest in area to the target, then closest in aspect.
        int best_w = 0, best_h = 0;
        double best_err = 1e300, best_aspect = 1e300;
        const double aspect = static_cast<double>(bw) / bh;
        for (int w = 1; w <= bw; ++w) {
            for (int h = 1; h <= bh; ++h) {
                const double err = std::abs(w * h - target);
                const double asp = std::abs(std::log(static_cast<double>(w) / h / aspect));
                if (err < best_err - 1e-9 || (std::abs(err - best_err) <= 1e-9 && asp < best_aspect)) {
                    best_err = err;
                    best_aspect = asp;
                    best_w = w;
                    best_h = h;
                }
            }
        }
        const int x0 = bbox.x0 + (bw - best_w) / 2;
        const int y0 = bbox.y0 + (bh - best_h) / 2;
        fill(x0, y0, x0 + best_w, y0 + best_h);
        break;
    }
    case OcclusionPattern::MovingBar: {
        const int w = std::clamp(static_cast<int>(std::lround(spec.coverage * bw)), 1, bw);
        const double s = frames > 1 ? static_cast<double>(frame) / (frames - 1) : 0.0;
        const int x0 = bbox.x0 + static_cast<int>(std::lround(s * (bw - w)));
        fill(x0, bbox.y0, x0 + w, bbox.y1);
        break;
    }
    case OcclusionPattern::RandomPatches: {
        std::mt19937_64 rng(mix_seed(rng_seed, 1000 + static_cast<std::uint64_t>(frame)));
        const int side = std::max(2, static_cast<int>(std::lround(0.2 * std::min(bw, bh))));
        long covered = 0;
        for (int guard = 0; covered < target && guard < 10000; ++guard) {
            const int x0 = bbox.x0 + static_cast<int>(uniform01(rng) * std::max(1, bw - side + 1));
            const int y0 = bbox.y0 + static_cast<int>(uniform01(rng) * std::max(1, bh - side + 1));
            fill(x0, y0, x0 + side, y0 + side);
            covered = 0;
            for (int y = bbox.y0; y < bbox.y1; ++y) {
                for (int x = bbox.x0; x < bbox.x1; ++x) {
                    covered += mask.at(y, x) > 0.5;
                }
            }
        }
        break;
    }
    }
    return mask;
}

double Dataset::t_norm(int frame) const { return frames() > 1 ? static_cast<double>(frame) / (frames() - 1) : 0.0; }

Image quantize(const Image& img) {
    Image out = img;
    for (double& v : out.data) {
        v = std::round(255.0 * std::clamp(v, 0.0, 1.0)) / 255.0;
    }
    return out;
}

RenderOutput render_ground_truth(const Dataset& ds, int frame, const Camera& cam) {
    if (frame < 0 || frame >= ds.frames()) {
        throw InvalidInput("frame index " + std::to_string(frame) + " out of range");
    }
    RasterConfig raster;
    raster.background = ds.spec.background;
    const auto fwd = full_forward(ds.gt_cloud, nullptr, ds.skeleton, ds.poses[static_cast<std::size_t>(frame)],
                                  ds.t_norm(frame), cam, options_for_mode(Mode::A, raster));
    RenderOutput out = fwd.render;
    out.color = quantize(out.color);
    return out;
}

Dataset generate_sequence(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.skeleton = make_figure_skeleton(spec);
    ds.poses = motion_script(ds.skeleton, spec);
    ds.cameras = hold_out_views(spec);
    ds.gt_cloud = make_figure_cloud(ds.skeleton, spec, seed);

    const int T = spec.frames;
    const int affected = spec.occlusion.affected_frames(T);
    ds.clean.resize(T);
    ds.occluded.resize(T);
    ds.occ_mask.resize(T);
    ds.skel_mask.resize(T);
    ds.holdout.assign(static_cast<std::size_t>(spec.holdout_views), std::vector<Image>(T));

    std::vector<double> mask_radii;
    for (const auto& j : ds.skeleton.joints) {
        mask_radii.push_back(j.radius * 1.15);
    }

    parallel_for(T, [&](int t) {
        const RenderOutput r = render_ground_truth(ds, t, ds.cameras[0]);
        ds.clean[t] = r.color;
        ds.skel_mask[t] = render_skeleton_mask(ds.skeleton, ds.poses[t], ds.cameras[0], mask_radii);
        Image mask(spec.height, spec.width, 1, 0.0);
        if (t < affected) {
            mask = occlusion_mask(spec.occlusion, subject_bbox(r.opacity), spec.height, spec.width, t, affected, seed);
        }
        ds.occ_mask[t] = mask;
        Image occ = r.color;
        std::mt19937_64 rng(mix_seed(seed, 5000 + static_cast<std::uint64_t>(t)));
        for (int y = 0; y < spec.height; ++y) {
            for (int x = 0; x < spec.width; ++x) {
                if (mask.at(y, x) < 0.5) {
                    continue;
                }
                for (int c = 0; c < 3; ++c) {
                    double v = spec.occlusion.color[c];
                    if (spec.occlusion.fill == OccluderFill::Noise) {
                        v += spec.occlusion.noise_amplitude * (2.0 * uniform01(rng) - 1.0);
                    }
                    occ.at(y, x, c) = v;
                }
            }
        }
        ds.occluded[t] = quantize(occ);
        for (int v = 0; v < spec.holdout_views; ++v) {
            ds.holdout[v][t] = render_ground_truth(ds, t, ds.cameras[v + 1]).color;
        }
    });
    return ds;
}

} // namespace occsplat
