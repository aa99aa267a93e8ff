#include "occsplat/errors.hpp"
#include "occsplat/synth.hpp"

#include <gtest/gtest.h>

using namespace occsplat;

namespace {

SceneSpec small_spec(int frames = 10) {
    SceneSpec s;
    s.frames = frames;
    s.holdout_views = 2;
    return s;
}

double mask_sum(const Image& m) {
    double s = 0.0;
    for (double v : m.data) {
        s += v;
    }
    return s;
}

} // namespace

TEST(Synth, ZeroCoverageLeavesFramesClean) {
    const Dataset ds = generate_sequence(small_spec(), 4);
    for (int t = 0; t < ds.frames(); ++t) {
        EXPECT_EQ(ds.occluded[t].data, ds.clean[t].data);
        EXPECT_EQ(mask_sum(ds.occ_mask[t]), 0.0);
    }
}

TEST(Synth, BenchmarkProtocolFrameCount) {
    OcclusionSpec o;
    o.coverage = 0.5;
    o.affected_fraction = 0.8;
    EXPECT_EQ(o.affected_frames(100), 80);
    EXPECT_EQ(o.affected_frames(30), 24);
}

TEST(Synth, CenterRectangleCoversHalfTheBox) {
    SceneSpec s = small_spec(30);
    s.occlusion.coverage = 0.5;
    s.occlusion.affected_fraction = 0.8;
    const Dataset ds = generate_sequence(s, 2);
    for (int t = 0; t < ds.frames(); ++t) {
        const double area = mask_sum(ds.occ_mask[t]);
        if (t >= 24) {
            EXPECT_EQ(area, 0.0) << "frame " << t;
            EXPECT_EQ(ds.occluded[t].data, ds.clean[t].data);
            continue;
        }
        const PixelBox box = subject_bbox(render_ground_truth(ds, t, ds.cameras[0]).opacity);
        EXPECT_NEAR(area / static_cast<double>(box.area()), 0.5, 0.02) << "frame " << t;
        for (std::size_t p = 0; p < ds.occ_mask[t].pixels(); ++p) {
            if (ds.occ_mask[t].data[p] == 0.0) {
                for (int c = 0; c < 3; ++c) {
                    ASSERT_EQ(ds.occluded[t].data[3 * p + c], ds.clean[t].data[3 * p + c]);
                }
            }
        }
    }
}

TEST(Synth, GroundTruthRenderReproducesCleanFrames) {
    const Dataset ds = generate_sequence(small_spec(), 9);
    for (int t = 0; t < ds.frames(); ++t) {
        EXPECT_EQ(quantize(render_ground_truth(ds, t, ds.cameras[0]).color).data, ds.clean[t].data);
    }
    EXPECT_THROW(render_ground_truth(ds, ds.frames(), ds.cameras[0]), InvalidInput);
}

TEST(Synth, HoldOutCamerasAimAtRoot) {
    SceneSpec s = small_spec();
    s.holdout_views = 5;
    const auto cams = hold_out_views(s);
    ASSERT_EQ(cams.size(), 6U);
    for (const auto& c : cams) {
        const Vec3 p = c.to_camera(Vec3::Zero());
        EXPECT_NEAR(p.x(), 0.0, 1e-6);
        EXPECT_NEAR(p.y(), 0.0, 1e-6);
        EXPECT_NEAR(p.z(), s.camera_distance, 1e-9);
        EXPECT_NEAR(c.center().norm(), s.camera_distance, 1e-9);
    }
    EXPECT_NEAR((cams[0].center() - training_camera(s).center()).norm(), 0.0, 1e-12);
}

TEST(Synth, DeterministicUnderSeed) {
    SceneSpec s = small_spec();
    s.occlusion.pattern = OcclusionPattern::RandomPatches;
    s.occlusion.coverage = 0.3;
    s.occlusion.affected_fraction = 1.0;
    s.occlusion.fill = OccluderFill::Noise;
    const Dataset a = generate_sequence(s, 17), b = generate_sequence(s, 17), c = generate_sequence(s, 18);
    for (int t = 0; t < a.frames(); ++t) {
        EXPECT_EQ(a.occluded[t].data, b.occluded[t].data);
    }
    EXPECT_NE(a.gt_cloud.gaussians[0].mean, c.gt_cloud.gaussians[0].mean);
}

TEST(Synth, MotionScriptLengthAndSkeletonMasks) {
    const SceneSpec s = small_spec(12);
    const Dataset ds = generate_sequence(s, 1);
    EXPECT_EQ(ds.frames(), 12);
    EXPECT_EQ(ds.skel_mask.size(), 12U);
    for (const auto& m : ds.skel_mask) {
        EXPECT_GT(mask_sum(m), 50.0);
    }
}

TEST(Synth, FigureColorsAreAsymmetric) {
    const SceneSpec s = small_spec();
    const Dataset ds = generate_sequence(s, 1);
    // Mirror the clean training frame about the vertical axis; a symmetric
    // figure would match itself closely.
    const Image& img = ds.clean[0];
    double diff = 0.0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                diff += std::abs(img.at(y, x, c) - img.at(y, img.width - 1 - x, c));
            }
        }
    }
    EXPECT_GT(diff, 1.0);
}

TEST(Synth, RejectsBadSpecs) {
    SceneSpec s = small_spec();
    s.occlusion.coverage = 1.5;
    EXPECT_THROW(s.validate(), InvalidInput);
    s = small_spec();
    s.frames = 0;
    EXPECT_THROW(s.validate(), InvalidInput);
    EXPECT_THROW(parse_pattern("diagonal"), InvalidInput);
}
