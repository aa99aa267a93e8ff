#include "occsplat/errors.hpp"
#include "occsplat/gradcheck.hpp"
#include "occsplat/pipeline.hpp"
#include "occsplat/synth.hpp"
#include "occsplat/trainer.hpp"

#include <gtest/gtest.h>

using namespace occsplat;

namespace {

struct Fixture {
    Dataset ds;
    TrainState st;
    TrainConfig cfg;
};

Fixture make_fixture() {
    SceneSpec s;
    s.height = 24;
    s.width = 24;
    s.focal = 30.0;
    s.frames = 4;
    s.holdout_views = 1;
    s.gt_gaussians = 60;
    Fixture f{generate_sequence(s, 1), {}, {}};
    f.cfg.net.width = 16;
    f.cfg.net.depth = 2;
    f.cfg.net.skip_layer = 1;
    f.cfg.init_per_bone = 8;
    f.st = init_state(f.cfg, f.ds);
    return f;
}

} // namespace

TEST(Pipeline, ModeAAndBAgreeOnColorWithZeroHead) {
    Fixture f = make_fixture();
    const auto a = full_forward(f.st.cloud, &f.st.net, f.ds.skeleton, f.ds.poses[1], f.ds.t_norm(1), f.ds.cameras[0],
                                options_for_mode(Mode::A));
    const auto b = full_forward(f.st.cloud, &f.st.net, f.ds.skeleton, f.ds.poses[1], f.ds.t_norm(1), f.ds.cameras[0],
                                options_for_mode(Mode::B));
    EXPECT_EQ(a.render.color.data, b.render.color.data);
    EXPECT_EQ(a.render.opacity.data, b.render.opacity.data);
    // Untouched σ head: Û/Ô is softplus(0) wherever the figure is drawn.
    for (std::size_t p = 0; p < b.render.opacity.data.size(); ++p) {
        if (b.render.opacity.data[p] > 1e-3) {
            EXPECT_NEAR(b.render.uncertainty.data[p] / b.render.opacity.data[p], std::log(2.0), 1e-9);
        }
    }
}

TEST(Pipeline, StopGradientRemovesNetworkInputPath) {
    Fixture f = make_fixture();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (Eigen::Index i = 0; i < f.st.net.params().size(); ++i) {
        f.st.net.params()[i] += u(rng);
    }
    const auto fwd = full_forward(f.st.cloud, &f.st.net, f.ds.skeleton, f.ds.poses[2], f.ds.t_norm(2),
                                  f.ds.cameras[0], options_for_mode(Mode::B));
    Image dc(fwd.render.color.height, fwd.render.color.width, 3, 1.0);
    const auto sg = full_backward(f.st.cloud, &f.st.net, fwd, &dc, nullptr, nullptr, nullptr, true);
    const auto full = full_backward(f.st.cloud, &f.st.net, fwd, &dc, nullptr, nullptr, nullptr, false);
    double diff = 0.0;
    for (std::size_t i = 0; i < f.st.cloud.size(); ++i) {
        diff += (sg.cloud.mean[i] - full.cloud.mean[i]).norm();
    }
    EXPECT_GT(diff, 0.0);
    EXPECT_EQ(sg.net, full.net);
}

TEST(Pipeline, NetworkRequiredWhenEnabled) {
    Fixture f = make_fixture();
    EXPECT_THROW(full_forward(f.st.cloud, nullptr, f.ds.skeleton, f.ds.poses[0], 0.0, f.ds.cameras[0],
                              options_for_mode(Mode::B)),
                 InvalidInput);
}

TEST(Gradcheck, EveryOperationPasses) {
    GradcheckOptions opt;
    opt.instances = 4;
    for (const auto& op : gradcheck_ops()) {
        const auto r = run_gradcheck(op, opt);
        EXPECT_TRUE(r.passed) << op << " rel err " << r.max_rel_error;
        EXPECT_GE(r.instances, 4) << op;
    }
}

TEST(Gradcheck, CorruptedGradientFailsWithOpName) {
    GradcheckOptions opt;
    opt.instances = 2;
    opt.corrupt = "nll";
    const auto r = run_gradcheck("nll", opt);
    EXPECT_FALSE(r.passed);
    EXPECT_EQ(r.op, "nll");
    EXPECT_THROW(run_gradcheck("no_such_op", opt), InvalidInput);
}

TEST(Gradcheck, CoversEveryBackwardOperation) {
    const auto& ops = gradcheck_ops();
    for (const char* name : {"build_covariance", "projection", "rasterize_color", "rasterize_uncertainty",
                             "rasterize_opacity", "deformation_net", "lbs", "nll", "ssim", "spatial", "temporal"}) {
        EXPECT_NE(std::find(ops.begin(), ops.end(), name), ops.end()) << name;
    }
}
