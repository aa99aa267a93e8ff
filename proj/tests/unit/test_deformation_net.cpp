#include "occsplat/deformation_net.hpp"
#include "occsplat/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace occsplat;

namespace {

DeformationNetConfig toy_config(int depth, int width, int skip) {
    DeformationNetConfig c;
    c.depth = depth;
    c.width = width;
    c.skip_layer = skip;
    c.xyz = {2, false};
    c.time = {2, false};
    c.pose_dim = 4;
    return c;
}

RowMatrix random_rows(std::mt19937_64& rng, int rows, int cols) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    RowMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = u(rng);
    }
    return m;
}

void randomize(DeformationNet& net, std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (Eigen::Index i = 0; i < net.params().size(); ++i) {
        net.params()[i] = u(rng);
    }
}

// Normwise relative error of analytic vs central-difference parameter
// gradients on the scalar Σ G ⊙ forward(X), over the given indices.
double param_gradcheck(DeformationNet& net, const RowMatrix& x, const RowMatrix& g,
                       const std::vector<Eigen::Index>& idx, double h) {
    NetCache cache;
    net.forward(x, &cache);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.params().size());
    net.backward(cache, g, grad);
    double err = 0.0, ref = 0.0;
    for (auto i : idx) {
        const double keep = net.params()[i];
        net.params()[i] = keep + h;
        const double fp = net.forward(x, nullptr).cwiseProduct(g).sum();
        net.params()[i] = keep - h;
        const double fm = net.forward(x, nullptr).cwiseProduct(g).sum();
        net.params()[i] = keep;
        const double num = (fp - fm) / (2 * h);
        err = std::max(err, std::abs(num - grad[i]));
        ref = std::max(ref, std::abs(num));
    }
    return err / std::max(ref, 1e-8);
}

} // namespace

TEST(PosEncode, ZeroWithTwoBands) {
    const auto e = pos_encode(Eigen::VectorXd::Zero(1), {2, false});
    ASSERT_EQ(e.size(), 4);
    EXPECT_EQ(e[0], 0.0);
    EXPECT_EQ(e[1], 1.0);
    EXPECT_EQ(e[2], 0.0);
    EXPECT_EQ(e[3], 1.0);
}

TEST(PosEncode, HalfWithOneBand) {
    const auto e = pos_encode(Eigen::VectorXd::Constant(1, 0.5), {1, false});
    EXPECT_NEAR(e[0], 1.0, 1e-15);
    EXPECT_NEAR(e[1], 0.0, 1e-15);
}

TEST(PosEncode, PeriodTwo) {
    Eigen::VectorXd x(3);
    x << 0.13, -0.7, 0.42;
    const PosEncodingConfig c{6, false};
    EXPECT_LT((pos_encode(x, c) - pos_encode((x.array() + 2.0).matrix(), c)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(pos_encode(x, c).size(), 36);
    EXPECT_EQ(pos_encode(x, {6, true}).size(), 39);
}

TEST(PosEncode, RejectsBadInput) {
    EXPECT_THROW(pos_encode(Eigen::VectorXd::Zero(1), {0, false}), InvalidInput);
    EXPECT_THROW(pos_encode(Eigen::VectorXd::Constant(1, NAN), {1, false}), InvalidInput);
}

TEST(DeformationNet, DefaultShapes) {
    DeformationNetConfig c;
    c.pose_dim = 24;
    DeformationNet net(c);
    EXPECT_EQ(c.input_dim(), 60 + 12 + 24);
    EXPECT_EQ(net.num_layers(), 9);
    EXPECT_EQ(net.layer_in(0), 96);
    EXPECT_EQ(net.layer_in(4), 256 + 96);
    EXPECT_EQ(net.layer_in(8), 256);
    EXPECT_EQ(net.layer_out(8), 11);
}

TEST(DeformationNet, ZeroHeadGivesIdentityDeformation) {
    DeformationNet net(toy_config(3, 16, 2));
    std::mt19937_64 rng(1);
    net.initialize(rng);
    const auto x = net.encode_inputs({Vec3(0.1, 0.2, 0.3), Vec3(-0.3, 0.0, 0.5)}, 0.4, Eigen::VectorXd::Ones(4));
    const auto out = net.forward(x, nullptr);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const auto d = decode_head(out.row(r));
        EXPECT_EQ(d.d_mean, Vec3::Zero());
        EXPECT_EQ(d.d_log_scale, Vec3::Zero());
        EXPECT_EQ(d.d_rot, identity_quat());
        EXPECT_NEAR(d.sigma, std::log(2.0), 1e-15);
    }
}

TEST(DeformationNet, DeterministicForward) {
    DeformationNet net(toy_config(4, 32, 2));
    std::mt19937_64 rng(2);
    randomize(net, rng, 0.3);
    const auto x = random_rows(rng, 7, net.config().input_dim());
    const RowMatrix a = net.forward(x, nullptr);
    const RowMatrix b = net.forward(x, nullptr);
    EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()), 0);
}

TEST(DeformationNet, ZeroUpstreamGivesZeroGradient) {
    DeformationNet net(toy_config(3, 8, 0));
    std::mt19937_64 rng(3);
    randomize(net, rng, 0.5);
    NetCache cache;
    const auto x = random_rows(rng, 5, net.config().input_dim());
    net.forward(x, &cache);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.params().size());
    net.backward(cache, RowMatrix::Zero(5, HeadLayout::kSize), grad);
    EXPECT_EQ(grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(DeformationNet, LinearNetGradientIsOuterProduct) {
    DeformationNet net(toy_config(0, 1, 0));
    std::mt19937_64 rng(4);
    randomize(net, rng, 0.5);
    const auto x = random_rows(rng, 1, net.config().input_dim());
    const auto g = random_rows(rng, 1, HeadLayout::kSize);
    NetCache cache;
    net.forward(x, &cache);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.params().size());
    net.backward(cache, g, grad);
    const RowMatrix outer = g.transpose() * x;
    const Eigen::Map<const RowMatrix> gw(grad.data(), HeadLayout::kSize, net.config().input_dim());
    EXPECT_LT((gw - outer).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((grad.tail(HeadLayout::kSize) - g.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DeformationNet, ToyGradcheck) {
    DeformationNet net(toy_config(2, 12, 0));
    std::mt19937_64 rng(5);
    randomize(net, rng, 0.5);
    const auto x = random_rows(rng, 6, net.config().input_dim());
    const auto g = random_rows(rng, 6, HeadLayout::kSize);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(net.params().size()));
    std::iota(idx.begin(), idx.end(), 0);
    EXPECT_LT(param_gradcheck(net, x, g, idx, 1e-6), 1e-5);
}

TEST(DeformationNet, FullConfigGradcheckOnSampledParameters) {
    DeformationNetConfig c;
    c.pose_dim = 8;
    DeformationNet net(c);
    std::mt19937_64 rng(6);
    net.initialize(rng);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (int o = 0; o < HeadLayout::kSize; ++o) {
        for (int i = 0; i < net.layer_in(c.depth); ++i) {
            net.weight(c.depth)(o, i) = u(rng);
        }
    }
    const auto x = random_rows(rng, 3, c.input_dim());
    const auto g = random_rows(rng, 3, HeadLayout::kSize);
    std::uniform_int_distribution<Eigen::Index> pick(0, net.params().size() - 1);
    std::vector<Eigen::Index> idx;
    for (int i = 0; i < 50; ++i) {
        idx.push_back(pick(rng));
    }
    EXPECT_LT(param_gradcheck(net, x, g, idx, 1e-6), 1e-5);
}

TEST(DeformationNet, InputGradientMatchesFiniteDifferences) {
    DeformationNet net(toy_config(3, 10, 2));
    std::mt19937_64 rng(7);
    randomize(net, rng, 0.5);
    auto x = random_rows(rng, 2, net.config().input_dim());
    const auto g = random_rows(rng, 2, HeadLayout::kSize);
    NetCache cache;
    net.forward(x, &cache);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.params().size());
    RowMatrix dx;
    net.backward(cache, g, grad, &dx);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + 1e-6;
        const double fp = net.forward(x, nullptr).cwiseProduct(g).sum();
        x.data()[i] = keep - 1e-6;
        const double fm = net.forward(x, nullptr).cwiseProduct(g).sum();
        x.data()[i] = keep;
        EXPECT_NEAR((fp - fm) / 2e-6, dx.data()[i], 1e-7);
    }
}

TEST(DeformationNet, ShapeMismatchFaults) {
    DeformationNet net(toy_config(2, 4, 0));
    EXPECT_THROW(net.forward(RowMatrix::Zero(2, 3), nullptr), Fault);
    NetCache cache;
    net.forward(RowMatrix::Zero(2, net.config().input_dim()), &cache);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.params().size());
    EXPECT_THROW(net.backward(cache, RowMatrix::Zero(3, HeadLayout::kSize), grad), Fault);
    EXPECT_THROW(net.backward(NetCache{}, RowMatrix::Zero(2, HeadLayout::kSize), grad), Fault);
}

TEST(DeformationNet, SigmaHeadIndicesCoverSigmaRow) {
    DeformationNet net(toy_config(2, 6, 0));
    const auto idx = net.sigma_head_indices();
    EXPECT_EQ(idx.size(), 7u);
    net.params().setZero();
    for (auto i : idx) {
        net.params()[i] = 1.0;
    }
    EXPECT_EQ(net.weight(2).row(HeadLayout::kSigma).sum(), 6.0);
    EXPECT_EQ(net.bias(2)[HeadLayout::kSigma], 1.0);
    EXPECT_EQ(net.weight(2).sum() + net.bias(2).sum(), 7.0);
}

TEST(ApplyDeformation, ZeroDeltaIsIdentity) {
    Gaussian3D g;
    g.mean = Vec3(1, 2, 3);
    g.rotation = quat_from_axis_angle(Vec3(1, 1, 0), 0.4);
    g.log_scale = Vec3(-1, -2, -3);
    const auto out = apply_deformation(g, DeformationOutput{});
    EXPECT_EQ(out.mean, g.mean);
    EXPECT_EQ(out.log_scale, g.log_scale);
    EXPECT_LT((out.rotation - g.rotation).norm(), 1e-15);
}

TEST(ApplyDeformation, MeanOffsetAndQuarterTurns) {
    Gaussian3D g;
    DeformationOutput d;
    d.d_mean = Vec3(1, 0, 0);
    EXPECT_EQ(apply_deformation(g, d).mean, Vec3(1, 0, 0));

    const double h = std::numbers::pi / 2;
    g.rotation = quat_from_axis_angle(Vec3::UnitZ(), h);
    d.d_rot = quat_from_axis_angle(Vec3::UnitZ(), h);
    const Quat out = apply_deformation(g, d).rotation;
    EXPECT_LT((out - Quat(0, 0, 0, 1)).norm(), 1e-15);
}

TEST(ApplyDeformation, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 20; ++trial) {
        Gaussian3D g;
        g.rotation = Quat(n(rng), n(rng), n(rng), n(rng));
        Eigen::RowVectorXd raw(HeadLayout::kSize);
        for (int i = 0; i < raw.size(); ++i) {
            raw[i] = 0.3 * n(rng);
        }
        const Quat gq(n(rng), n(rng), n(rng), n(rng));
        auto loss = [&](const Quat& q, const Eigen::RowVectorXd& r) {
            Gaussian3D gg = g;
            gg.rotation = q;
            return gq.dot(apply_deformation(gg, decode_head(r)).rotation);
        };
        const auto an = apply_deformation_backward(g, decode_head(raw), Vec3::Zero(), gq, Vec3::Zero());
        for (int i = 0; i < 4; ++i) {
            Quat qp = g.rotation, qm = g.rotation;
            qp[i] += 1e-6;
            qm[i] -= 1e-6;
            EXPECT_NEAR((loss(qp, raw) - loss(qm, raw)) / 2e-6, an.d_rotation[i], 1e-8);
            Eigen::RowVectorXd rp = raw, rm = raw;
            rp[HeadLayout::kRot + i] += 1e-6;
            rm[HeadLayout::kRot + i] -= 1e-6;
            EXPECT_NEAR((loss(g.rotation, rp) - loss(g.rotation, rm)) / 2e-6, an.d_head_rot_raw[i], 1e-8);
        }
    }
}
