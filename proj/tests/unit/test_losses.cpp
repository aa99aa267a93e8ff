#include "occsplat/errors.hpp"
#include "occsplat/losses.hpp"
#include "occsplat/ssim.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace occsplat;

namespace {

Image random_image(std::mt19937_64& rng, int h, int w, int c, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(h, w, c);
    for (double& v : img.data) {
        v = u(rng);
    }
    return img;
}

// Golden-section minimizer, independent of the closed form under test.
double golden_min(const std::function<double(double)>& f, double a, double b) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - g * (b - a), d = a + g * (b - a);
    for (int i = 0; i < 200; ++i) {
        if (f(c) < f(d)) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    return 0.5 * (a + b);
}

} // namespace

TEST(L1, MeanOfChannelSum) {
    Image gt(1, 2, 3, 0.0), pred(1, 2, 3, 0.0);
    pred.at(0, 0, 0) = 0.5;
    pred.at(0, 1, 2) = -0.25;
    const auto l = l1_loss(gt, pred);
    EXPECT_DOUBLE_EQ(l.value, 0.375);
    EXPECT_DOUBLE_EQ(l.grad.at(0, 0, 0), 0.5);
    EXPECT_DOUBLE_EQ(l.grad.at(0, 1, 2), -0.5);
}

TEST(Nll, PerfectFitAtUnitScaleIsZero) {
    LossWeights w;
    std::mt19937_64 rng(1);
    const Image gt = random_image(rng, 4, 4, 3);
    const Image u(4, 4, 1, 1.0 - w.eps);
    EXPECT_NEAR(nll_loss(gt, gt, u, w).value, 0.0, 1e-15);
}

TEST(Nll, StationaryPointIsResidualOverLambda) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ur(0.01, 3.0);
    const double eps = 1e-7;
    for (double lam : {0.5, 1.0, 2.0}) {
        for (int i = 0; i < 30; ++i) {
            const double r = ur(rng);
            const double u = golden_min([&](double x) { return nll_pixel(r, x, lam, eps); }, 1e-6, 20.0);
            const double ustar = r / lam - eps;
            EXPECT_NEAR(u, ustar, 1e-6 * ustar);
            EXPECT_NEAR(nll_pixel_du(r, ustar, lam, eps), 0.0, 1e-9);
        }
    }
}

TEST(Nll, GradientMatchesFormula) {
    LossWeights w;
    std::mt19937_64 rng(3);
    const Image gt = random_image(rng, 3, 3, 3), pred = random_image(rng, 3, 3, 3);
    const Image u = random_image(rng, 3, 3, 1, 0.1, 2.0);
    const auto res = nll_loss(gt, pred, u, w);
    const double n = 9.0;
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) {
            double r = 0.0;
            for (int c = 0; c < 3; ++c) {
                r += std::abs(gt.at(y, x, c) - pred.at(y, x, c));
                const double s = pred.at(y, x, c) > gt.at(y, x, c) ? 1.0 : -1.0;
                EXPECT_NEAR(res.d_color.at(y, x, c), s / (u.at(y, x) + w.eps) / n, 1e-14);
            }
            const double ue = u.at(y, x) + w.eps;
            EXPECT_NEAR(res.d_uncertainty.at(y, x), (-r / (ue * ue) + w.lambda_reg / ue) / n, 1e-12);
        }
    }
}

TEST(Nll, LargerUncertaintyAttenuatesColorGradient) {
    LossWeights w;
    w.eps = 0.0;
    std::mt19937_64 rng(4);
    const Image gt = random_image(rng, 2, 2, 3), pred = random_image(rng, 2, 2, 3);
    Image u(2, 2, 1, 0.3), u4(2, 2, 1, 1.2);
    const auto a = nll_loss(gt, pred, u, w), b = nll_loss(gt, pred, u4, w);
    for (std::size_t i = 0; i < a.d_color.data.size(); ++i) {
        EXPECT_NEAR(b.d_color.data[i], a.d_color.data[i] / 4.0, 1e-15);
    }
}

TEST(Nll, NegativeUncertaintyIsFault) {
    LossWeights w;
    Image c(1, 1, 3), u(1, 1, 1, -0.1);
    EXPECT_THROW(nll_loss(c, c, u, w), Fault);
}

TEST(MaskLoss, MeanSquaredError) {
    Image o(1, 2, 1), m(1, 2, 1);
    o.at(0, 0) = 0.5;
    m.at(0, 1) = 1.0;
    const auto l = mask_loss(o, m);
    EXPECT_DOUBLE_EQ(l.value, (0.25 + 1.0) / 2.0);
    EXPECT_DOUBLE_EQ(l.grad.at(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(l.grad.at(0, 1), -1.0);
}

TEST(Ssim, IdenticalIsOneShiftedIsLess) {
    std::mt19937_64 rng(5);
    const Image a = random_image(rng, 16, 16, 3);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    Image b = a;
    for (double& v : b.data) {
        v = 0.5 * v + 0.2;
    }
    EXPECT_LT(ssim(a, b), 0.99);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(6);
    Image a = random_image(rng, 12, 12, 3);
    const Image b = random_image(rng, 12, 12, 3);
    const auto g = ssim_with_grad(a, b);
    for (std::size_t i : {0UL, 17UL, 200UL, 431UL}) {
        const double keep = a.data[i], h = 1e-6;
        a.data[i] = keep + h;
        const double fp = ssim(a, b);
        a.data[i] = keep - h;
        const double fm = ssim(a, b);
        a.data[i] = keep;
        EXPECT_NEAR(g.d_a.data[i], (fp - fm) / (2 * h), 1e-7);
    }
}

TEST(Knn, RowsAreStochastic) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Vec3> pts;
    for (int i = 0; i < 40; ++i) {
        pts.emplace_back(u(rng), u(rng), u(rng));
    }
    const auto g = build_knn_graph(pts, 5);
    ASSERT_EQ(g.neighbors.size(), 40U);
    for (std::size_t i = 0; i < 40; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < g.neighbors[i].size(); ++j) {
            EXPECT_NE(g.neighbors[i][j], static_cast<int>(i));
            EXPECT_GE(g.weights[i][j], 0.0);
            s += g.weights[i][j];
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Spatial, ZeroForEqualTuplesAndNoSigmaGradient) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Vec3> pts;
    for (int i = 0; i < 12; ++i) {
        pts.emplace_back(u(rng), u(rng), u(rng));
    }
    const auto g = build_knn_graph(pts, 3);
    LossWeights w;
    RowMatrix head(12, HeadLayout::kSize);
    for (int c = 0; c < HeadLayout::kSize; ++c) {
        head.col(c).setConstant(u(rng));
    }
    const std::vector<double> sigma(12, 0.7);
    EXPECT_NEAR(spatial_loss(head, sigma, g, w).value, 0.0, 1e-15);
    for (Eigen::Index i = 0; i < head.size(); ++i) {
        head.data()[i] = u(rng);
    }
    const auto l = spatial_loss(head, sigma, g, w);
    EXPECT_GT(l.value, 0.0);
    EXPECT_EQ(l.d_head.col(HeadLayout::kSigma).norm(), 0.0);
}

TEST(Temporal, AffineInTimeVanishes) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1, 1);
    RowMatrix a(5, HeadLayout::kSize), b(5, HeadLayout::kSize);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        a.data()[i] = u(rng);
        b.data()[i] = u(rng);
    }
    LossWeights w;
    const double t = 0.4, k = 0.1;
    TemporalSample s{a + (t - k) * b, a + t * b, a + (t + k) * b, std::vector<double>(5, 1.3)};
    EXPECT_LT(temporal_loss({s}, w).value, 1e-10);
    TemporalSample q{a + (t - k) * (t - k) * b, a + t * t * b, a + (t + k) * (t + k) * b, std::vector<double>(5, 1.3)};
    EXPECT_GT(temporal_loss({q}, w).value, 0.0);
}

TEST(TotalLoss, ModeComposition) {
    LossWeights w;
    LossTerms t;
    t.l1 = 0.3;
    t.nll = -2.0;
    t.spa = 0.5;
    t.temp = 0.7;
    t.mask = 0.2;
    t.ssim = 0.4;
    const double img = w.lambda_mask * 0.2 + w.lambda_ssim * 0.4;
    EXPECT_DOUBLE_EQ(total_loss(t, Mode::A, w), 0.3 + img);
    EXPECT_DOUBLE_EQ(total_loss(t, Mode::B, w), -2.0 + img);
    EXPECT_DOUBLE_EQ(total_loss(t, Mode::C, w), -2.0 + img + w.lambda_spa * 0.5);
    EXPECT_DOUBLE_EQ(total_loss(t, Mode::D, w), -2.0 + img + w.lambda_spa * 0.5 + w.lambda_temp * 0.7);
}
