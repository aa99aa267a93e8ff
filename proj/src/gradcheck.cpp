#include "occsplat/gradcheck.hpp"

#include "occsplat/deformation_net.hpp"
#include "occsplat/errors.hpp"
#include "occsplat/geometry.hpp"
#include "occsplat/losses.hpp"
#include "occsplat/pipeline.hpp"
#include "occsplat/render.hpp"
#include "occsplat/skeleton.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <random>

namespace occsplat {

FdComparison compare_finite_differences(const ProbeFn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
                                        double h, const std::vector<Eigen::Index>& coords) {
    FdComparison cmp;
    const Probe base = f(x);
    double err = 0.0, ref = 0.0;
    Eigen::VectorXd xp = x;
    auto check = [&](Eigen::Index i) {
        const double keep = xp[i];
        xp[i] = keep + h;
        const Probe plus = f(xp);
        xp[i] = keep - h;
        const Probe minus = f(xp);
        xp[i] = keep;
        if (plus.state != base.state || minus.state != base.state) {
            cmp.stable = false;
            return;
        }
        const double num = (plus.value - minus.value) / (2.0 * h);
        err = std::max(err, std::abs(num - analytic[i]));
        ref = std::max(ref, std::abs(num));
    };
    if (coords.empty()) {
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            check(i);
        }
    } else {
        for (auto i : coords) {
            check(i);
        }
    }
    cmp.rel_error = err / std::max(ref, 1e-8);
    return cmp;
}

namespace {

using Rng = std::mt19937_64;

struct Hasher {
    std::uint64_t h = 1469598103934665603ULL;
    void add(std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xffU;
            h *= 1099511628211ULL;
        }
    }
};

double uni(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Eigen::VectorXd uniform_vec(Rng& rng, Eigen::Index n, double lo, double hi) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v[i] = uni(rng, lo, hi);
    }
    return v;
}

Quat random_quat(Rng& rng) {
    std::normal_distribution<double> n;
    return normalize_quat(Quat(n(rng), n(rng), n(rng), n(rng)));
}

Mat3 random_sym(Rng& rng) {
    Mat3 m;
    for (int i = 0; i < 9; ++i) {
        m.data()[i] = uni(rng, -1, 1);
    }
    return 0.5 * (m + m.transpose());
}

Image random_image(Rng& rng, int h, int w, int c, double lo, double hi) {
    Image img(h, w, c);
    for (double& v : img.data) {
        v = uni(rng, lo, hi);
    }
    return img;
}

double dot(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        s += a.data[i] * b.data[i];
    }
    return s;
}

// One randomized instance: x, the analytic gradient, the probe, and the
// coordinates to check (empty = all).
struct Instance {
    Eigen::VectorXd x;
    Eigen::VectorXd analytic;
    ProbeFn f;
    std::vector<Eigen::Index> coords;
    double h = 1e-6;
};

using Builder = std::function<Instance(Rng&)>;

Instance covariance_instance(Rng& rng) {
    Instance in;
    const Mat3 g = random_sym(rng);
    in.x.resize(7);
    in.x.head<4>() = random_quat(rng) * uni(rng, 0.7, 1.4);
    in.x.tail<3>() = uniform_vec(rng, 3, -1.5, 0.5);
    in.f = [g](const Eigen::VectorXd& x) {
        return Probe{build_covariance(x.head<4>(), x.tail<3>()).sigma.cwiseProduct(g).sum(), 0};
    };
    const auto an = build_covariance_backward(in.x.head<4>(), in.x.tail<3>(), g);
    in.analytic.resize(7);
    in.analytic << an.d_rotation, an.d_log_scale;
    return in;
}

Camera test_camera(int size) {
    return Camera::look_at(Vec3(0.4, -0.3, -2.5), Vec3::Zero(), Vec3(0, -1, 0),
                           {0.9 * size, 0.95 * size, 0.5 * (size - 1) + 0.3, 0.5 * (size - 1) - 0.2}, size, size);
}

Instance projection_instance(Rng& rng) {
    const Camera cam = test_camera(48);
    for (;;) {
        const Vec3 mu = uniform_vec(rng, 3, -0.6, 0.6);
        const Mat3 sigma = build_covariance(random_quat(rng), uniform_vec(rng, 3, -3.5, -1.0)).sigma;
        if (!project_gaussian(mu, Covariance3D{sigma}, cam)) {
            continue;
        }
        const Vec2 gm = uniform_vec(rng, 2, -1, 1);
        Mat2 gc;
        gc << uni(rng, -1, 1), uni(rng, -1, 1), uni(rng, -1, 1), uni(rng, -1, 1);
        Instance in;
        in.x.resize(12);
        in.x.head<3>() = mu;
        in.x.tail<9>() = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(sigma.data());
        in.f = [cam, gm, gc](const Eigen::VectorXd& x) {
            Covariance3D c;
            c.sigma = Eigen::Map<const Mat3>(x.tail<9>().data());
            const auto p = project_gaussian(x.head<3>(), c, cam);
            if (!p) {
                return Probe{0.0, 1};
            }
            return Probe{gm.dot(p->mean) + gc.cwiseProduct(p->cov).sum(), 0};
        };
        const auto an = project_gaussian_backward(mu, Covariance3D{sigma}, cam, gm, gc);
        in.analytic.resize(12);
        in.analytic.head<3>() = an.d_mean;
        in.analytic.tail<9>() = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(an.d_cov.data());
        return in;
    }
}

constexpr int kSplatParams = 10;

std::vector<Splat> unpack_splats(const Eigen::VectorXd& x, const std::vector<double>& depth) {
    std::vector<Splat> s(depth.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto p = x.segment<kSplatParams>(static_cast<Eigen::Index>(i) * kSplatParams);
        s[i].mean = p.head<2>();
        s[i].cov << p[2], p[3], p[3], p[4];
        s[i].opacity = p[5];
        s[i].color = p.segment<3>(6);
        s[i].sigma = p[9];
        s[i].depth = depth[i];
        s[i].source = static_cast<int>(i);
    }
    return s;
}

std::uint64_t contributor_state(const RenderOutput& r) {
    Hasher h;
    for (const auto& px : r.contributors) {
        h.add(px.size());
        for (const auto& c : px) {
            h.add(static_cast<std::uint64_t>(c.splat) * 2 + (c.clamped ? 1 : 0));
        }
    }
    return h.h;
}

// channel: 0 color, 1 uncertainty, 2 opacity.
Instance raster_instance(Rng& rng, int channel) {
    constexpr int kSize = 8;
    const int n = 1 + static_cast<int>(rng() % 5);
    std::vector<double> depth;
    Eigen::VectorXd x(n * kSplatParams);
    for (int i = 0; i < n; ++i) {
        depth.push_back(uni(rng, 1.0, 5.0));
        const double th = uni(rng, 0, 3.14159);
        Mat2 r;
        r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
        const Mat2 c = r * Eigen::Vector2d(uni(rng, 0.8, 6.0), uni(rng, 0.8, 6.0)).asDiagonal() * r.transpose();
        auto p = x.segment<kSplatParams>(i * kSplatParams);
        p << uni(rng, 0, kSize - 1), uni(rng, 0, kSize - 1), c(0, 0), c(0, 1), c(1, 1), uni(rng, 0.1, 0.95),
            uni(rng, 0, 1), uni(rng, 0, 1), uni(rng, 0, 1), uni(rng, 0.1, 2.0);
    }
    RasterConfig cfg;
    cfg.tile_size = 4;
    cfg.background = Vec3(uni(rng, 0, 1), uni(rng, 0, 1), uni(rng, 0, 1));
    const Image dc = random_image(rng, kSize, kSize, 3, -1, 1);
    const Image du = random_image(rng, kSize, kSize, 1, -1, 1);
    const Image dop = random_image(rng, kSize, kSize, 1, -1, 1);
    const Image* gc = channel == 0 ? &dc : nullptr;
    const Image* gu = channel == 1 ? &du : nullptr;
    const Image* go = channel == 2 ? &dop : nullptr;

    Instance in;
    in.x = x;
    in.f = [=](const Eigen::VectorXd& xx) {
        const auto r = rasterize(unpack_splats(xx, depth), kSize, kSize, cfg);
        const double v = channel == 0 ? dot(r.color, dc) : channel == 1 ? dot(r.uncertainty, du) : dot(r.opacity, dop);
        return Probe{v, contributor_state(r)};
    };
    const auto splats = unpack_splats(x, depth);
    const auto fwd = rasterize(splats, kSize, kSize, cfg);
    const auto g = rasterize_backward(splats, fwd, gc, gu, go);
    in.analytic.resize(x.size());
    for (int i = 0; i < n; ++i) {
        auto a = in.analytic.segment<kSplatParams>(i * kSplatParams);
        const auto& gi = g[static_cast<std::size_t>(i)];
        a << gi.mean, gi.cov(0, 0), gi.cov(0, 1) + gi.cov(1, 0), gi.cov(1, 1), gi.opacity, gi.color, gi.sigma;
    }
    return in;
}

std::uint64_t relu_state(const NetCache& c) {
    Hasher h;
    for (const auto& pre : c.pre_activations) {
        for (Eigen::Index i = 0; i < pre.size(); ++i) {
            h.add(pre.data()[i] > 0.0);
        }
    }
    return h.h;
}

Instance net_instance(Rng& rng) {
    DeformationNetConfig cfg;
    cfg.pose_dim = 24;
    auto net = std::make_shared<DeformationNet>(cfg);
    net->initialize(rng);
    const int head = cfg.depth;
    for (Eigen::Index i = 0; i < net->weight(head).size(); ++i) {
        net->weight(head).data()[i] = uni(rng, -0.05, 0.05);
    }
    for (int l = 0; l < net->num_layers(); ++l) {
        for (Eigen::Index i = 0; i < net->bias(l).size(); ++i) {
            net->bias(l)[i] = uni(rng, -0.1, 0.1);
        }
    }
    std::vector<Vec3> means;
    for (int i = 0; i < 3; ++i) {
        means.push_back(uniform_vec(rng, 3, -1, 1));
    }
    const RowMatrix enc = net->encode_inputs(means, uni(rng, 0, 1), uniform_vec(rng, 24, -1, 1));
    RowMatrix up(enc.rows(), HeadLayout::kSize);
    for (Eigen::Index i = 0; i < up.size(); ++i) {
        up.data()[i] = uni(rng, -1, 1);
    }
    NetCache cache;
    net->forward(enc, &cache);
    Instance in;
    in.x = net->params();
    in.analytic = Eigen::VectorXd::Zero(in.x.size());
    net->backward(cache, up, in.analytic);
    std::uniform_int_distribution<Eigen::Index> pick(0, in.x.size() - 1);
    for (int i = 0; i < 50; ++i) {
        in.coords.push_back(pick(rng));
    }
    // The σ row of the head is always checked as well.
    const auto sig = net->sigma_head_indices();
    in.coords.push_back(sig.back());
    in.f = [net, enc, up](const Eigen::VectorXd& xx) {
        const Eigen::VectorXd keep = net->params();
        net->params() = xx;
        NetCache c;
        const double v = net->forward(enc, &c).cwiseProduct(up).sum();
        net->params() = keep;
        return Probe{v, relu_state(c)};
    };
    return in;
}

Instance deformation_instance(Rng& rng) {
    Gaussian3D g;
    g.mean = uniform_vec(rng, 3, -1, 1);
    g.log_scale = uniform_vec(rng, 3, -3, -1);
    Instance in;
    in.x.resize(4 + HeadLayout::kSize);
    in.x.head<4>() = random_quat(rng) * uni(rng, 0.8, 1.2);
    in.x.tail(HeadLayout::kSize) = uniform_vec(rng, HeadLayout::kSize, -0.4, 0.4);
    const Vec3 gm = uniform_vec(rng, 3, -1, 1);
    const Quat gq = uniform_vec(rng, 4, -1, 1);
    const Vec3 gs = uniform_vec(rng, 3, -1, 1);
    in.f = [=](const Eigen::VectorXd& x) {
        Gaussian3D gg = g;
        gg.rotation = x.head<4>();
        const auto out = apply_deformation(gg, decode_head(x.tail(HeadLayout::kSize).transpose()));
        return Probe{gm.dot(out.mean) + gq.dot(out.rotation) + gs.dot(out.log_scale), 0};
    };
    Gaussian3D gg = g;
    gg.rotation = in.x.head<4>();
    const auto d = decode_head(in.x.tail(HeadLayout::kSize).transpose());
    const auto an = apply_deformation_backward(gg, d, gm, gq, gs);
    in.analytic = Eigen::VectorXd::Zero(in.x.size());
    in.analytic.head<4>() = an.d_rotation;
    in.analytic.segment<3>(4 + HeadLayout::kMean) = an.d_head_mean;
    in.analytic.segment<4>(4 + HeadLayout::kRot) = an.d_head_rot_raw;
    in.analytic.segment<3>(4 + HeadLayout::kScale) = an.d_head_log_scale;
    return in;
}

Skeleton test_skeleton() {
    Skeleton s;
    s.joints.push_back({"root", -1, Vec3::Zero(), Vec3(0, 0.5, 0), 0.15});
    s.joints.push_back({"mid", 0, Vec3(0, 0.5, 0), Vec3(0, 0.4, 0), 0.1});
    s.joints.push_back({"tip", 1, Vec3(0, 0.4, 0), Vec3(0.3, 0, 0), 0.08});
    generate_bind_vertices(s, 2, 4);
    return s;
}

PoseFrame random_pose(Rng& rng, int joints) {
    PoseFrame p = PoseFrame::identity(joints);
    for (auto& q : p.joint_rotations) {
        q = quat_from_axis_angle(uniform_vec(rng, 3, -1, 1), uni(rng, -1.2, 1.2));
    }
    p.root_translation = uniform_vec(rng, 3, -0.2, 0.2);
    return p;
}

Instance lbs_instance(Rng& rng) {
    const Skeleton skel = test_skeleton();
    const PoseFrame pose = random_pose(rng, skel.num_joints());
    const int v = static_cast<int>(rng() % skel.bind_vertices.size());
    const Eigen::RowVectorXd w = skel.blend_weights.row(v);
    const auto skin = skinning_matrices(skel, pose);
    const Vec3 gm = uniform_vec(rng, 3, -1, 1);
    const Mat3 gc = random_sym(rng);
    Instance in;
    in.x.resize(12);
    in.x.head<3>() = uniform_vec(rng, 3, -0.5, 0.5);
    const Mat3 sigma = build_covariance(random_quat(rng), uniform_vec(rng, 3, -3, -1)).sigma;
    in.x.tail<9>() = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(sigma.data());
    in.f = [=](const Eigen::VectorXd& x) {
        const auto r = lbs_transform(x.head<3>(), w, skin);
        const Mat3 s = Eigen::Map<const Mat3>(x.tail<9>().data());
        return Probe{gm.dot(r.position) + gc.cwiseProduct(r.rotation * s * r.rotation.transpose()).sum(), 0};
    };
    const auto fwd = lbs_transform(in.x.head<3>(), w, skin);
    in.analytic.resize(12);
    in.analytic.head<3>() = lbs_backward(gm, fwd);
    const Mat3 ds = fwd.rotation.transpose() * gc * fwd.rotation;
    in.analytic.tail<9>() = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(ds.data());
    return in;
}

std::uint64_t sign_state(const Eigen::VectorXd& pred, const Image& gt) {
    Hasher h;
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        h.add(gt.data[static_cast<std::size_t>(i)] > pred[i]);
    }
    return h.h;
}

Image image_from(const Eigen::VectorXd& v, int h, int w, int c) {
    Image img(h, w, c);
    std::copy(v.data(), v.data() + v.size(), img.data.begin());
    return img;
}

Instance nll_instance(Rng& rng) {
    constexpr int kH = 5, kW = 4;
    const Image gt = random_image(rng, kH, kW, 3, 0, 1);
    LossWeights w;
    w.lambda_reg = std::vector<double>{0.5, 1.0, 2.0}[rng() % 3];
    const int nc = kH * kW * 3;
    Instance in;
    in.x.resize(nc + kH * kW);
    in.x.head(nc) = uniform_vec(rng, nc, 0, 1);
    in.x.tail(kH * kW) = uniform_vec(rng, kH * kW, 0.05, 1.0);
    in.f = [=](const Eigen::VectorXd& x) {
        const auto r = nll_loss(gt, image_from(x.head(nc), kH, kW, 3), image_from(x.tail(kH * kW), kH, kW, 1), w);
        return Probe{r.value, sign_state(x.head(nc), gt)};
    };
    const auto r = nll_loss(gt, image_from(in.x.head(nc), kH, kW, 3), image_from(in.x.tail(kH * kW), kH, kW, 1), w);
    in.analytic.resize(in.x.size());
    in.analytic.head(nc) = Eigen::Map<const Eigen::VectorXd>(r.d_color.data.data(), nc);
    in.analytic.tail(kH * kW) = Eigen::Map<const Eigen::VectorXd>(r.d_uncertainty.data.data(), kH * kW);
    return in;
}

Instance l1_instance(Rng& rng) {
    constexpr int kH = 4, kW = 5;
    const Image gt = random_image(rng, kH, kW, 3, 0, 1);
    Instance in;
    in.x = uniform_vec(rng, kH * kW * 3, 0, 1);
    in.f = [=](const Eigen::VectorXd& x) {
        return Probe{l1_loss(gt, image_from(x, kH, kW, 3)).value, sign_state(x, gt)};
    };
    const auto r = l1_loss(gt, image_from(in.x, kH, kW, 3));
    in.analytic = Eigen::Map<const Eigen::VectorXd>(r.grad.data.data(), in.x.size());
    return in;
}

Instance mask_instance(Rng& rng) {
    constexpr int kH = 6, kW = 5;
    Image m = random_image(rng, kH, kW, 1, 0, 1);
    for (double& v : m.data) {
        v = v > 0.5 ? 1.0 : 0.0;
    }
    Instance in;
    in.x = uniform_vec(rng, kH * kW, 0, 1);
    in.f = [=](const Eigen::VectorXd& x) { return Probe{mask_loss(image_from(x, kH, kW, 1), m).value, 0}; };
    const auto r = mask_loss(image_from(in.x, kH, kW, 1), m);
    in.analytic = Eigen::Map<const Eigen::VectorXd>(r.grad.data.data(), in.x.size());
    return in;
}

Instance ssim_instance(Rng& rng) {
    constexpr int kSize = 16;
    const Image gt = random_image(rng, kSize, kSize, 3, 0, 1);
    Instance in;
    in.x = uniform_vec(rng, kSize * kSize * 3, 0, 1);
    in.f = [=](const Eigen::VectorXd& x) { return Probe{ssim_loss(image_from(x, kSize, kSize, 3), gt).value, 0}; };
    const auto r = ssim_loss(image_from(in.x, kSize, kSize, 3), gt);
    in.analytic = Eigen::Map<const Eigen::VectorXd>(r.grad.data.data(), in.x.size());
    in.h = 1e-5;
    return in;
}

RowMatrix rows_from(const Eigen::VectorXd& v, Eigen::Index offset, Eigen::Index rows) {
    return Eigen::Map<const RowMatrix>(v.data() + offset, rows, HeadLayout::kSize);
}

Instance spatial_instance(Rng& rng) {
    constexpr int kN = 8;
    std::vector<Vec3> pts;
    std::vector<double> sigma;
    for (int i = 0; i < kN; ++i) {
        pts.push_back(uniform_vec(rng, 3, -1, 1));
        sigma.push_back(uni(rng, 0.1, 2.0));
    }
    const KnnGraph graph = build_knn_graph(pts, 3);
    const LossWeights w;
    Instance in;
    in.x = uniform_vec(rng, kN * HeadLayout::kSize, -1, 1);
    in.f = [=](const Eigen::VectorXd& x) { return Probe{spatial_loss(rows_from(x, 0, kN), sigma, graph, w).value, 0}; };
    const auto r = spatial_loss(rows_from(in.x, 0, kN), sigma, graph, w);
    in.analytic = Eigen::Map<const Eigen::VectorXd>(r.d_head.data(), in.x.size());
    return in;
}

Instance temporal_instance(Rng& rng) {
    constexpr int kN = 5, kS = 2;
    constexpr Eigen::Index kBlock = kN * HeadLayout::kSize;
    std::vector<std::vector<double>> sig(kS);
    for (auto& s : sig) {
        for (int i = 0; i < kN; ++i) {
            s.push_back(uni(rng, 0.1, 2.0));
        }
    }
    const LossWeights w;
    auto samples = [sig](const Eigen::VectorXd& x) {
        std::vector<TemporalSample> out;
        for (int s = 0; s < kS; ++s) {
            TemporalSample ts;
            ts.prev = rows_from(x, (3 * s + 0) * kBlock, kN);
            ts.cur = rows_from(x, (3 * s + 1) * kBlock, kN);
            ts.next = rows_from(x, (3 * s + 2) * kBlock, kN);
            ts.sigma = sig[static_cast<std::size_t>(s)];
            out.push_back(ts);
        }
        return out;
    };
    Instance in;
    in.x = uniform_vec(rng, 3 * kS * kBlock, -1, 1);
    in.f = [=](const Eigen::VectorXd& x) { return Probe{temporal_loss(samples(x), w).value, 0}; };
    const auto r = temporal_loss(samples(in.x), w);
    in.analytic.resize(in.x.size());
    for (int s = 0; s < kS; ++s) {
        in.analytic.segment((3 * s + 0) * kBlock, kBlock) = Eigen::Map<const Eigen::VectorXd>(r.d_prev[s].data(), kBlock);
        in.analytic.segment((3 * s + 1) * kBlock, kBlock) = Eigen::Map<const Eigen::VectorXd>(r.d_cur[s].data(), kBlock);
        in.analytic.segment((3 * s + 2) * kBlock, kBlock) = Eigen::Map<const Eigen::VectorXd>(r.d_next[s].data(), kBlock);
    }
    return in;
}

constexpr int kGaussianParams = 14;

GaussianCloud unpack_cloud(const Eigen::VectorXd& x, const std::vector<int>& bind) {
    GaussianCloud c;
    for (std::size_t i = 0; i < bind.size(); ++i) {
        const auto p = x.segment<kGaussianParams>(static_cast<Eigen::Index>(i) * kGaussianParams);
        Gaussian3D g;
        g.mean = p.head<3>();
        g.rotation = p.segment<4>(3);
        g.log_scale = p.segment<3>(7);
        g.opacity_logit = p[10];
        g.color = p.segment<3>(11);
        g.bind_vertex = bind[i];
        c.gaussians.push_back(g);
    }
    return c;
}

Instance pipeline_instance(Rng& rng) {
    const Skeleton skel = test_skeleton();
    const int n = 2 + static_cast<int>(rng() % 3);
    constexpr int kSize = 10;
    DeformationNetConfig cfg;
    cfg.depth = 2;
    cfg.width = 8;
    cfg.skip_layer = 1;
    cfg.xyz = {2, false};
    cfg.time = {2, false};
    cfg.pose_dim = 4 * skel.num_joints();
    auto net = std::make_shared<DeformationNet>(cfg);
    net->params() = uniform_vec(rng, net->params().size(), -0.3, 0.3);
    const PoseFrame pose = random_pose(rng, skel.num_joints());
    const double t = uni(rng, 0, 1);
    const Camera cam = Camera::look_at(Vec3(0.2, 0.4, -2.2), Vec3(0, 0.45, 0), Vec3(0, -1, 0), {9, 9, 4.5, 4.5},
                                       kSize, kSize);
    PipelineOptions opt;
    opt.raster.tile_size = 4;
    opt.raster.background = Vec3(0.2, 0.3, 0.1);

    std::vector<int> bind;
    Eigen::VectorXd x(n * kGaussianParams);
    for (int i = 0; i < n; ++i) {
        const int v = static_cast<int>(rng() % skel.bind_vertices.size());
        bind.push_back(v);
        auto p = x.segment<kGaussianParams>(i * kGaussianParams);
        p.head<3>() = skel.bind_vertices[static_cast<std::size_t>(v)] + uniform_vec(rng, 3, -0.05, 0.05);
        p.segment<4>(3) = random_quat(rng);
        p.segment<3>(7) = uniform_vec(rng, 3, -2.2, -1.4);
        p[10] = uni(rng, -1, 1.5);
        p.segment<3>(11) = uniform_vec(rng, 3, 0, 1);
    }
    const Image dc = random_image(rng, kSize, kSize, 3, -1, 1);
    const Image du = random_image(rng, kSize, kSize, 1, -1, 1);
    const Image dop = random_image(rng, kSize, kSize, 1, -1, 1);
    const Eigen::Index np = net->params().size();

    Instance in;
    in.x.resize(x.size() + np);
    in.x << x, net->params();
    in.f = [=](const Eigen::VectorXd& xx) {
        DeformationNet local = *net;
        local.params() = xx.tail(np);
        const auto st = full_forward(unpack_cloud(xx.head(x.size()), bind), &local, skel, pose, t, cam, opt);
        Hasher h;
        h.add(contributor_state(st.render));
        h.add(relu_state(st.net_cache));
        for (int s : st.splat_of) {
            h.add(static_cast<std::uint64_t>(s + 1));
        }
        return Probe{dot(st.render.color, dc) + dot(st.render.uncertainty, du) + dot(st.render.opacity, dop), h.h};
    };
    const GaussianCloud cloud = unpack_cloud(x, bind);
    const auto st = full_forward(cloud, net.get(), skel, pose, t, cam, opt);
    // Plain finite differences see the network-input path that training cuts,
    // so the check differentiates through it as well.
    const auto g = full_backward(cloud, net.get(), st, &dc, &du, &dop, nullptr, false);
    in.analytic.resize(in.x.size());
    for (int i = 0; i < n; ++i) {
        auto a = in.analytic.segment<kGaussianParams>(i * kGaussianParams);
        const auto ui = static_cast<std::size_t>(i);
        a << g.cloud.mean[ui], g.cloud.rotation[ui], g.cloud.log_scale[ui], g.cloud.opacity_logit[ui], g.cloud.color[ui];
    }
    in.analytic.tail(np) = g.net;
    return in;
}

const std::map<std::string, Builder>& builders() {
    static const std::map<std::string, Builder> table = {
        {"build_covariance", covariance_instance},
        {"projection", projection_instance},
        {"rasterize_color", [](Rng& r) { return raster_instance(r, 0); }},
        {"rasterize_uncertainty", [](Rng& r) { return raster_instance(r, 1); }},
        {"rasterize_opacity", [](Rng& r) { return raster_instance(r, 2); }},
        {"deformation_net", net_instance},
        {"apply_deformation", deformation_instance},
        {"lbs", lbs_instance},
        {"l1", l1_instance},
        {"nll", nll_instance},
        {"mask", mask_instance},
        {"ssim", ssim_instance},
        {"spatial", spatial_instance},
        {"temporal", temporal_instance},
        {"full_pipeline", pipeline_instance},
    };
    return table;
}

} // namespace

const std::vector<std::string>& gradcheck_ops() {
    static const std::vector<std::string> ops = {
        "build_covariance", "projection", "rasterize_color", "rasterize_uncertainty", "rasterize_opacity",
        "deformation_net",  "apply_deformation", "lbs",     "l1",       "nll",
        "mask",             "ssim",       "spatial",         "temporal", "full_pipeline"};
    return ops;
}

GradcheckResult run_gradcheck(const std::string& op, const GradcheckOptions& opt) {
    const auto it = builders().find(op);
    if (it == builders().end()) {
        throw InvalidInput("unknown gradcheck operation '" + op + "'");
    }
    const auto start = std::chrono::steady_clock::now();
    Rng rng(opt.seed ^ std::hash<std::string>{}(op));
    GradcheckResult res;
    res.op = op;
    int attempts = 0;
    while (res.instances < opt.instances) {
        if (++attempts > 20 * opt.instances) {
            throw Fault("gradcheck for '" + op + "' could not find stable instances");
        }
        Instance in = it->second(rng);
        if (op == opt.corrupt) {
            const Eigen::Index i = in.coords.empty() ? 0 : in.coords.front();
            in.analytic[i] += 0.1 * in.analytic.cwiseAbs().maxCoeff() + 1e-3;
        }
        const auto cmp = compare_finite_differences(in.f, in.x, in.analytic, in.h, in.coords);
        if (!cmp.stable) {
            ++res.discarded;
            continue;
        }
        ++res.instances;
        res.max_rel_error = std::max(res.max_rel_error, cmp.rel_error);
    }
    res.passed = res.max_rel_error < opt.tolerance;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

} // namespace occsplat
