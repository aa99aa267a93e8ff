#include "occsplat/trainer.hpp"

#include "occsplat/errors.hpp"
#include "occsplat/evaluator.hpp"
#include "occsplat/random.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

namespace occsplat {

namespace {

constexpr int kNetGroup = 5;

double group_lr(const TrainConfig& cfg, int group, int iteration) {
    switch (group) {
    case 0:
        return exp_decay_lr(cfg.lr.means_init, cfg.lr.means_final,
                            static_cast<double>(iteration) / std::max(1, cfg.iterations));
    case 1:
        return cfg.lr.rotation;
    case 2:
        return cfg.lr.log_scale;
    case 3:
        return cfg.lr.opacity;
    case 4:
        return cfg.lr.color;
    default:
        return cfg.lr.net;
    }
}

std::vector<AdamGroup> fresh_adam(const TrainState& st, const AdamSettings& s) {
    std::vector<AdamGroup> groups;
    const auto n = static_cast<Eigen::Index>(st.cloud.size());
    for (CloudGroup g : kCloudGroups) {
        groups.emplace_back(group_name(g), n * group_width(g), s.eps_gaussian);
    }
    groups.emplace_back("net", st.net.params().size(), s.eps_net);
    return groups;
}

int temporal_stride(const TrainConfig& cfg) { return cfg.loss.frame_interval; }

void prune(TrainState& st, const TrainConfig& cfg) {
    std::vector<int> keep;
    for (std::size_t i = 0; i < st.cloud.size(); ++i) {
        if (st.cloud.gaussians[i].opacity() >= cfg.prune_opacity) {
            keep.push_back(static_cast<int>(i));
        }
    }
    if (keep.size() == st.cloud.size() || keep.empty()) {
        return;
    }
    GaussianCloud next;
    for (int i : keep) {
        next.gaussians.push_back(st.cloud.gaussians[static_cast<std::size_t>(i)]);
    }
    for (int gi = 0; gi < kNetGroup; ++gi) {
        AdamGroup& g = st.adam[static_cast<std::size_t>(gi)];
        const int w = group_width(kCloudGroups[gi]);
        AdamGroup kept(g.name, static_cast<Eigen::Index>(keep.size()) * w, g.eps);
        kept.step = g.step;
        for (std::size_t k = 0; k < keep.size(); ++k) {
            kept.m.segment(static_cast<Eigen::Index>(k) * w, w) = g.m.segment(keep[k] * w, w);
            kept.v.segment(static_cast<Eigen::Index>(k) * w, w) = g.v.segment(keep[k] * w, w);
        }
        g = std::move(kept);
    }
    spdlog::info("pruned {} of {} Gaussians at iteration {}", st.cloud.size() - keep.size(), st.cloud.size(),
                 st.iteration);
    st.cloud = std::move(next);
    st.graph = build_knn_graph(st.cloud.means(), cfg.loss.knn);
}

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

} // namespace

void TrainConfig::validate() const {
    // warmup == iterations is a warmup-only run.
    if (iterations < 1 || warmup < 0 || warmup > iterations) {
        throw InvalidInput("training needs iterations ≥ 1 and 0 ≤ warmup ≤ iterations");
    }
    for (double r : {lr.means_init, lr.means_final, lr.rotation, lr.log_scale, lr.opacity, lr.color, lr.net}) {
        if (!(r >= 0.0) || !std::isfinite(r)) {
            throw InvalidInput("learning rates must be non-negative and finite");
        }
    }
    if (init_per_bone < 1 || !(init_opacity > 0.0 && init_opacity < 1.0)) {
        throw InvalidInput("init needs per-bone count ≥ 1 and opacity in (0, 1)");
    }
    if (temporal_samples < 1 || prune_interval < 1 || !(prune_opacity >= 0.0 && prune_opacity < 1.0)) {
        throw InvalidInput("invalid temporal sample count or pruning settings");
    }
    adam.validate();
    net.validate();
    loss.validate();
}

GaussianCloud init_cloud(const Skeleton& skel, int n_per_bone, std::mt19937_64& rng, double opacity) {
    if (n_per_bone < 1) {
        throw InvalidInput("init_cloud needs at least one Gaussian per bone");
    }
    skel.validate();
    if (skel.bind_vertices.empty()) {
        throw InvalidInput("skeleton has no bind vertices to attach Gaussians to");
    }
    const auto heads = skel.bind_heads();
    const auto tails = skel.bind_tails();
    const int nj = skel.num_joints();
    const int total = n_per_bone * nj;

    std::vector<double> area(static_cast<std::size_t>(nj));
    double area_sum = 0.0;
    for (int j = 0; j < nj; ++j) {
        area[j] = std::max(1e-12, skel.joints[j].radius * (tails[j] - heads[j]).norm());
        area_sum += area[j];
    }
    std::vector<int> count(static_cast<std::size_t>(nj), 1);
    int assigned = nj;
    for (int j = 0; j < nj; ++j) {
        const int extra = static_cast<int>(std::floor((total - nj) * area[j] / area_sum));
        count[j] += extra;
        assigned += extra;
    }
    for (int j = 0; assigned < total; j = (j + 1) % nj, ++assigned) {
        ++count[j];
    }

    GaussianCloud cloud;
    for (int j = 0; j < nj; ++j) {
        const Vec3 axis = tails[j] - heads[j];
        const Vec3 dir = axis.norm() > 0.0 ? Vec3(axis.normalized()) : Vec3::UnitY();
        const Vec3 helper = std::abs(dir.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
        const Vec3 e1 = dir.cross(helper).normalized();
        const Vec3 e2 = dir.cross(e1);
        for (int i = 0; i < count[j]; ++i) {
            const double u = uniform01(rng);
            const double a = 2.0 * std::numbers::pi * uniform01(rng);
            Gaussian3D g;
            g.mean = heads[j] + u * axis + skel.joints[j].radius * (std::cos(a) * e1 + std::sin(a) * e2);
            g.opacity_logit = logit(opacity);
            g.color = Vec3::Constant(0.5);
            g.bind_vertex = nearest_bind_vertex(skel, g.mean);
            g.log_scale = Vec3::Constant(std::log(0.5 * skel.joints[j].radius));
            cloud.gaussians.push_back(g);
        }
    }
    const std::size_t n = cloud.size();
    if (n > 1) {
        const int k = static_cast<int>(std::min<std::size_t>(3, n - 1));
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> d;
            for (std::size_t o = 0; o < n; ++o) {
                if (o != i) {
                    d.push_back((cloud.gaussians[i].mean - cloud.gaussians[o].mean).norm());
                }
            }
            std::partial_sort(d.begin(), d.begin() + k, d.end());
            double mean = 0.0;
            for (int q = 0; q < k; ++q) {
                mean += d[q];
            }
            mean = std::max(mean / k, 1e-4);
            cloud.gaussians[i].log_scale = Vec3::Constant(std::log(mean));
        }
    }
    return cloud;
}

Mode active_mode(const TrainConfig& cfg, int iteration) { return iteration < cfg.warmup ? Mode::A : cfg.mode; }

PipelineOptions step_options(const TrainConfig& cfg, const Dataset& ds, int iteration) {
    RasterConfig raster;
    raster.background = ds.spec.background;
    PipelineOptions o = options_for_mode(active_mode(cfg, iteration), raster);
    o.use_net = cfg.mode != Mode::A || cfg.baseline_uses_net;
    return o;
}

TrainState init_state(const TrainConfig& cfg, const Dataset& ds) {
    cfg.validate();
    TrainState st;
    st.rng.seed(cfg.seed);
    st.cloud = init_cloud(ds.skeleton, cfg.init_per_bone, st.rng, cfg.init_opacity);

    DeformationNetConfig nc = cfg.net;
    nc.pose_dim = 4 * ds.skeleton.num_joints();
    st.net = DeformationNet(nc);
    st.net.initialize(st.rng);
    Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
    for (const auto& g : st.cloud.gaussians) {
        lo = lo.cwiseMin(g.mean);
        hi = hi.cwiseMax(g.mean);
    }
    st.net.bbox_center = 0.5 * (lo + hi);
    st.net.bbox_half_extent = (0.55 * (hi - lo)).cwiseMax(Vec3::Constant(1e-3));

    st.graph = build_knn_graph(st.cloud.means(), cfg.loss.knn);
    st.adam = fresh_adam(st, cfg.adam);
    return st;
}

StepReport train_step(TrainState& st, const Dataset& ds, const TrainConfig& cfg) {
    const int T = ds.frames();
    const int it = st.iteration;
    const Mode mode = active_mode(cfg, it);
    const PipelineOptions opt = step_options(cfg, ds, it);
    const int frame = static_cast<int>(uniform01(st.rng) * T);
    const std::size_t n = st.cloud.size();

    StepReport rep;
    rep.iteration = it;
    rep.mode = mode;
    rep.frame = frame;

    const DeformationNet* net = opt.use_net ? &st.net : nullptr;
    const auto fwd = full_forward(st.cloud, net, ds.skeleton, ds.poses[static_cast<std::size_t>(frame)],
                                  ds.t_norm(frame), ds.cameras[0], opt);
    auto obj = image_objective(fwd.render, ds.occluded[static_cast<std::size_t>(frame)],
                               ds.skel_mask[static_cast<std::size_t>(frame)], mode, cfg.loss);
    rep.terms = obj.terms;

    RowMatrix extra;
    const RowMatrix* extra_ptr = nullptr;
    if (mode == Mode::C || mode == Mode::D) {
        std::vector<double> sigma(n);
        for (std::size_t i = 0; i < n; ++i) {
            sigma[i] = fwd.deform[i].sigma;
        }
        auto spa = spatial_loss(fwd.net_raw, sigma, st.graph, cfg.loss);
        rep.terms.spa = spa.value;
        extra = cfg.loss.lambda_spa * spa.d_head;
        extra_ptr = &extra;
    }
    auto grad = full_backward(st.cloud, net, fwd, &obj.d_color, opt.render_sigma ? &obj.d_uncertainty : nullptr,
                              &obj.d_opacity, extra_ptr);

    if (mode == Mode::D) {
        const int k = temporal_stride(cfg);
        if (T < 2 * k + 1) {
            throw InvalidInput("temporal term needs at least 2k+1 frames (k = " + std::to_string(k) + ", T = " +
                               std::to_string(T) + ")");
        }
        std::vector<TemporalSample> samples;
        std::vector<std::array<NetCache, 3>> caches(static_cast<std::size_t>(cfg.temporal_samples));
        for (int s = 0; s < cfg.temporal_samples; ++s) {
            const int t = k + static_cast<int>(uniform01(st.rng) * (T - 2 * k));
            auto& c = caches[static_cast<std::size_t>(s)];
            TemporalSample ts;
            ts.prev = evaluate_net(st.cloud, st.net, ds.poses[t - k], ds.t_norm(t - k), &c[0]);
            ts.cur = evaluate_net(st.cloud, st.net, ds.poses[t], ds.t_norm(t), &c[1]);
            ts.next = evaluate_net(st.cloud, st.net, ds.poses[t + k], ds.t_norm(t + k), &c[2]);
            ts.sigma.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                ts.sigma[i] = softplus(ts.cur(static_cast<Eigen::Index>(i), HeadLayout::kSigma));
            }
            samples.push_back(std::move(ts));
        }
        const auto tl = temporal_loss(samples, cfg.loss);
        rep.terms.temp = tl.value;
        for (std::size_t s = 0; s < samples.size(); ++s) {
            st.net.backward(caches[s][0], cfg.loss.lambda_temp * tl.d_prev[s], grad.net);
            st.net.backward(caches[s][1], cfg.loss.lambda_temp * tl.d_cur[s], grad.net);
            st.net.backward(caches[s][2], cfg.loss.lambda_temp * tl.d_next[s], grad.net);
        }
    }

    rep.total = total_loss(rep.terms, mode, cfg.loss);
    rep.psnr_train = psnr(fwd.render.color, ds.occluded[static_cast<std::size_t>(frame)]);
    if (!std::isfinite(rep.total)) {
        throw Fault("non-finite loss at iteration " + std::to_string(it));
    }

    const std::vector<Quat> before = [&] {
        std::vector<Quat> q;
        for (const auto& g : st.cloud.gaussians) {
            q.push_back(g.rotation);
        }
        return q;
    }();
    for (int gi = 0; gi < kNetGroup; ++gi) {
        const CloudGroup g = kCloudGroups[gi];
        Eigen::VectorXd p = pack_group(st.cloud, g);
        const Eigen::VectorXd gr = grad.cloud.pack(g);
        if (!all_finite(gr)) {
            throw Fault(std::string("non-finite gradient in group ") + group_name(g) + " at iteration " +
                        std::to_string(it));
        }
        adam_step(st.adam[static_cast<std::size_t>(gi)], p, gr, group_lr(cfg, gi, it), cfg.adam);
        unpack_group(st.cloud, g, p);
    }
    if (opt.use_net) {
        if (!all_finite(grad.net)) {
            throw Fault("non-finite network gradient at iteration " + std::to_string(it));
        }
        adam_step(st.adam[kNetGroup], st.net.params(), grad.net, group_lr(cfg, kNetGroup, it), cfg.adam);
    }
    for (std::size_t i = 0; i < n; ++i) {
        Quat& q = st.cloud.gaussians[i].rotation;
        if (q != before[i]) {
            q = normalize_quat(q);
        }
    }
    st.cloud.check_finite();

    ++st.iteration;
    if (cfg.prune_opacity > 0.0 && st.iteration > cfg.warmup && st.iteration % cfg.prune_interval == 0) {
        prune(st, cfg);
    }
    return rep;
}

void train(TrainState& state, const Dataset& ds, const TrainConfig& cfg,
           const std::function<void(const StepReport&, const TrainState&)>& on_step) {
    cfg.validate();
    if (ds.frames() < 1 || ds.cameras.empty()) {
        throw InvalidInput("dataset has no frames or no training camera");
    }
    if (cfg.mode == Mode::D && ds.frames() < 2 * cfg.loss.frame_interval + 1) {
        throw InvalidInput("mode D needs at least 2k+1 frames (k = " + std::to_string(cfg.loss.frame_interval) +
                           ", T = " + std::to_string(ds.frames()) + ")");
    }
    while (state.iteration < cfg.iterations) {
        const StepReport rep = train_step(state, ds, cfg);
        if (on_step) {
            on_step(rep, state);
        }
    }
}

std::string metrics_header() { return "iteration,mode,l1,nll,spa,temp,mask,ssim,psnr_train\n"; }

std::string metrics_row(const StepReport& r) {
    std::ostringstream ss;
    ss << r.iteration << ',' << mode_letter(r.mode);
    for (double v : {r.terms.l1, r.terms.nll, r.terms.spa, r.terms.temp, r.terms.mask, r.terms.ssim, r.psnr_train}) {
        ss << ',' << format_metric(v);
    }
    ss << '\n';
    return ss.str();
}

TensorFile state_to_file(const TrainState& st, const std::string& config_hash) {
    TensorFile f;
    f.config_hash = config_hash;
    const auto n = static_cast<std::int64_t>(st.cloud.size());
    f.tensors["iteration"] = Tensor::i64({st.iteration});
    for (CloudGroup g : kCloudGroups) {
        const Eigen::VectorXd v = pack_group(st.cloud, g);
        f.tensors[std::string("cloud.") + group_name(g)] =
            Tensor::f64(std::vector<double>(v.data(), v.data() + v.size()), {n, group_width(g)});
    }
    std::vector<std::int64_t> bind;
    for (const auto& g : st.cloud.gaussians) {
        bind.push_back(g.bind_vertex);
    }
    f.tensors["cloud.bind_vertex"] = Tensor::i64(bind);

    const auto& p = st.net.params();
    f.tensors["net.params"] = Tensor::f64(std::vector<double>(p.data(), p.data() + p.size()));
    f.tensors["net.bbox"] = Tensor::f64({st.net.bbox_center.x(), st.net.bbox_center.y(), st.net.bbox_center.z(),
                                         st.net.bbox_half_extent.x(), st.net.bbox_half_extent.y(),
                                         st.net.bbox_half_extent.z()});
    for (const auto& g : st.adam) {
        f.tensors["adam." + g.name + ".m"] = Tensor::f64(std::vector<double>(g.m.data(), g.m.data() + g.m.size()));
        f.tensors["adam." + g.name + ".v"] = Tensor::f64(std::vector<double>(g.v.data(), g.v.data() + g.v.size()));
        f.tensors["adam." + g.name + ".step"] = Tensor::i64({g.step});
    }
    std::ostringstream rng;
    rng << st.rng;
    f.tensors["rng"] = Tensor::u8(rng.str());

    std::vector<std::int64_t> nb;
    std::vector<double> wt;
    for (std::size_t i = 0; i < st.graph.neighbors.size(); ++i) {
        for (std::size_t q = 0; q < st.graph.neighbors[i].size(); ++q) {
            nb.push_back(st.graph.neighbors[i][q]);
            wt.push_back(st.graph.weights[i][q]);
        }
    }
    const std::int64_t k = st.graph.neighbors.empty() ? 0 : static_cast<std::int64_t>(st.graph.neighbors[0].size());
    f.tensors["graph.neighbors"] = Tensor::i64(nb, {static_cast<std::int64_t>(st.graph.neighbors.size()), k});
    f.tensors["graph.weights"] = Tensor::f64(wt, {static_cast<std::int64_t>(st.graph.neighbors.size()), k});
    return f;
}

TrainState state_from_file(const TensorFile& f, const TrainConfig& cfg) {
    TrainState st;
    st.iteration = static_cast<int>(f.at("iteration").as_i64().at(0));
    const auto bind = f.at("cloud.bind_vertex").as_i64();
    st.cloud.gaussians.resize(bind.size());
    for (std::size_t i = 0; i < bind.size(); ++i) {
        st.cloud.gaussians[i].bind_vertex = static_cast<int>(bind[i]);
    }
    for (CloudGroup g : kCloudGroups) {
        const auto v = f.at(std::string("cloud.") + group_name(g)).as_f64();
        if (v.size() != bind.size() * static_cast<std::size_t>(group_width(g))) {
            throw InvalidInput(std::string("checkpoint group ") + group_name(g) + " has the wrong size");
        }
        unpack_group(st.cloud, g, Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }

    const auto params = f.at("net.params").as_f64();
    const auto bbox = f.at("net.bbox").as_f64();
    DeformationNetConfig nc = cfg.net;
    // Pose width is not part of the user config; recover it from the size.
    for (nc.pose_dim = 0; nc.pose_dim <= 4096; ++nc.pose_dim) {
        if (DeformationNet(nc).params().size() == static_cast<Eigen::Index>(params.size())) {
            break;
        }
    }
    if (nc.pose_dim > 4096) {
        throw InvalidInput("checkpoint network does not match the configured architecture");
    }
    st.net = DeformationNet(nc);
    st.net.params() = Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size()));
    if (bbox.size() != 6) {
        throw InvalidInput("checkpoint network box has the wrong size");
    }
    st.net.bbox_center = Vec3(bbox[0], bbox[1], bbox[2]);
    st.net.bbox_half_extent = Vec3(bbox[3], bbox[4], bbox[5]);

    st.adam = fresh_adam(st, cfg.adam);
    for (auto& g : st.adam) {
        const auto m = f.at("adam." + g.name + ".m").as_f64();
        const auto v = f.at("adam." + g.name + ".v").as_f64();
        if (static_cast<Eigen::Index>(m.size()) != g.m.size() || m.size() != v.size()) {
            throw InvalidInput("checkpoint Adam buffers for '" + g.name + "' have the wrong size");
        }
        g.m = Eigen::Map<const Eigen::VectorXd>(m.data(), g.m.size());
        g.v = Eigen::Map<const Eigen::VectorXd>(v.data(), g.v.size());
        g.step = f.at("adam." + g.name + ".step").as_i64().at(0);
    }
    std::istringstream rng(f.at("rng").as_u8());
    rng >> st.rng;
    if (!rng) {
        throw InvalidInput("checkpoint rng state is malformed");
    }

    const auto& nbt = f.at("graph.neighbors");
    const auto nb = nbt.as_i64();
    const auto wt = f.at("graph.weights").as_f64();
    const std::int64_t rows = nbt.shape.at(0);
    const std::int64_t k = nbt.shape.at(1);
    st.graph.k = static_cast<int>(k);
    st.graph.neighbors.assign(static_cast<std::size_t>(rows), {});
    st.graph.weights.assign(static_cast<std::size_t>(rows), {});
    for (std::int64_t i = 0; i < rows; ++i) {
        for (std::int64_t q = 0; q < k; ++q) {
            st.graph.neighbors[i].push_back(static_cast<int>(nb[i * k + q]));
            st.graph.weights[i].push_back(wt[i * k + q]);
        }
    }
    st.cloud.check_finite();
    return st;
}

ForwardState render_state(const TrainState& st, const Dataset& ds, const TrainConfig& cfg, int frame,
                          const Camera& cam) {
    if (frame < 0 || frame >= ds.frames()) {
        throw InvalidInput("frame index " + std::to_string(frame) + " out of range [0, " +
                           std::to_string(ds.frames()) + ")");
    }
    const PipelineOptions opt = step_options(cfg, ds, std::max(st.iteration - 1, 0));
    return full_forward(st.cloud, opt.use_net ? &st.net : nullptr, ds.skeleton,
                        ds.poses[static_cast<std::size_t>(frame)], ds.t_norm(frame), cam, opt);
}

} // namespace occsplat
