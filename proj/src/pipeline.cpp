#include "occsplat/pipeline.hpp"

#include "occsplat/errors.hpp"

#include <cctype>

namespace occsplat {

char mode_letter(Mode m) { return static_cast<char>('A' + static_cast<int>(m)); }

Mode parse_mode(const std::string& s) {
    if (s.size() == 1) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
        if (c >= 'A' && c <= 'D') {
            return static_cast<Mode>(c - 'A');
        }
    }
    throw InvalidInput("unknown training mode '" + s + "' (expected A, B, C or D)");
}

PipelineOptions options_for_mode(Mode m, const RasterConfig& raster) {
    PipelineOptions o;
    o.use_net = m != Mode::A;
    o.render_sigma = m != Mode::A;
    o.raster = raster;
    return o;
}

RowMatrix evaluate_net(const GaussianCloud& cloud, const DeformationNet& net, const PoseFrame& pose, double t_norm,
                       NetCache* cache) {
    return net.forward(net.encode_inputs(cloud.means(), t_norm, pose.flatten()), cache);
}

ForwardState full_forward(const GaussianCloud& cloud, const DeformationNet* net, const Skeleton& skel,
                          const PoseFrame& pose, double t_norm, const Camera& cam, const PipelineOptions& opt) {
    cam.validate();
    if (opt.use_net && net == nullptr) {
        throw InvalidInput("pipeline asked to use a deformation network but none was given");
    }
    const std::size_t n = cloud.size();
    ForwardState st;
    st.camera = cam;
    st.options = opt;
    st.deform.assign(n, DeformationOutput{});
    if (opt.use_net) {
        st.net_raw = evaluate_net(cloud, *net, pose, t_norm, &st.net_cache);
        for (std::size_t i = 0; i < n; ++i) {
            st.deform[i] = decode_head(st.net_raw.row(static_cast<Eigen::Index>(i)));
        }
    }

    const auto skin = skinning_matrices(skel, pose);
    st.deformed.resize(n);
    st.lbs.resize(n);
    st.mean_obs.resize(n);
    st.cov_obs.resize(n);
    st.splat_of.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        const Gaussian3D& g = cloud.gaussians[i];
        if (g.bind_vertex < 0 || g.bind_vertex >= skel.blend_weights.rows()) {
            throw InvalidInput("Gaussian " + std::to_string(i) + " binds to a missing skeleton vertex");
        }
        st.deformed[i] = apply_deformation(g, st.deform[i]);
        const Gaussian3D& d = st.deformed[i];
        st.lbs[i] = lbs_transform(d.mean, skel.blend_weights.row(g.bind_vertex), skin);
        st.mean_obs[i] = st.lbs[i].position;
        const Mat3& rb = st.lbs[i].rotation;
        st.cov_obs[i].sigma = rb * build_covariance(d.rotation, d.log_scale).sigma * rb.transpose();
        const auto proj = project_gaussian(st.mean_obs[i], st.cov_obs[i], cam, opt.projection);
        if (!proj) {
            continue;
        }
        Splat s;
        s.mean = proj->mean;
        s.cov = proj->cov;
        s.depth = proj->depth;
        s.opacity = g.opacity();
        s.color = g.color;
        s.sigma = opt.render_sigma ? st.deform[i].sigma : 0.0;
        s.source = static_cast<int>(i);
        st.splat_of[i] = static_cast<int>(st.splats.size());
        st.splats.push_back(s);
    }
    st.render = rasterize(st.splats, cam.height, cam.width, opt.raster);
    return st;
}

PipelineGrad full_backward(const GaussianCloud& cloud, const DeformationNet* net, const ForwardState& fwd,
                           const Image* dL_dcolor, const Image* dL_duncertainty, const Image* dL_dopacity,
                           const RowMatrix* extra_head, bool stop_gradient_means) {
    const std::size_t n = cloud.size();
    if (fwd.deformed.size() != n) {
        throw Fault("forward state does not match the cloud");
    }
    const auto sg = rasterize_backward(fwd.splats, fwd.render, dL_dcolor, dL_duncertainty, dL_dopacity);

    PipelineGrad out;
    out.cloud = CloudGrad(n);
    out.head = RowMatrix::Zero(static_cast<Eigen::Index>(n), HeadLayout::kSize);
    for (std::size_t i = 0; i < n; ++i) {
        const int si = fwd.splat_of[i];
        if (si < 0) {
            continue;
        }
        const SplatGrad& g = sg[static_cast<std::size_t>(si)];
        const Gaussian3D& can = cloud.gaussians[i];
        const double alpha = can.opacity();
        out.cloud.opacity_logit[i] = g.opacity * alpha * (1.0 - alpha);
        out.cloud.color[i] = g.color;

        const auto pg = project_gaussian_backward(fwd.mean_obs[i], fwd.cov_obs[i], fwd.camera, g.mean, g.cov);
        const Vec3 d_mean_def = lbs_backward(pg.d_mean, fwd.lbs[i]);
        const Mat3& rb = fwd.lbs[i].rotation;
        const Mat3 d_cov_def = rb.transpose() * pg.d_cov * rb;
        const Gaussian3D& def = fwd.deformed[i];
        const auto cg = build_covariance_backward(def.rotation, def.log_scale, d_cov_def);
        const auto dg = apply_deformation_backward(can, fwd.deform[i], d_mean_def, cg.d_rotation, cg.d_log_scale);
        out.cloud.mean[i] = dg.d_mean;
        out.cloud.rotation[i] = dg.d_rotation;
        out.cloud.log_scale[i] = dg.d_log_scale;

        if (fwd.options.use_net) {
            auto row = out.head.row(static_cast<Eigen::Index>(i));
            row.segment<3>(HeadLayout::kMean) = dg.d_head_mean.transpose();
            row.segment<4>(HeadLayout::kRot) = dg.d_head_rot_raw.transpose();
            row.segment<3>(HeadLayout::kScale) = dg.d_head_log_scale.transpose();
            if (fwd.options.render_sigma) {
                row[HeadLayout::kSigma] = g.sigma * sigmoid(fwd.deform[i].sigma_raw);
            }
        }
    }

    if (fwd.options.use_net) {
        if (net == nullptr) {
            throw Fault("network backward requested without a network");
        }
        if (extra_head != nullptr) {
            if (extra_head->rows() != out.head.rows() || extra_head->cols() != out.head.cols()) {
                throw Fault("extra head gradient has the wrong shape");
            }
            out.head += *extra_head;
        }
        out.net = Eigen::VectorXd::Zero(net->params().size());
        if (stop_gradient_means) {
            net->backward(fwd.net_cache, out.head, out.net);
        } else {
            RowMatrix d_encoded;
            net->backward(fwd.net_cache, out.head, out.net, &d_encoded);
            const auto d_means = net->encode_inputs_backward(cloud.means(), d_encoded);
            for (std::size_t i = 0; i < n; ++i) {
                out.cloud.mean[i] += d_means[i];
            }
        }
    }
    return out;
}

} // namespace occsplat
