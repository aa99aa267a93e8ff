#include "occsplat/deformation_net.hpp"

#include "occsplat/errors.hpp"

#include <cmath>
#include <numbers>

namespace occsplat {

void PosEncodingConfig::validate() const {
    if (bands < 1) {
        throw InvalidInput("positional encoding needs at least one frequency band");
    }
}

void pos_encode_into(const double* x, int dim, const PosEncodingConfig& cfg, double* out) {
    for (int d = 0; d < dim; ++d) {
        if (cfg.include_input) {
            *out++ = x[d];
        }
        double freq = std::numbers::pi;
        for (int k = 0; k < cfg.bands; ++k) {
            *out++ = std::sin(freq * x[d]);
            *out++ = std::cos(freq * x[d]);
            freq *= 2.0;
        }
    }
}

void pos_encode_backward(const double* x, int dim, const PosEncodingConfig& cfg, const double* d_out, double* d_x) {
    for (int d = 0; d < dim; ++d) {
        if (cfg.include_input) {
            d_x[d] += *d_out++;
        }
        double freq = std::numbers::pi;
        for (int k = 0; k < cfg.bands; ++k) {
            d_x[d] += freq * std::cos(freq * x[d]) * *d_out++;
            d_x[d] -= freq * std::sin(freq * x[d]) * *d_out++;
            freq *= 2.0;
        }
    }
}

Eigen::VectorXd pos_encode(const Eigen::Ref<const Eigen::VectorXd>& x, const PosEncodingConfig& cfg) {
    cfg.validate();
    if (!x.allFinite()) {
        throw InvalidInput("positional encoding input is not finite");
    }
    const Eigen::VectorXd xc = x;
    Eigen::VectorXd out(cfg.output_dim(static_cast<int>(x.size())));
    pos_encode_into(xc.data(), static_cast<int>(xc.size()), cfg, out.data());
    return out;
}

void DeformationNetConfig::validate() const {
    xyz.validate();
    time.validate();
    if (depth < 0 || width < 1 || pose_dim < 0) {
        throw InvalidInput("deformation network needs depth >= 0, width >= 1, pose_dim >= 0");
    }
    if (skip_layer < 0 || (skip_layer > 0 && skip_layer >= depth)) {
        throw InvalidInput("skip layer must lie inside the hidden stack (0 disables it)");
    }
}

DeformationOutput decode_head(const Eigen::Ref<const Eigen::RowVectorXd>& raw) {
    DeformationOutput d;
    d.d_mean = raw.segment<3>(HeadLayout::kMean).transpose();
    d.d_rot_raw = raw.segment<4>(HeadLayout::kRot).transpose();
    d.d_rot = normalize_quat(identity_quat() + d.d_rot_raw);
    d.d_log_scale = raw.segment<3>(HeadLayout::kScale).transpose();
    d.sigma_raw = raw[HeadLayout::kSigma];
    d.sigma = softplus(d.sigma_raw);
    return d;
}

DeformationNet::DeformationNet(const DeformationNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int d_in = cfg_.input_dim();
    Eigen::Index offset = 0;
    auto add = [&](int in, int out) {
        Slot s;
        s.in = in;
        s.out = out;
        s.w_offset = offset;
        offset += static_cast<Eigen::Index>(in) * out;
        s.b_offset = offset;
        offset += out;
        slots_.push_back(s);
    };
    for (int l = 0; l < cfg_.depth; ++l) {
        const int in = (l == 0 ? d_in : cfg_.width) + (cfg_.skip_layer > 0 && l == cfg_.skip_layer ? d_in : 0);
        add(in, cfg_.width);
    }
    add(cfg_.depth == 0 ? d_in : cfg_.width, HeadLayout::kSize);
    params_ = Eigen::VectorXd::Zero(offset);
}

Eigen::Map<RowMatrix> DeformationNet::weight(int l) {
    const auto& s = slots_[static_cast<std::size_t>(l)];
    return {params_.data() + s.w_offset, s.out, s.in};
}

Eigen::Map<const RowMatrix> DeformationNet::weight(int l) const {
    const auto& s = slots_[static_cast<std::size_t>(l)];
    return {params_.data() + s.w_offset, s.out, s.in};
}

Eigen::Map<Eigen::VectorXd> DeformationNet::bias(int l) {
    const auto& s = slots_[static_cast<std::size_t>(l)];
    return {params_.data() + s.b_offset, s.out};
}

Eigen::Map<const Eigen::VectorXd> DeformationNet::bias(int l) const {
    const auto& s = slots_[static_cast<std::size_t>(l)];
    return {params_.data() + s.b_offset, s.out};
}

void DeformationNet::initialize(std::mt19937_64& rng) {
    params_.setZero();
    for (int l = 0; l + 1 < num_layers(); ++l) {
        const double bound = std::sqrt(6.0 / layer_in(l));
        std::uniform_real_distribution<double> dist(-bound, bound);
        auto w = weight(l);
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w.data()[i] = dist(rng);
        }
    }
}

std::vector<Eigen::Index> DeformationNet::sigma_head_indices() const {
    const auto& s = slots_.back();
    std::vector<Eigen::Index> idx;
    for (int c = 0; c < s.in; ++c) {
        idx.push_back(s.w_offset + static_cast<Eigen::Index>(HeadLayout::kSigma) * s.in + c);
    }
    idx.push_back(s.b_offset + HeadLayout::kSigma);
    return idx;
}

RowMatrix DeformationNet::encode_inputs(const std::vector<Vec3>& means, double t_norm,
                                        const Eigen::VectorXd& pose) const {
    if (pose.size() != cfg_.pose_dim) {
        throw Fault("pose vector has length " + std::to_string(pose.size()) + ", network expects " +
                    std::to_string(cfg_.pose_dim));
    }
    const int d_xyz = cfg_.xyz.output_dim(3);
    const int d_t = cfg_.time.output_dim(1);
    RowMatrix x(static_cast<Eigen::Index>(means.size()), cfg_.input_dim());
    Eigen::VectorXd shared(d_t + cfg_.pose_dim);
    pos_encode_into(&t_norm, 1, cfg_.time, shared.data());
    shared.tail(cfg_.pose_dim) = pose;
    for (std::size_t i = 0; i < means.size(); ++i) {
        const Vec3 n = (means[i] - bbox_center).cwiseQuotient(bbox_half_extent);
        double* row = x.row(static_cast<Eigen::Index>(i)).data();
        pos_encode_into(n.data(), 3, cfg_.xyz, row);
        std::copy(shared.data(), shared.data() + shared.size(), row + d_xyz);
    }
    return x;
}

std::vector<Vec3> DeformationNet::encode_inputs_backward(const std::vector<Vec3>& means,
                                                         const RowMatrix& d_encoded) const {
    if (d_encoded.rows() != static_cast<Eigen::Index>(means.size()) || d_encoded.cols() != cfg_.input_dim()) {
        throw Fault("encoded-input gradient has the wrong shape");
    }
    std::vector<Vec3> out(means.size(), Vec3::Zero());
    for (std::size_t i = 0; i < means.size(); ++i) {
        const Vec3 n = (means[i] - bbox_center).cwiseQuotient(bbox_half_extent);
        Vec3 dn = Vec3::Zero();
        pos_encode_backward(n.data(), 3, cfg_.xyz, d_encoded.row(static_cast<Eigen::Index>(i)).data(), dn.data());
        out[i] = dn.cwiseQuotient(bbox_half_extent);
    }
    return out;
}

RowMatrix DeformationNet::forward(const RowMatrix& encoded, NetCache* cache) const {
    if (encoded.cols() != cfg_.input_dim()) {
        throw Fault("encoded input has " + std::to_string(encoded.cols()) + " columns, expected " +
                    std::to_string(cfg_.input_dim()));
    }
    if (cache != nullptr) {
        cache->encoded = encoded;
        cache->layer_inputs.assign(static_cast<std::size_t>(num_layers()), RowMatrix());
        cache->pre_activations.assign(static_cast<std::size_t>(cfg_.depth), RowMatrix());
    }
    RowMatrix h = encoded;
    for (int l = 0; l < cfg_.depth; ++l) {
        RowMatrix input;
        if (cfg_.skip_layer > 0 && l == cfg_.skip_layer) {
            input.resize(h.rows(), h.cols() + encoded.cols());
            input << h, encoded;
        } else {
            input = std::move(h);
        }
        RowMatrix pre = input * weight(l).transpose();
        pre.rowwise() += bias(l).transpose();
        h = pre.cwiseMax(0.0);
        if (cache != nullptr) {
            cache->layer_inputs[static_cast<std::size_t>(l)] = std::move(input);
            cache->pre_activations[static_cast<std::size_t>(l)] = std::move(pre);
        }
    }
    const int head = cfg_.depth;
    RowMatrix out = h * weight(head).transpose();
    out.rowwise() += bias(head).transpose();
    if (!out.allFinite()) {
        throw Fault("deformation network produced non-finite output");
    }
    if (cache != nullptr) {
        cache->layer_inputs[static_cast<std::size_t>(head)] = std::move(h);
        cache->output = out;
    }
    return out;
}

void DeformationNet::backward(const NetCache& cache, const RowMatrix& d_output, Eigen::VectorXd& grad,
                              RowMatrix* d_encoded) const {
    if (cache.layer_inputs.size() != static_cast<std::size_t>(num_layers()) || cache.encoded.rows() == 0) {
        throw Fault("deformation network backward called without a forward cache");
    }
    if (d_output.rows() != cache.encoded.rows() || d_output.cols() != HeadLayout::kSize) {
        throw Fault("upstream gradient shape does not match the cached forward pass");
    }
    if (grad.size() != params_.size()) {
        throw Fault("gradient buffer length does not match parameter count");
    }
    if (d_encoded != nullptr) {
        *d_encoded = RowMatrix::Zero(cache.encoded.rows(), cache.encoded.cols());
    }
    const int d_in = cfg_.input_dim();
    auto accumulate = [&](int l, const RowMatrix& d_pre) {
        const auto& s = slots_[static_cast<std::size_t>(l)];
        Eigen::Map<RowMatrix> gw(grad.data() + s.w_offset, s.out, s.in);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + s.b_offset, s.out);
        gw.noalias() += d_pre.transpose() * cache.layer_inputs[static_cast<std::size_t>(l)];
        gb.noalias() += d_pre.colwise().sum().transpose();
    };

    const int head = cfg_.depth;
    accumulate(head, d_output);
    if (head == 0) {
        if (d_encoded != nullptr) {
            d_encoded->noalias() += d_output * weight(head);
        }
        return;
    }
    RowMatrix dh = d_output * weight(head);
    for (int l = cfg_.depth - 1; l >= 0; --l) {
        const RowMatrix& pre = cache.pre_activations[static_cast<std::size_t>(l)];
        RowMatrix d_pre = (pre.array() > 0.0).select(dh, 0.0);
        accumulate(l, d_pre);
        if (l == 0) {
            if (d_encoded != nullptr) {
                d_encoded->noalias() += d_pre * weight(l);
            }
            break;
        }
        RowMatrix d_input = d_pre * weight(l);
        if (cfg_.skip_layer > 0 && l == cfg_.skip_layer) {
            if (d_encoded != nullptr) {
                *d_encoded += d_input.rightCols(d_in);
            }
            dh = d_input.leftCols(cfg_.width);
        } else {
            dh = std::move(d_input);
        }
    }
}

namespace {

Eigen::Matrix4d left_mult(const Quat& a) {
    Eigen::Matrix4d m;
    m << a[0], -a[1], -a[2], -a[3], a[1], a[0], -a[3], a[2], a[2], a[3], a[0], -a[1], a[3], -a[2], a[1], a[0];
    return m;
}

Eigen::Matrix4d right_mult(const Quat& b) {
    Eigen::Matrix4d m;
    m << b[0], -b[1], -b[2], -b[3], b[1], b[0], b[3], -b[2], b[2], -b[3], b[0], b[1], b[3], b[2], -b[1], b[0];
    return m;
}

} // namespace

Gaussian3D apply_deformation(const Gaussian3D& g, const DeformationOutput& d) {
    Gaussian3D out = g;
    out.mean = g.mean + d.d_mean;
    out.log_scale = g.log_scale + d.d_log_scale;
    out.rotation = normalize_quat(quat_multiply(normalize_quat(g.rotation), d.d_rot));
    return out;
}

DeformationGrad apply_deformation_backward(const Gaussian3D& g, const DeformationOutput& d, const Vec3& dL_dmean,
                                           const Quat& dL_drot, const Vec3& dL_dlog_scale) {
    DeformationGrad out;
    out.d_mean = dL_dmean;
    out.d_head_mean = dL_dmean;
    out.d_log_scale = dL_dlog_scale;
    out.d_head_log_scale = dL_dlog_scale;

    const Quat qn = normalize_quat(g.rotation);
    const Quat r_raw = identity_quat() + d.d_rot_raw;
    const Quat r = normalize_quat(r_raw);
    const Quat p = quat_multiply(qn, r);
    const Quat dp = normalize_quat_backward(p, dL_drot);
    const Quat dqn = right_mult(r).transpose() * dp;
    const Quat dr = left_mult(qn).transpose() * dp;
    out.d_rotation = normalize_quat_backward(g.rotation, dqn);
    out.d_head_rot_raw = normalize_quat_backward(r_raw, dr);
    return out;
}

} // namespace occsplat
