#pragma once

#include "occsplat/geometry.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <vector>

namespace occsplat {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PosEncodingConfig {
    int bands = 1;
    /// Prepend the raw input to the sinusoids.
    bool include_input = false;

    int output_dim(int input_dim) const { return input_dim * 2 * bands + (include_input ? input_dim : 0); }
    void validate() const;
};

/// γ(x): for each component, (sin(2^k π x), cos(2^k π x)) for k = 0..L−1,
/// optionally preceded by the raw component.
Eigen::VectorXd pos_encode(const Eigen::Ref<const Eigen::VectorXd>& x, const PosEncodingConfig& cfg);

/// Same as pos_encode, written into a caller-provided span of length
/// cfg.output_dim(x.size()).
void pos_encode_into(const double* x, int dim, const PosEncodingConfig& cfg, double* out);

/// Adjoint of pos_encode_into: accumulates dL/dx from dL/d(encoding).
void pos_encode_backward(const double* x, int dim, const PosEncodingConfig& cfg, const double* d_out, double* d_x);

struct DeformationNetConfig {
    int depth = 8;
    int width = 256;
    /// Hidden layer that additionally receives the encoded input (0 disables).
    int skip_layer = 4;
    PosEncodingConfig xyz{10, false};
    PosEncodingConfig time{6, false};
    int pose_dim = 0;

    int input_dim() const { return xyz.output_dim(3) + time.output_dim(1) + pose_dim; }
    void validate() const;
};

/// Head layout of the raw network output.
struct HeadLayout {
    static constexpr int kMean = 0;
    static constexpr int kRot = 3;
    static constexpr int kScale = 7;
    static constexpr int kSigma = 10;
    static constexpr int kSize = 11;
};

struct DeformationOutput {
    Vec3 d_mean = Vec3::Zero();
    /// Raw quaternion head; the applied rotation is normalize((1,0,0,0) + raw).
    Vec4 d_rot_raw = Vec4::Zero();
    Quat d_rot = identity_quat();
    Vec3 d_log_scale = Vec3::Zero();
    double sigma_raw = 0.0;
    double sigma = 0.0;
};

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

DeformationOutput decode_head(const Eigen::Ref<const Eigen::RowVectorXd>& raw);

/// Activations retained by a forward pass for the matching backward pass.
struct NetCache {
    RowMatrix encoded;
    std::vector<RowMatrix> layer_inputs;
    std::vector<RowMatrix> pre_activations;
    RowMatrix output;
    int rows() const { return static_cast<int>(encoded.rows()); }
};

/// The probabilistic deformation MLP. All weights live in one flat parameter
/// vector; `weight(l)` / `bias(l)` are views into it. Layer `depth` is the
/// linear output head.
class DeformationNet {
public:
    DeformationNet() = default;
    explicit DeformationNet(const DeformationNetConfig& cfg);

    const DeformationNetConfig& config() const { return cfg_; }
    int num_layers() const { return static_cast<int>(slots_.size()); }
    int layer_in(int l) const { return slots_[static_cast<std::size_t>(l)].in; }
    int layer_out(int l) const { return slots_[static_cast<std::size_t>(l)].out; }

    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    Eigen::Map<RowMatrix> weight(int l);
    Eigen::Map<const RowMatrix> weight(int l) const;
    Eigen::Map<Eigen::VectorXd> bias(int l);
    Eigen::Map<const Eigen::VectorXd> bias(int l) const;

    /// He-uniform hidden weights, zero biases, zero output head.
    void initialize(std::mt19937_64& rng);

    /// Offset and length of the σ row of the output head within params().
    std::vector<Eigen::Index> sigma_head_indices() const;

    /// Canonical box that maps means into [−1, 1]³ before encoding.
    Vec3 bbox_center = Vec3::Zero();
    Vec3 bbox_half_extent = Vec3::Ones();

    /// Builds encoded input rows for canonical means at one timestamp.
    RowMatrix encode_inputs(const std::vector<Vec3>& means, double t_norm, const Eigen::VectorXd& pose) const;

    /// dL/d(canonical mean) through the encoding, given dL/d(encoded rows).
    /// Training never calls this (stop-gradient); it exists to test that contract.
    std::vector<Vec3> encode_inputs_backward(const std::vector<Vec3>& means, const RowMatrix& d_encoded) const;

    /// Raw head outputs (N × HeadLayout::kSize). `cache` may be null.
    RowMatrix forward(const RowMatrix& encoded, NetCache* cache) const;

    /// Accumulates parameter gradients into `grad` (same length as params()).
    /// When `d_encoded` is non-null it also receives dL/d(encoded input); the
    /// training path leaves it null, which is the stop-gradient on the
    /// canonical means.
    void backward(const NetCache& cache, const RowMatrix& d_output, Eigen::VectorXd& grad,
                  RowMatrix* d_encoded = nullptr) const;

private:
    struct Slot {
        Eigen::Index w_offset = 0;
        Eigen::Index b_offset = 0;
        int in = 0;
        int out = 0;
    };
    DeformationNetConfig cfg_;
    std::vector<Slot> slots_;
    Eigen::VectorXd params_;
};

/// Deformed canonical Gaussian: additive mean / log-scale offsets and
/// q_can ⊗ Δr on the rotation, renormalized.
Gaussian3D apply_deformation(const Gaussian3D& g, const DeformationOutput& d);

struct DeformationGrad {
    Vec3 d_mean = Vec3::Zero();
    Quat d_rotation = Quat::Zero();
    Vec3 d_log_scale = Vec3::Zero();
    Vec3 d_head_mean = Vec3::Zero();
    Vec4 d_head_rot_raw = Vec4::Zero();
    Vec3 d_head_log_scale = Vec3::Zero();
};

/// Adjoint of apply_deformation w.r.t. both the canonical Gaussian and the
/// raw network head. `dL_drot` is the gradient on the deformed unit quaternion.
DeformationGrad apply_deformation_backward(const Gaussian3D& g, const DeformationOutput& d, const Vec3& dL_dmean,
                                           const Quat& dL_drot, const Vec3& dL_dlog_scale);

} // namespace occsplat
