#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>

namespace occsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Quaternions are stored as (w, x, y, z) 4-vectors throughout.
using Quat = Vec4;

inline Quat identity_quat() { return Quat(1.0, 0.0, 0.0, 0.0); }

/// Hamilton product a ⊗ b.
Quat quat_multiply(const Quat& a, const Quat& b);

/// Unit quaternion for a rotation of `angle` radians about `axis`.
Quat quat_from_axis_angle(const Vec3& axis, double angle);

/// Rotation matrix of a unit quaternion. No normalization is applied.
Mat3 quat_to_matrix(const Quat& q);

/// Gradient of L w.r.t. the four (w,x,y,z) components given dL/dR, for
/// R = quat_to_matrix(q) evaluated without normalization.
Quat quat_to_matrix_backward(const Quat& q, const Mat3& dL_dR);

/// Normalizes q; throws InvalidInput for a (near-)zero quaternion.
Quat normalize_quat(const Quat& q);

/// Adjoint of q -> q/|q|.
Quat normalize_quat_backward(const Quat& q, const Quat& dL_dqhat);

Quat matrix_to_quat(const Mat3& r);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Anisotropic 3D Gaussian primitive. Scale is stored as log std-dev and
/// opacity as a logit so unconstrained updates keep both in range.
struct Gaussian3D {
    Vec3 mean = Vec3::Zero();
    Quat rotation = identity_quat();
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Constant(0.5);
    int bind_vertex = 0;

    double opacity() const { return sigmoid(opacity_logit); }
};

/// Symmetric PSD covariance Σ = R S Sᵀ Rᵀ.
struct Covariance3D {
    Mat3 sigma = Mat3::Identity();
};

struct Pinhole {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
};

/// World-to-camera rigid transform plus pinhole intrinsics. Camera axes follow
/// the x-right, y-down, z-forward convention; pixel centers sit at integer
/// coordinates.
struct Camera {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    Pinhole intrinsics;
    int height = 1;
    int width = 1;

    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    Vec3 center() const { return -rotation.transpose() * translation; }

    /// Builds a camera at `eye` whose principal ray passes through `target`.
    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, const Pinhole& k,
                          int height, int width);

    /// Throws InvalidInput when the rotation block is not orthonormal or the
    /// image size is not positive.
    void validate() const;
};

struct Gaussian2D {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    double depth = 0.0;
    int source = -1;
};

struct ProjectionParams {
    double near_plane = 0.01;
    /// Isotropic low-pass floor added to the screen-space covariance (px²).
    double lowpass = 0.3;
    /// Culling footprint in standard deviations.
    double cull_sigmas = 3.0;
};

Covariance3D build_covariance(const Quat& q, const Vec3& log_scale);

struct CovarianceGrad {
    Quat d_rotation = Quat::Zero();
    Vec3 d_log_scale = Vec3::Zero();
};

/// Adjoint of build_covariance. `dL_dsigma` is the gradient with respect to
/// every entry of the full 3×3 matrix (both off-diagonal halves), which is
/// symmetric whenever the loss treats Σ symmetrically.
CovarianceGrad build_covariance_backward(const Quat& q, const Vec3& log_scale, const Mat3& dL_dsigma);

/// Projects a world-space Gaussian. Returns std::nullopt when the Gaussian is
/// culled (behind the near plane or its footprint misses the image).
std::optional<Gaussian2D> project_gaussian(const Vec3& mean, const Covariance3D& cov, const Camera& cam,
                                           const ProjectionParams& params = {});

struct ProjectionGrad {
    Vec3 d_mean = Vec3::Zero();
    Mat3 d_cov = Mat3::Zero();
};

/// Adjoint of project_gaussian for a non-culled Gaussian. Depth receives no
/// gradient (it only orders primitives).
ProjectionGrad project_gaussian_backward(const Vec3& mean, const Covariance3D& cov, const Camera& cam,
                                         const Vec2& dL_dmean2d, const Mat2& dL_dcov2d);

} // namespace occsplat
