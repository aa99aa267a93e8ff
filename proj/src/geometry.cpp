#include "occsplat/geometry.hpp"

#include "occsplat/errors.hpp"

#include <cmath>

namespace occsplat {

Quat quat_multiply(const Quat& a, const Quat& b) {
    return Quat(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

Quat quat_from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 n = axis.normalized();
    const double s = std::sin(0.5 * angle);
    return Quat(std::cos(0.5 * angle), s * n.x(), s * n.y(), s * n.z());
}

Mat3 quat_to_matrix(const Quat& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Quat quat_to_matrix_backward(const Quat& q, const Mat3& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Quat d;
    d[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                  w * g(2, 1) - 2.0 * x * g(2, 2));
    d[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                  z * g(2, 1) - 2.0 * y * g(2, 2));
    d[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                  y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return d;
}

Quat normalize_quat(const Quat& q) {
    const double n = q.norm();
    if (!(n > 1e-12)) {
        throw InvalidInput("degenerate (zero) quaternion");
    }
    return q / n;
}

Quat normalize_quat_backward(const Quat& q, const Quat& dL_dqhat) {
    const double n = q.norm();
    const Quat qhat = q / n;
    return (dL_dqhat - qhat * qhat.dot(dL_dqhat)) / n;
}

Quat matrix_to_quat(const Mat3& r) {
    const Eigen::Quaterniond e(r);
    Quat q(e.w(), e.x(), e.y(), e.z());
    return q / q.norm();
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, const Pinhole& k, int height,
                       int width) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    cam.intrinsics = k;
    cam.height = height;
    cam.width = width;
    return cam;
}

void Camera::validate() const {
    if (height <= 0 || width <= 0) {
        throw InvalidInput("camera image size must be positive");
    }
    if ((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        rotation.determinant() < 0.0) {
        throw InvalidInput("camera rotation block is not a proper orthonormal matrix");
    }
}

Covariance3D build_covariance(const Quat& q, const Vec3& log_scale) {
    const Mat3 r = quat_to_matrix(normalize_quat(q));
    const Vec3 s = log_scale.array().exp();
    const Mat3 m = r * s.asDiagonal();
    Covariance3D out;
    out.sigma = m * m.transpose();
    return out;
}

CovarianceGrad build_covariance_backward(const Quat& q, const Vec3& log_scale, const Mat3& dL_dsigma) {
    const Quat qhat = normalize_quat(q);
    const Mat3 r = quat_to_matrix(qhat);
    const Vec3 s = log_scale.array().exp();
    const Mat3 m = r * s.asDiagonal();

    // Σ = M Mᵀ  =>  dL/dM = (G + Gᵀ) M
    const Mat3 dm = (dL_dsigma + dL_dsigma.transpose()) * m;
    const Mat3 dr = dm * s.asDiagonal();

    CovarianceGrad g;
    for (int i = 0; i < 3; ++i) {
        // dL/ds_i = Σ_k R_ki dM_ki, then chain through s = exp(log_scale)
        g.d_log_scale[i] = r.col(i).dot(dm.col(i)) * s[i];
    }
    g.d_rotation = normalize_quat_backward(q, quat_to_matrix_backward(qhat, dr));
    return g;
}

namespace {

double max_eigenvalue(const Mat2& c) {
    const double mid = 0.5 * (c(0, 0) + c(1, 1));
    const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
    return mid + std::sqrt(std::max(0.0, mid * mid - det));
}

Eigen::Matrix<double, 2, 3> perspective_jacobian(const Vec3& pc, const Pinhole& k) {
    const double iz = 1.0 / pc.z();
    Eigen::Matrix<double, 2, 3> j;
    j << k.fx * iz, 0.0, -k.fx * pc.x() * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y() * iz * iz;
    return j;
}

} // namespace

std::optional<Gaussian2D> project_gaussian(const Vec3& mean, const Covariance3D& cov, const Camera& cam,
                                           const ProjectionParams& params) {
    const Vec3 pc = cam.to_camera(mean);
    if (pc.z() <= params.near_plane) {
        return std::nullopt;
    }
    const auto& k = cam.intrinsics;
    Gaussian2D g;
    g.mean = Vec2(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    const auto j = perspective_jacobian(pc, k);
    const Eigen::Matrix<double, 2, 3> t = j * cam.rotation;
    g.cov = t * cov.sigma * t.transpose();
    g.cov(1, 0) = g.cov(0, 1) = 0.5 * (g.cov(0, 1) + g.cov(1, 0));
    g.cov(0, 0) += params.lowpass;
    g.cov(1, 1) += params.lowpass;
    g.depth = pc.z();

    const double radius = params.cull_sigmas * std::sqrt(max_eigenvalue(g.cov));
    if (g.mean.x() + radius < 0.0 || g.mean.x() - radius > cam.width - 1 || g.mean.y() + radius < 0.0 ||
        g.mean.y() - radius > cam.height - 1) {
        return std::nullopt;
    }
    return g;
}

ProjectionGrad project_gaussian_backward(const Vec3& mean, const Covariance3D& cov, const Camera& cam,
                                         const Vec2& dL_dmean2d, const Mat2& dL_dcov2d_in) {
    // The forward pass symmetrizes Σ', so only the symmetric part of the
    // upstream gradient reaches Σ.
    const Mat2 dL_dcov2d = 0.5 * (dL_dcov2d_in + dL_dcov2d_in.transpose());
    const Vec3 pc = cam.to_camera(mean);
    const auto& k = cam.intrinsics;
    const double x = pc.x(), y = pc.y(), z = pc.z();
    const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;

    const auto j = perspective_jacobian(pc, k);
    const Mat3 v = cam.rotation * cov.sigma * cam.rotation.transpose();

    ProjectionGrad out;
    // Σ' = J V Jᵀ (+ floor)  =>  dL/dV = Jᵀ G J,  dL/dJ = G J Vᵀ + Gᵀ J V
    const Mat3 dv = j.transpose() * dL_dcov2d * j;
    out.d_cov = cam.rotation.transpose() * dv * cam.rotation;
    const Eigen::Matrix<double, 2, 3> dj = dL_dcov2d * j * v.transpose() + dL_dcov2d.transpose() * j * v;

    Vec3 dpc = Vec3::Zero();
    dpc.x() += dL_dmean2d.x() * k.fx * iz;
    dpc.z() += -dL_dmean2d.x() * k.fx * x * iz2;
    dpc.y() += dL_dmean2d.y() * k.fy * iz;
    dpc.z() += -dL_dmean2d.y() * k.fy * y * iz2;

    dpc.z() += dj(0, 0) * (-k.fx * iz2);
    dpc.x() += dj(0, 2) * (-k.fx * iz2);
    dpc.z() += dj(0, 2) * (2.0 * k.fx * x * iz3);
    dpc.z() += dj(1, 1) * (-k.fy * iz2);
    dpc.y() += dj(1, 2) * (-k.fy * iz2);
    dpc.z() += dj(1, 2) * (2.0 * k.fy * y * iz3);

    out.d_mean = cam.rotation.transpose() * dpc;
    return out;
}

} // namespace occsplat
