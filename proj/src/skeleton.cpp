#include "occsplat/skeleton.hpp"

#include "occsplat/errors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace occsplat {

namespace {

Mat4 make_rigid(const Mat3& r, const Vec3& t) {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = t;
    return m;
}

Mat4 rigid_inverse(const Mat4& m) {
    const Mat3 rt = m.topLeftCorner<3, 3>().transpose();
    return make_rigid(rt, -rt * m.topRightCorner<3, 1>());
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len2 = ab.squaredNorm();
    double u = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
    u = std::clamp(u, 0.0, 1.0);
    return (p - (a + u * ab)).norm();
}

// Closest distance between segments p1q1 and p2q2.
double segment_segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2) {
    const Vec3 d1 = q1 - p1;
    const Vec3 d2 = q2 - p2;
    const Vec3 r = p1 - p2;
    const double a = d1.squaredNorm();
    const double e = d2.squaredNorm();
    const double f = d2.dot(r);
    constexpr double kEps = 1e-18;
    double s = 0.0;
    double t = 0.0;
    if (a <= kEps && e <= kEps) {
        return r.norm();
    }
    if (a <= kEps) {
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        const double c = d1.dot(r);
        if (e <= kEps) {
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            const double b = d1.dot(d2);
            const double denom = a * e - b * b;
            s = denom > kEps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
            t = (b * s + f) / e;
            if (t < 0.0) {
                t = 0.0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1.0) {
                t = 1.0;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    return ((p1 + d1 * s) - (p2 + d2 * t)).norm();
}

} // namespace

std::vector<Vec3> Skeleton::bind_heads() const {
    std::vector<Vec3> heads(joints.size());
    for (std::size_t j = 0; j < joints.size(); ++j) {
        const int p = joints[j].parent;
        heads[j] = (p < 0 ? Vec3::Zero() : heads[p]) + joints[j].local_translation;
    }
    return heads;
}

std::vector<Vec3> Skeleton::bind_tails() const {
    auto tails = bind_heads();
    for (std::size_t j = 0; j < joints.size(); ++j) {
        tails[j] += joints[j].tail;
    }
    return tails;
}

void Skeleton::validate() const {
    if (joints.empty()) {
        throw InvalidInput("skeleton has no joints");
    }
    for (std::size_t j = 0; j < joints.size(); ++j) {
        const int p = joints[j].parent;
        if ((j == 0 && p != -1) || (j > 0 && (p < 0 || p >= static_cast<int>(j)))) {
            throw InvalidInput("joint '" + joints[j].name + "' violates topological parent order");
        }
    }
    if (blend_weights.rows() != static_cast<Eigen::Index>(bind_vertices.size()) ||
        (blend_weights.rows() > 0 && blend_weights.cols() != num_joints())) {
        throw InvalidInput("blend weight table shape does not match skeleton");
    }
    for (Eigen::Index v = 0; v < blend_weights.rows(); ++v) {
        if (blend_weights.row(v).minCoeff() < 0.0 || std::abs(blend_weights.row(v).sum() - 1.0) > 1e-6) {
            throw InvalidInput("blend weight row " + std::to_string(v) + " is not a convex combination");
        }
    }
}

PoseFrame PoseFrame::identity(int num_joints, int t) {
    PoseFrame p;
    p.t = t;
    p.joint_rotations.assign(static_cast<std::size_t>(num_joints), identity_quat());
    return p;
}

Eigen::VectorXd PoseFrame::flatten() const {
    Eigen::VectorXd v(4 * static_cast<Eigen::Index>(joint_rotations.size()));
    for (std::size_t j = 0; j < joint_rotations.size(); ++j) {
        v.segment<4>(4 * static_cast<Eigen::Index>(j)) = joint_rotations[j];
    }
    return v;
}

std::vector<Mat4> forward_kinematics(const Skeleton& skel, const PoseFrame& pose) {
    if (static_cast<int>(pose.joint_rotations.size()) != skel.num_joints()) {
        throw InvalidInput("pose has " + std::to_string(pose.joint_rotations.size()) + " rotations, skeleton has " +
                           std::to_string(skel.num_joints()) + " joints");
    }
    std::vector<Mat4> world(skel.joints.size());
    for (std::size_t j = 0; j < skel.joints.size(); ++j) {
        const auto& joint = skel.joints[j];
        const Mat3 r = quat_to_matrix(normalize_quat(pose.joint_rotations[j]));
        if (joint.parent < 0) {
            world[j] = make_rigid(r, joint.local_translation + pose.root_translation);
        } else {
            world[j] = world[static_cast<std::size_t>(joint.parent)] * make_rigid(r, joint.local_translation);
        }
    }
    return world;
}

std::vector<Mat4> skinning_matrices(const Skeleton& skel, const PoseFrame& pose) {
    const auto posed = forward_kinematics(skel, pose);
    const auto heads = skel.bind_heads();
    std::vector<Mat4> out(posed.size());
    for (std::size_t j = 0; j < posed.size(); ++j) {
        // Bind transforms carry no rotation, only the joint head position.
        out[j] = posed[j] * rigid_inverse(make_rigid(Mat3::Identity(), heads[j]));
    }
    return out;
}

Mat3 nearest_rotation(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    const Mat3 v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) {
        u.col(2) *= -1.0;
    }
    return u * v.transpose();
}

LbsResult lbs_transform(const Vec3& x_can, const Eigen::Ref<const Eigen::RowVectorXd>& weights,
                        const std::vector<Mat4>& skinning) {
    Mat4 blended = Mat4::Zero();
    for (Eigen::Index j = 0; j < weights.size(); ++j) {
        const double w = weights[j];
        if (w != 0.0) {
            blended += w * skinning[static_cast<std::size_t>(j)];
        }
    }
    LbsResult out;
    out.linear = blended.topLeftCorner<3, 3>();
    out.position = out.linear * x_can + blended.topRightCorner<3, 1>();
    out.rotation = nearest_rotation(out.linear);
    return out;
}

LbsResult lbs_transform(const Vec3& x_can, const Eigen::Ref<const Eigen::RowVectorXd>& weights,
                        const Skeleton& skel, const PoseFrame& pose) {
    return lbs_transform(x_can, weights, skinning_matrices(skel, pose));
}

void compute_blend_weights(Skeleton& skel) {
    const auto heads = skel.bind_heads();
    const auto tails = skel.bind_tails();
    const int nj = skel.num_joints();
    skel.blend_weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(skel.bind_vertices.size()), nj);
    for (std::size_t v = 0; v < skel.bind_vertices.size(); ++v) {
        if (nj == 1) {
            skel.blend_weights(static_cast<Eigen::Index>(v), 0) = 1.0;
            continue;
        }
        std::vector<std::pair<double, int>> dist;
        for (int j = 0; j < nj; ++j) {
            dist.emplace_back(point_segment_distance(skel.bind_vertices[v], heads[j], tails[j]), j);
        }
        std::partial_sort(dist.begin(), dist.begin() + 2, dist.end());
        const double w0 = 1.0 / std::max(dist[0].first, 1e-6);
        const double w1 = 1.0 / std::max(dist[1].first, 1e-6);
        skel.blend_weights(static_cast<Eigen::Index>(v), dist[0].second) = w0 / (w0 + w1);
        skel.blend_weights(static_cast<Eigen::Index>(v), dist[1].second) = w1 / (w0 + w1);
    }
}

void generate_bind_vertices(Skeleton& skel, int rings, int per_ring) {
    const auto heads = skel.bind_heads();
    const auto tails = skel.bind_tails();
    skel.bind_vertices.clear();
    for (std::size_t j = 0; j < skel.joints.size(); ++j) {
        const Vec3 axis = tails[j] - heads[j];
        const Vec3 dir = axis.norm() > 0.0 ? Vec3(axis.normalized()) : Vec3::UnitY();
        const Vec3 helper = std::abs(dir.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
        const Vec3 e1 = dir.cross(helper).normalized();
        const Vec3 e2 = dir.cross(e1);
        const double r = skel.joints[j].radius;
        for (int i = 0; i < rings; ++i) {
            const double u = (i + 0.5) / rings;
            const Vec3 c = heads[j] + u * axis;
            for (int k = 0; k < per_ring; ++k) {
                const double a = 2.0 * std::numbers::pi * (k + 0.5 * (i % 2)) / per_ring;
                skel.bind_vertices.push_back(c + r * (std::cos(a) * e1 + std::sin(a) * e2));
            }
        }
    }
    compute_blend_weights(skel);
}

int nearest_bind_vertex(const Skeleton& skel, const Vec3& p) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < skel.bind_vertices.size(); ++v) {
        const double d = (skel.bind_vertices[v] - p).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(v);
        }
    }
    return best;
}

std::vector<std::pair<Vec3, Vec3>> posed_bones(const Skeleton& skel, const PoseFrame& pose) {
    const auto world = forward_kinematics(skel, pose);
    std::vector<std::pair<Vec3, Vec3>> bones;
    for (std::size_t j = 0; j < world.size(); ++j) {
        const Vec3 head = world[j].topRightCorner<3, 1>();
        const Vec3 tail = head + world[j].topLeftCorner<3, 3>() * skel.joints[j].tail;
        bones.emplace_back(head, tail);
    }
    return bones;
}

Image render_skeleton_mask(const Skeleton& skel, const PoseFrame& pose, const Camera& cam,
                           const std::vector<double>& capsule_radii) {
    cam.validate();
    if (!capsule_radii.empty() && static_cast<int>(capsule_radii.size()) != skel.num_joints()) {
        throw InvalidInput("capsule radius count does not match joint count");
    }
    const auto bones = posed_bones(skel, pose);
    const Vec3 origin = cam.center();
    const auto& k = cam.intrinsics;
    constexpr double kNear = 0.01;
    constexpr double kFar = 1e4;

    Image mask(cam.height, cam.width, 1, 0.0);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Vec3 dir_cam((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
            const Vec3 dir = cam.rotation.transpose() * dir_cam;
            const Vec3 a = origin + kNear * dir;
            const Vec3 b = origin + kFar * dir;
            for (std::size_t j = 0; j < bones.size(); ++j) {
                const double r = capsule_radii.empty() ? skel.joints[j].radius : capsule_radii[j];
                if (segment_segment_distance(a, b, bones[j].first, bones[j].second) <= r) {
                    mask.at(y, x) = 1.0;
                    break;
                }
            }
        }
    }
    return mask;
}

} // namespace occsplat
