#pragma once

#include "occsplat/geometry.hpp"
#include "occsplat/image.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace occsplat {

/// One joint of an articulated skeleton. The joint is the head of a bone that
/// extends to `tail` (expressed in the joint's bind-pose local frame); the bone
/// is drawn as a capsule of `radius`.
struct Joint {
    std::string name;
    int parent = -1;
    Vec3 local_translation = Vec3::Zero();
    Vec3 tail = Vec3::Zero();
    double radius = 0.05;
};

/// Bind-pose joint hierarchy plus the skinning table. Joints are stored in
/// topological order (parent index < own index, root parent −1). Each row of
/// `blend_weights` belongs to the bind vertex with the same index.
struct Skeleton {
    std::vector<Joint> joints;
    std::vector<Vec3> bind_vertices;
    Eigen::MatrixXd blend_weights; // bind_vertices × joints

    int num_joints() const { return static_cast<int>(joints.size()); }

    /// Bind-pose world position of each joint head.
    std::vector<Vec3> bind_heads() const;
    /// Bind-pose world position of each bone tail.
    std::vector<Vec3> bind_tails() const;

    /// Throws InvalidInput on topology or weight-table violations.
    void validate() const;
};

/// Local joint rotations (unit quaternions) and root translation for one frame.
struct PoseFrame {
    int t = 0;
    std::vector<Quat> joint_rotations;
    Vec3 root_translation = Vec3::Zero();

    static PoseFrame identity(int num_joints, int t = 0);
    /// Flattened joint quaternions, the pose conditioning fed to the network.
    Eigen::VectorXd flatten() const;
};

/// Per-joint world transforms (rigid 4×4) of `pose`.
std::vector<Mat4> forward_kinematics(const Skeleton& skel, const PoseFrame& pose);

/// T_j(pose) · T_j(bind)⁻¹ for every joint.
std::vector<Mat4> skinning_matrices(const Skeleton& skel, const PoseFrame& pose);

struct LbsResult {
    Vec3 position = Vec3::Zero();
    /// Rotation block of the blended transform, projected to SO(3).
    Mat3 rotation = Mat3::Identity();
    /// Linear part of the blended transform before projection (the Jacobian of
    /// position w.r.t. the canonical point).
    Mat3 linear = Mat3::Identity();
};

/// Polar projection of a 3×3 matrix onto the nearest rotation.
Mat3 nearest_rotation(const Mat3& m);

LbsResult lbs_transform(const Vec3& x_can, const Eigen::Ref<const Eigen::RowVectorXd>& weights,
                        const std::vector<Mat4>& skinning);

LbsResult lbs_transform(const Vec3& x_can, const Eigen::Ref<const Eigen::RowVectorXd>& weights,
                        const Skeleton& skel, const PoseFrame& pose);

/// Adjoint of the positional LBS map (pose and weights held fixed).
inline Vec3 lbs_backward(const Vec3& dL_dx_obs, const LbsResult& fwd) {
    return fwd.linear.transpose() * dL_dx_obs;
}

/// Fills `blend_weights` from normalized inverse distance to the two nearest
/// bones (a single bone gets weight 1).
void compute_blend_weights(Skeleton& skel);

/// Places `rings × per_ring` bind vertices on each bone capsule and computes
/// their blend weights.
void generate_bind_vertices(Skeleton& skel, int rings, int per_ring);

int nearest_bind_vertex(const Skeleton& skel, const Vec3& p);

/// World-space bone segments (head, tail) for a pose.
std::vector<std::pair<Vec3, Vec3>> posed_bones(const Skeleton& skel, const PoseFrame& pose);

/// Silhouette of the capsule union, rasterized by exact ray-to-segment
/// distance at each pixel center. `capsule_radii` empty means joint radii.
Image render_skeleton_mask(const Skeleton& skel, const PoseFrame& pose, const Camera& cam,
                           const std::vector<double>& capsule_radii = {});

} // namespace occsplat
