#pragma once

#include <Eigen/Dense>

#include <vector>

#include "mrmpc/model.hpp"

namespace mrmpc {

/// World pose of one kinematic frame.
struct LinkFrame {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

/// s(alpha) = base + alpha * direction, alpha in [0, 1]. direction is not
/// normalized; it spans the full link chord.
struct LineSegment {
  Eigen::Vector3d base = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::Zero();
};

struct Ellipsoid {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d inv_sq_semi_axes = Eigen::Vector3d::Ones();  // diag of E

  /// R * E * R^T, the world-frame quadratic form of the ellipsoid.
  Eigen::Matrix3d world_form() const {
    return rotation * inv_sq_semi_axes.asDiagonal() * rotation.transpose();
  }
};

/// Derivatives of every frame with respect to the joint vector.
/// origin_jac[m] is the 3xN Jacobian of frame m's origin; the rotation
/// derivative of frame m w.r.t. joint j is skew(joint_axis.col(j)) * R_m
/// for j < driving_joints(m), zero otherwise.
struct FkJacobians {
  std::vector<LinkFrame> frames;
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> origin_jac;
  Eigen::Matrix<double, 3, Eigen::Dynamic> joint_axis;  // world z-axis per joint

  /// Number of joints that move frame m (joints 0..count-1).
  int driving_joints(int frame_index, int joint_count) const {
    return frame_index >= joint_count ? joint_count : frame_index;
  }
};

/// Frames 0..N+1: base, each joint frame, tool point (wrist frame translated
/// by gripper_offset along its z-axis). Throws on an empty chain.
std::vector<LinkFrame> forward_kinematics(const ManipulatorModel& model,
                                          const Eigen::VectorXd& q);

std::vector<LineSegment> line_segments(const ManipulatorModel& model,
                                       const std::vector<LinkFrame>& frames);
std::vector<LineSegment> line_segments(const ManipulatorModel& model,
                                       const Eigen::VectorXd& q);

std::vector<Ellipsoid> ellipsoids(const ManipulatorModel& model,
                                  const std::vector<LinkFrame>& frames);
std::vector<Ellipsoid> ellipsoids(const ManipulatorModel& model,
                                  const Eigen::VectorXd& q);

FkJacobians fk_jacobians(const ManipulatorModel& model,
                         const Eigen::VectorXd& q);

// In-place variants for hot loops; they reuse the output's storage.
void forward_kinematics_into(const ManipulatorModel& model,
                             const Eigen::VectorXd& q,
                             std::vector<LinkFrame>& frames);
void fk_jacobians_into(const ManipulatorModel& model, const Eigen::VectorXd& q,
                       FkJacobians& out);
void line_segments_into(const ManipulatorModel& model,
                        const std::vector<LinkFrame>& frames,
                        std::vector<LineSegment>& segs);
void ellipsoids_into(const ManipulatorModel& model,
                     const std::vector<LinkFrame>& frames,
                     std::vector<Ellipsoid>& ells);

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

}  // namespace mrmpc
