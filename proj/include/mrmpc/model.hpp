#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace mrmpc {

/// One row of a standard (distal) Denavit-Hartenberg table.
/// The joint variable q is added to theta_offset; the frame transform is
/// RotZ(q + theta_offset) * TransZ(d) * TransX(a) * RotX(alpha).
struct DhRow {
  double a = 0.0;             // link length [m]
  double alpha = 0.0;         // link twist [rad]
  double d = 0.0;             // link offset [m]
  double theta_offset = 0.0;  // joint angle offset [rad]
};

struct RigidTransform {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

/// A collision line segment between two frame origins.
/// Frame indices run 0..N+1 where 0 is the base and N+1 the tool point.
struct SegmentSpec {
  int frame_start = 0;
  int frame_end = 0;
  std::string name;
};

/// A bounding ellipsoid covering the link chord between two frame origins.
/// The ellipsoid is centered at the chord midpoint and oriented with the
/// rotation of the chord's end frame (the frame that rigidly carries the
/// link body in the distal DH convention).
struct EllipsoidSpec {
  int frame_start = 0;
  int frame_end = 0;
  Eigen::Vector3d semi_axes = Eigen::Vector3d::Ones();  // l1, l2, l3 [m]
  std::string name;
};

struct ManipulatorModel {
  std::string name;
  std::vector<DhRow> dh_rows;
  RigidTransform base_pose;
  Eigen::VectorXd joint_min;            // [rad], size N
  Eigen::VectorXd joint_max;            // [rad], size N
  Eigen::VectorXd velocity_limits;      // max |qd| [rad/s], size N
  Eigen::VectorXd acceleration_limits;  // max |u| [rad/s^2], size N
  std::vector<SegmentSpec> segment_spec;
  std::vector<EllipsoidSpec> ellipsoid_spec;
  Eigen::VectorXd neutral_pose;  // [rad], size N
  double gripper_offset = 0.0;   // tool point extension along approach axis [m]
  double link_radius = 0.0;      // used to validate ellipsoid minor widths [m]

  int joint_count() const { return static_cast<int>(dh_rows.size()); }
  int frame_count() const { return joint_count() + 2; }  // base .. tool point

  int segment_index(const std::string& segment_name) const;
  int ellipsoid_index(const std::string& ellipsoid_name) const;

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
};

/// Reads a manipulator model from a JSON document. Rejects files that
/// violate any model invariant.
ManipulatorModel load_model(const std::string& path);
ManipulatorModel parse_model(const std::string& json_text);

}  // namespace mrmpc
