#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "mrmpc/kinematics.hpp"
#include "mrmpc/model.hpp"

namespace mrmpc {

/// Smooth approximation of the clamp-to-[0,1] projection built from logistic
/// approximations of the Heaviside function. Converges to the exact clamp as
/// c grows.
struct SmoothProjection {
  double c = 20.0;

  double heaviside(double a) const;        // Phi(a) = 1 / (1 + exp(-c a))
  double project(double a) const;          // a Phi(a) - (a-1) Phi(a-1)
  double project_derivative(double a) const;
};

struct StaticEnvironment {
  double table_height = 0.0;  // z_T [m]
  double clearance = 0.0;     // z_min [m]
};

/// Stationary point of H(base + alpha * direction) over unconstrained alpha.
double unconstrained_alpha(const LineSegment& seg, const Ellipsoid& ell);

/// Separation margin g = H(s(alpha*)) - 1 with alpha* the smooth projection
/// of the unconstrained optimum. g >= 0 means segment and ellipsoid do not
/// intersect.
double els_margin(const LineSegment& seg, const Ellipsoid& ell,
                  const SmoothProjection& proj);

/// Partial derivatives of the margin with respect to the geometric
/// primitives. d_form is the matrix gradient w.r.t. the world quadratic form
/// M = R E R^T, to be contracted with dM along a joint motion.
struct ElsGradients {
  double margin = 0.0;
  Eigen::Vector3d d_base = Eigen::Vector3d::Zero();
  Eigen::Vector3d d_direction = Eigen::Vector3d::Zero();
  Eigen::Vector3d d_center = Eigen::Vector3d::Zero();
  Eigen::Matrix3d d_form = Eigen::Matrix3d::Zero();
};

ElsGradients els_margin_gradients(const LineSegment& seg, const Ellipsoid& ell,
                                  const SmoothProjection& proj);

/// Chains the margin partials to the joint vector of the robot owning the
/// segment.
Eigen::VectorXd chain_to_segment_robot(const ElsGradients& g,
                                       const FkJacobians& jac,
                                       const SegmentSpec& spec);

/// Chains the margin partials to the joint vector of the robot owning the
/// ellipsoid (center motion plus rigid rotation of the quadratic form).
Eigen::VectorXd chain_to_ellipsoid_robot(const ElsGradients& g,
                                         const FkJacobians& jac,
                                         const EllipsoidSpec& spec,
                                         const Ellipsoid& world_ell);

/// Distinct frame indices referenced by segment_spec, ascending. These are
/// the points constrained against the table plane.
std::vector<int> static_base_frames(const ManipulatorModel& model);

/// Height of every static base frame above the table plane plus clearance;
/// the tool point is additionally lowered by the gripper length. >= 0 means
/// clear of the table.
Eigen::VectorXd static_margins(const ManipulatorModel& model,
                               const std::vector<LinkFrame>& frames,
                               const StaticEnvironment& env);
Eigen::VectorXd static_margins(const ManipulatorModel& model,
                               const Eigen::VectorXd& q,
                               const StaticEnvironment& env);

/// Euclidean minimum distance between two closed segments; exact for
/// parallel and degenerate cases.
double segment_segment_distance(const LineSegment& a, const LineSegment& b);

/// One active collision constraint: this robot's segment against a
/// neighbouring robot's ellipsoid.
struct CollisionPair {
  int other_robot = 0;
  int ellipsoid_index = 0;
  int segment_index = 0;
};

struct CollisionPairSet {
  std::vector<CollisionPair> pairs;

  int count_for(int other_robot) const {
    int n = 0;
    for (const auto& p : pairs) n += (p.other_robot == other_robot) ? 1 : 0;
    return n;
  }
};

/// Which ellipsoid/segment link pairs are geometrically reachable for a
/// given setup; applied to every ordered robot pair. An empty table means
/// the full cross product.
struct PruningTable {
  struct Entry {
    std::string ellipsoid;  // link name on the neighbour (ellipsoid side)
    std::string segment;    // link name on the planning robot (segment side)
  };
  std::vector<Entry> entries;
  bool disable_all = false;  // no inter-robot constraints at all
  bool full_product() const { return entries.empty() && !disable_all; }
};

PruningTable load_pruning_table(const std::string& path);
PruningTable parse_pruning_table(const std::string& json_text);

/// Pair set for each robot against every other robot. Throws if a pruning
/// entry references unknown link names.
std::vector<CollisionPairSet> build_pair_sets(
    const std::vector<const ManipulatorModel*>& models,
    const PruningTable& table);

}  // namespace mrmpc
