#include "mrmpc/kinematics.hpp"

#include <cmath>
#include <stdexcept>

namespace mrmpc {

namespace {

// Standard DH transform: RotZ(theta) * TransZ(d) * TransX(a) * RotX(alpha).
void dh_transform(const DhRow& row, double q, Eigen::Matrix3d& rot,
                  Eigen::Vector3d& pos) {
  const double theta = q + row.theta_offset;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double ca = std::cos(row.alpha), sa = std::sin(row.alpha);
  rot << ct, -st * ca, st * sa,
         st, ct * ca, -ct * sa,
         0.0, sa, ca;
  pos << row.a * ct, row.a * st, row.d;
}

}  // namespace

int ManipulatorModel::segment_index(const std::string& segment_name) const {
  for (size_t i = 0; i < segment_spec.size(); ++i)
    if (segment_spec[i].name == segment_name) return static_cast<int>(i);
  throw std::invalid_argument("unknown segment link name: " + segment_name);
}

int ManipulatorModel::ellipsoid_index(const std::string& ellipsoid_name) const {
  for (size_t i = 0; i < ellipsoid_spec.size(); ++i)
    if (ellipsoid_spec[i].name == ellipsoid_name) return static_cast<int>(i);
  throw std::invalid_argument("unknown ellipsoid link name: " + ellipsoid_name);
}

void ManipulatorModel::validate() const {
  const int n = joint_count();
  if (n < 1) throw std::invalid_argument("model '" + name + "': empty chain");
  auto expect_size = [&](const Eigen::VectorXd& v, const char* what) {
    if (v.size() != n)
      throw std::invalid_argument("model '" + name + "': " + what +
                                  " has wrong dimension");
  };
  expect_size(joint_min, "joint_min");
  expect_size(joint_max, "joint_max");
  expect_size(velocity_limits, "velocity_limits");
  expect_size(acceleration_limits, "acceleration_limits");
  expect_size(neutral_pose, "neutral_pose");
  for (int j = 0; j < n; ++j) {
    if (!std::isfinite(joint_min[j]) || !std::isfinite(joint_max[j]) ||
        joint_min[j] >= joint_max[j])
      throw std::invalid_argument("model '" + name + "': joint " +
                                  std::to_string(j + 1) +
                                  " limits must be finite with min < max");
    if (!(velocity_limits[j] > 0.0) || !std::isfinite(velocity_limits[j]))
      throw std::invalid_argument("model '" + name + "': joint " +
                                  std::to_string(j + 1) +
                                  " velocity limit must be positive");
    if (!(acceleration_limits[j] > 0.0) ||
        !std::isfinite(acceleration_limits[j]))
      throw std::invalid_argument("model '" + name + "': joint " +
                                  std::to_string(j + 1) +
                                  " acceleration limit must be positive");
    if (neutral_pose[j] < joint_min[j] || neutral_pose[j] > joint_max[j])
      throw std::invalid_argument("model '" + name + "': neutral pose joint " +
                                  std::to_string(j + 1) +
                                  " outside joint limits");
  }
  const int frames = frame_count();
  auto check_pair = [&](int s, int e, const std::string& what) {
    if (s < 0 || s >= frames || e < 0 || e >= frames || s == e)
      throw std::invalid_argument("model '" + name + "': " + what +
                                  " references invalid frame pair (" +
                                  std::to_string(s) + "," + std::to_string(e) +
                                  ")");
  };
  for (const auto& seg : segment_spec)
    check_pair(seg.frame_start, seg.frame_end, "segment '" + seg.name + "'");
  for (const auto& ell : ellipsoid_spec) {
    check_pair(ell.frame_start, ell.frame_end,
               "ellipsoid '" + ell.name + "'");
    if (!(ell.semi_axes.minCoeff() > 0.0))
      throw std::invalid_argument("model '" + name + "': ellipsoid '" +
                                  ell.name + "' semi-axes must be positive");
    // Minor widths must cover at least twice the link radius.
    Eigen::Vector3d axes = ell.semi_axes;
    std::sort(axes.data(), axes.data() + 3);
    if (axes[0] < 2.0 * link_radius || axes[1] < 2.0 * link_radius)
      throw std::invalid_argument(
          "model '" + name + "': ellipsoid '" + ell.name +
          "' minor semi-axes must be >= 2 * link_radius");
  }
  if (gripper_offset < 0.0)
    throw std::invalid_argument("model '" + name +
                                "': gripper_offset must be >= 0");
  if (link_radius < 0.0)
    throw std::invalid_argument("model '" + name +
                                "': link_radius must be >= 0");
  Eigen::Matrix3d rr =
      base_pose.rotation.transpose() * base_pose.rotation -
      Eigen::Matrix3d::Identity();
  if (rr.cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(base_pose.rotation.determinant() - 1.0) > 1e-9)
    throw std::invalid_argument("model '" + name +
                                "': base rotation is not a proper rotation");
}

void forward_kinematics_into(const ManipulatorModel& model,
                             const Eigen::VectorXd& q,
                             std::vector<LinkFrame>& frames) {
  const int n = model.joint_count();
  if (n < 1) throw std::invalid_argument("forward_kinematics: empty chain");
  if (q.size() != n)
    throw std::invalid_argument("forward_kinematics: q has wrong dimension");

  frames.resize(n + 2);
  frames[0].origin = model.base_pose.position;
  frames[0].rotation = model.base_pose.rotation;
  Eigen::Matrix3d rot;
  Eigen::Vector3d pos;
  for (int j = 0; j < n; ++j) {
    dh_transform(model.dh_rows[j], q[j], rot, pos);
    frames[j + 1].origin = frames[j].origin + frames[j].rotation * pos;
    frames[j + 1].rotation = frames[j].rotation * rot;
  }
  // Tool point: wrist frame translated along its approach (z) axis.
  frames[n + 1].rotation = frames[n].rotation;
  frames[n + 1].origin =
      frames[n].origin + frames[n].rotation.col(2) * model.gripper_offset;
}

std::vector<LinkFrame> forward_kinematics(const ManipulatorModel& model,
                                          const Eigen::VectorXd& q) {
  std::vector<LinkFrame> frames;
  forward_kinematics_into(model, q, frames);
  return frames;
}

void line_segments_into(const ManipulatorModel& model,
                        const std::vector<LinkFrame>& frames,
                        std::vector<LineSegment>& segs) {
  segs.resize(model.segment_spec.size());
  for (size_t i = 0; i < model.segment_spec.size(); ++i) {
    const auto& spec = model.segment_spec[i];
    segs[i].base = frames[spec.frame_start].origin;
    segs[i].direction =
        frames[spec.frame_end].origin - frames[spec.frame_start].origin;
    if (segs[i].direction.norm() < 1e-12)
      throw std::invalid_argument("zero-length segment '" + spec.name + "'");
  }
}

std::vector<LineSegment> line_segments(const ManipulatorModel& model,
                                       const std::vector<LinkFrame>& frames) {
  std::vector<LineSegment> segs;
  line_segments_into(model, frames, segs);
  return segs;
}

std::vector<LineSegment> line_segments(const ManipulatorModel& model,
                                       const Eigen::VectorXd& q) {
  return line_segments(model, forward_kinematics(model, q));
}

void ellipsoids_into(const ManipulatorModel& model,
                     const std::vector<LinkFrame>& frames,
                     std::vector<Ellipsoid>& ells) {
  ells.resize(model.ellipsoid_spec.size());
  for (size_t i = 0; i < model.ellipsoid_spec.size(); ++i) {
    const auto& spec = model.ellipsoid_spec[i];
    ells[i].center = 0.5 * (frames[spec.frame_start].origin +
                            frames[spec.frame_end].origin);
    ells[i].rotation = frames[spec.frame_end].rotation;
    ells[i].inv_sq_semi_axes = spec.semi_axes.array().square().inverse();
  }
}

std::vector<Ellipsoid> ellipsoids(const ManipulatorModel& model,
                                  const std::vector<LinkFrame>& frames) {
  std::vector<Ellipsoid> ells;
  ellipsoids_into(model, frames, ells);
  return ells;
}

std::vector<Ellipsoid> ellipsoids(const ManipulatorModel& model,
                                  const Eigen::VectorXd& q) {
  return ellipsoids(model, forward_kinematics(model, q));
}

void fk_jacobians_into(const ManipulatorModel& model, const Eigen::VectorXd& q,
                       FkJacobians& out) {
  const int n = model.joint_count();
  forward_kinematics_into(model, q, out.frames);
  out.joint_axis.resize(3, n);
  for (int j = 0; j < n; ++j)
    out.joint_axis.col(j) = out.frames[j].rotation.col(2);

  out.origin_jac.resize(n + 2);
  for (int m = 0; m < n + 2; ++m) {
    auto& jac = out.origin_jac[m];
    jac.setZero(3, n);
    const int moving = out.driving_joints(m, n);
    for (int j = 0; j < moving; ++j) {
      // Revolute joint j rotates frame m about its axis through frame j.
      jac.col(j) = out.joint_axis.col(j).cross(out.frames[m].origin -
                                               out.frames[j].origin);
    }
  }
}

FkJacobians fk_jacobians(const ManipulatorModel& model,
                         const Eigen::VectorXd& q) {
  FkJacobians out;
  fk_jacobians_into(model, q, out);
  return out;
}

}  // namespace mrmpc
