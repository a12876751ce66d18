#pragma once

#include <Eigen/Dense>

#include <vector>

#include "mrmpc/model.hpp"

namespace mrmpc {

/// Stacked joint state x = [q, qd] of one robot.
struct JointState {
  Eigen::VectorXd q;
  Eigen::VectorXd qd;

  JointState() = default;
  explicit JointState(int n)
      : q(Eigen::VectorXd::Zero(n)), qd(Eigen::VectorXd::Zero(n)) {}

  int joints() const { return static_cast<int>(q.size()); }

  Eigen::VectorXd stacked() const {
    Eigen::VectorXd x(2 * q.size());
    x << q, qd;
    return x;
  }
  static JointState from_stacked(const Eigen::VectorXd& x) {
    JointState s;
    const int n = static_cast<int>(x.size()) / 2;
    s.q = x.head(n);
    s.qd = x.tail(n);
    return s;
  }
};

using ControlInput = Eigen::VectorXd;  // joint accelerations [rad/s^2]

/// Exact zero-order-hold discretization of the per-joint double integrator.
/// Per joint: A = [[1, Ts], [0, 1]], B = [Ts^2/2, Ts]^T; the stacked system
/// acts blockwise on x = [q, qd].
struct DiscreteDynamics {
  int n = 0;
  double ts = 0.0;

  JointState step(const JointState& x, const ControlInput& u) const {
    JointState next;
    next.q = x.q + ts * x.qd + 0.5 * ts * ts * u;
    next.qd = x.qd + ts * u;
    return next;
  }

  Eigen::MatrixXd a_matrix() const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(2 * n, 2 * n);
    a.topRightCorner(n, n) = ts * Eigen::MatrixXd::Identity(n, n);
    return a;
  }
  Eigen::MatrixXd b_matrix() const {
    Eigen::MatrixXd b(2 * n, n);
    b.topRows(n) = 0.5 * ts * ts * Eigen::MatrixXd::Identity(n, n);
    b.bottomRows(n) = ts * Eigen::MatrixXd::Identity(n, n);
    return b;
  }
};

DiscreteDynamics discretize(int joint_count, double ts);

JointState step(const DiscreteDynamics& dyn, const JointState& x,
                const ControlInput& u);

std::vector<JointState> rollout(const DiscreteDynamics& dyn,
                                const JointState& x0,
                                const std::vector<ControlInput>& inputs);

/// Box sets for states and inputs: position bounds from the joint limits,
/// symmetric velocity and acceleration bounds.
struct Bounds {
  Eigen::VectorXd q_min, q_max;
  Eigen::VectorXd qd_max;  // |qd| <= qd_max
  Eigen::VectorXd u_max;   // |u| <= u_max

  bool contains_state(const JointState& x, double tol = 0.0) const {
    return (x.q.array() >= q_min.array() - tol).all() &&
           (x.q.array() <= q_max.array() + tol).all() &&
           (x.qd.array().abs() <= qd_max.array() + tol).all();
  }
  bool contains_input(const ControlInput& u, double tol = 0.0) const {
    return (u.array().abs() <= u_max.array() + tol).all();
  }
};

Bounds bounds(const ManipulatorModel& model);

}  // namespace mrmpc
