#pragma once

#include <vector>

#include "mrmpc/collision.hpp"
#include "mrmpc/dynamics.hpp"
#include "mrmpc/model.hpp"
#include "mrmpc/ocp.hpp"

namespace mrmpc {

struct DeadlockParams {
  double eps_v = 1.5e-3;   // predicted joint-velocity change threshold [rad/s]
  double delta_x = 1.2e-2;  // goal-distance threshold [rad]
  double d_min = 0.2;       // clustering distance [m]
  double eps_res = 4e-2;    // completion / reactivation residuum [rad]

  void validate() const;
};

/// A robot is in deadlock when its predicted joint velocities barely change
/// over the horizon while it is still far from its target.
bool detect_deadlock(const OcpSolution& solution, const JointState& x_current,
                     const JointState& x_target, const DeadlockParams& params);

/// Euclidean norm of the full state error.
double residuum(const JointState& x_current, const JointState& x_target);

/// Groups robots around deadlocked ones: every robot within d_min link
/// distance of a deadlocked robot joins its cluster, transitively.
std::vector<std::vector<int>> cluster_robots(
    const std::vector<const ManipulatorModel*>& models,
    const std::vector<Eigen::VectorXd>& joint_positions,
    const std::vector<bool>& gamma_d, double d_min);

struct RobotReport {
  int robot_id = 0;
  bool gamma_d = false;
  JointState x_current;
  JointState x_target;  // the robot's working target (task or override)
};

struct RobotCommand {
  int robot_id = 0;
  bool gamma_r = true;       // active flag; false sends the robot to neutral
  bool has_override = false;
  JointState override_target;
};

/// Supervisory deadlock resolution. Consumes one immutable snapshot of all
/// agent reports per step and emits activation commands that take effect at
/// the next step. Within a multi-robot deadlock cluster only the robot
/// closest to its goal stays active; the rest park at their neutral poses
/// until the cluster dissolves (active robot reaches its goal, or a full
/// step passes with no member reporting a deadlock).
class Coordinator {
 public:
  Coordinator(std::vector<const ManipulatorModel*> models,
              DeadlockParams params);

  std::vector<RobotCommand> step(const std::vector<RobotReport>& reports);

  bool is_active(int robot) const { return gamma_r_[robot]; }
  int deadlock_events() const { return deadlock_events_; }
  const std::vector<std::vector<int>>& clusters() const { return clusters_; }

 private:
  std::vector<const ManipulatorModel*> models_;
  DeadlockParams params_;
  std::vector<bool> gamma_r_;
  std::vector<JointState> stored_targets_;  // task targets of parked robots
  std::vector<std::vector<int>> clusters_;  // persisting multi-robot clusters
  std::vector<int> cluster_active_;         // active robot per cluster
  std::vector<bool> prev_gamma_d_;
  int deadlock_events_ = 0;

  JointState neutral_state(int robot) const;
};

}  // namespace mrmpc
