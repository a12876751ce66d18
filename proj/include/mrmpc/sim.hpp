#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mrmpc/comms.hpp"
#include "mrmpc/coordinator.hpp"
#include "mrmpc/game.hpp"
#include "mrmpc/model.hpp"
#include "mrmpc/ocp.hpp"

namespace mrmpc {

struct TaskSpec {
  Eigen::VectorXd target_q;  // joint-space target
  int dwell = 5;             // grasp/place hold steps after reaching it
};

struct RobotSpec {
  std::string model_path;
  ManipulatorModel model;  // resolved model with the scenario base pose
  Eigen::VectorXd start_q;
  std::vector<TaskSpec> tasks;
};

enum class TransportKind { in_process, udp };

struct ScenarioConfig {
  std::string name;
  int np = 15;
  double ts = 0.2;
  uint64_t seed = 1;
  int step_budget = 500;
  int default_dwell = 5;
  TransportKind transport = TransportKind::in_process;
  StaticEnvironment env;
  SmoothProjection proj;
  DeadlockParams deadlock;
  SolverOptions solver;
  CostWeights weights;  // shared across robots (robots must share N)
  PruningTable pruning;
  std::vector<RobotSpec> robots;
  bool parallel_agents = true;
  int loss_abort_after = 3;      // consecutive losses from one neighbour
  double recv_timeout = -1.0;    // seconds; negative picks a transport default
  double margin_epsilon = 0.0;   // sample-point tightening of the ELS margins

  void validate() const;
};

ScenarioConfig load_scenario(const std::string& path);
ScenarioConfig parse_scenario(const std::string& json_text,
                              const std::string& base_dir);

struct SimLogRow {
  double t = 0.0;
  int robot_id = 0;
  Eigen::VectorXd q, qd, u;
  double cost = 0.0;
  double solve_ms = 0.0;
  bool gamma_d = false;
  bool gamma_r = true;
  int target_id = 0;
  double min_els_margin = 0.0;
  double min_link_dist = 0.0;
};

struct SimLog {
  int robot_count = 0;
  int steps = 0;
  double ts = 0.0;
  std::vector<SimLogRow> rows;  // robot-major within each step
  std::vector<bool> tasks_completed;
  std::vector<std::vector<ControlInput>> applied_inputs;    // [step][robot]
  std::vector<std::vector<JointState>> plant_states;        // [step+1][robot]
  bool safety_stopped = false;
  int stale_predictions = 0;

  const SimLogRow& row(int step, int robot) const {
    return rows[step * robot_count + robot];
  }
  bool all_tasks_completed() const {
    for (bool c : tasks_completed)
      if (!c) return false;
    return !tasks_completed.empty();
  }
};

/// CSV export: header row, one row per robot per step, 9 significant
/// digits. Columns: t, robot_id, q1..qN, qd1..qdN, u1..uN, cost, solve_ms,
/// gamma_D, gamma_R, target_id, min_els_margin, min_link_dist.
void write_csv(const SimLog& log, const std::string& path);

/// Compares two CSV logs ignoring the wall-clock solve_ms column.
bool logs_equal_modulo_timing(const std::string& csv_a,
                              const std::string& csv_b);

/// Runs the scenario. transport_override (when non-null) replaces the
/// transport the scenario would build; used for fault injection.
SimLog run(const ScenarioConfig& scenario,
           Transport* transport_override = nullptr);

/// Same plant and task sequencing driven by the centralized baseline: one
/// joint OCP over all robots per step, no trajectory exchange and no
/// coordinator. The joint solve time is logged on every robot's row.
SimLog run_centralized(const ScenarioConfig& scenario);

struct ClearanceAudit {
  double min_els_margin = 0.0;
  double min_link_distance = 0.0;
  std::vector<double> per_substep_margin;
};

/// Re-evaluates the collision margins on the continuous plant trajectory
/// sampled at ts/substeps, guarding against tunneling between samples.
ClearanceAudit audit_clearance(const SimLog& log, const ScenarioConfig& scenario,
                               int substeps = 10);

/// Random sequential adsorption: rejection-sampled points with a minimum
/// pairwise separation. Throws "region too crowded" after 1e5 rejections.
std::vector<Eigen::Vector3d> place_objects_rsa(const Eigen::Vector3d& box_min,
                                               const Eigen::Vector3d& box_max,
                                               int count, double min_sep,
                                               uint64_t seed);

/// Damped least-squares inverse kinematics on the tool position. Success
/// when the position error drops below 1e-4 m within 500 iterations and the
/// result respects the joint limits.
std::optional<Eigen::VectorXd> ik_solve(const ManipulatorModel& model,
                                        const Eigen::Vector3d& target,
                                        const Eigen::VectorXd& initial_q);

struct RunMetrics {
  double execution_seconds = 0.0;
  int execution_steps = 0;
  std::vector<double> mean_solve_ms;  // per robot
  std::vector<double> std_solve_ms;   // per robot
  std::vector<bool> tasks_completed;
  int deadlock_events = 0;
  double mean_step_solve_ms = 0.0;  // mean over steps of the slowest agent
};

RunMetrics metrics(const SimLog& log);

}  // namespace mrmpc
