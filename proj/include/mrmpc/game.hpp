#pragma once

#include <map>
#include <optional>
#include <vector>

#include "mrmpc/coordinator.hpp"
#include "mrmpc/dynamics.hpp"
#include "mrmpc/ocp.hpp"
#include "mrmpc/solver.hpp"

namespace mrmpc {

/// A robot's optimal state sequence over the horizon, the unit of
/// inter-agent communication.
struct PredictedTrajectory {
  int robot_id = 0;
  uint64_t step_index = 0;
  std::vector<JointState> states;  // Np + 1
};

/// Validates dynamic consistency: consecutive states must satisfy the
/// discrete dynamics for some admissible input. Throws on violation.
PredictedTrajectory make_prediction(int robot_id, uint64_t step_index,
                                    std::vector<JointState> states,
                                    const DiscreteDynamics& dyn,
                                    const Bounds& bounds, double tol);

/// The input implied by the last two predicted states (the extrapolation
/// treats the two final optimal inputs as equal).
ControlInput last_implied_input(const PredictedTrajectory& prediction,
                                double ts);

/// Drops the first state and appends one dynamics-extrapolated state;
/// step_index advances by one.
PredictedTrajectory shift_extrapolate(const PredictedTrajectory& previous,
                                      const DiscreteDynamics& dyn,
                                      const ControlInput& last_input);

/// Zero-input rollout of the measured state: the bootstrap prediction for
/// the first game step and for robots that hold position.
PredictedTrajectory hold_prediction(int robot_id, uint64_t step_index,
                                    const JointState& x, int np,
                                    const DiscreteDynamics& dyn);

/// One DMPC agent: owns its solver warm start and the previously applied
/// input. Not reentrant; distinct agents may run concurrently.
class Agent {
 public:
  Agent(int robot_id, const ManipulatorModel* model, AgentConfig config);

  struct RoundResult {
    ControlInput applied;            // u*^0, zero-order hold over the step
    PredictedTrajectory prediction;  // fresh optimal state sequence
    bool deadlock = false;           // gamma_D
    OcpSolution solution;
    bool braked = false;  // solver failure fallback to u = 0
  };

  /// Solves this step's OCP. Every neighbour prediction must already be
  /// shifted to the current step (freshness is asserted) and cover every
  /// robot in the agent's pair set.
  RoundResult round(uint64_t step_index, const JointState& x_current,
                    const JointState& x_target,
                    const std::map<int, PredictedTrajectory>& neighbor_preds,
                    const std::map<int, const ManipulatorModel*>&
                        neighbor_models,
                    const DeadlockParams& deadlock_params);

  /// Resets warm start and input memory (new episode).
  void reset();

  int robot_id() const { return robot_id_; }
  const ManipulatorModel& model() const { return *model_; }
  const AgentConfig& config() const { return config_; }
  int stale_prediction_reads() const { return stale_reads_; }

 private:
  int robot_id_;
  const ManipulatorModel* model_;
  AgentConfig config_;
  std::vector<ControlInput> warm_inputs_;
  Eigen::VectorXd u_prev_;
  int stale_reads_ = 0;
};

struct GameStepResult {
  std::vector<Agent::RoundResult> rounds;  // per agent, agent order
};

/// One synchronous game step: every agent consumes the neighbours'
/// shift-extrapolated predictions from the previous step (Jacobi update;
/// nobody reads a current-step solution), then all agents solve, in
/// parallel when requested. prev_predictions[i] must carry step_index
/// equal to step_index - 1 (or step_index for the bootstrap).
GameStepResult game_step(std::vector<Agent>& agents,
                         const std::vector<JointState>& measured,
                         const std::vector<JointState>& targets,
                         const std::vector<PredictedTrajectory>&
                             prev_predictions,
                         uint64_t step_index,
                         const DeadlockParams& deadlock_params,
                         bool parallel_agents);

/// Centralized baseline: a single NLP over all robots with the collision
/// geometry of every ordered pair as decision variables. Owns its own warm
/// start.
class CentralizedController {
 public:
  explicit CentralizedController(std::vector<Agent*> agents);

  JointSolveResult solve(const std::vector<JointState>& measured,
                         const std::vector<JointState>& targets);

 private:
  std::vector<Agent*> agents_;
  std::vector<std::vector<ControlInput>> warm_inputs_;
  std::vector<Eigen::VectorXd> u_prev_;
};

}  // namespace mrmpc
