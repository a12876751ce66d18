#include "mrmpc/game.hpp"

#include <algorithm>
#include <stdexcept>

namespace mrmpc {

PredictedTrajectory make_prediction(int robot_id, uint64_t step_index,
                                    std::vector<JointState> states,
                                    const DiscreteDynamics& dyn,
                                    const Bounds& bounds, double tol) {
  if (states.size() < 2)
    throw std::invalid_argument("prediction needs at least two states");
  for (size_t k = 0; k + 1 < states.size(); ++k) {
    const ControlInput u = (states[k + 1].qd - states[k].qd) / dyn.ts;
    if (!bounds.contains_input(u, tol))
      throw std::invalid_argument(
          "prediction is not dynamically consistent: implied input exceeds "
          "bounds at step " +
          std::to_string(k));
    const JointState next = dyn.step(states[k], u);
    if ((next.q - states[k + 1].q).cwiseAbs().maxCoeff() > tol)
      throw std::invalid_argument(
          "prediction is not dynamically consistent at step " +
          std::to_string(k));
  }
  PredictedTrajectory p;
  p.robot_id = robot_id;
  p.step_index = step_index;
  p.states = std::move(states);
  return p;
}

ControlInput last_implied_input(const PredictedTrajectory& prediction,
                                double ts) {
  const size_t n = prediction.states.size();
  return (prediction.states[n - 1].qd - prediction.states[n - 2].qd) / ts;
}

PredictedTrajectory shift_extrapolate(const PredictedTrajectory& previous,
                                      const DiscreteDynamics& dyn,
                                      const ControlInput& last_input) {
  PredictedTrajectory next;
  next.robot_id = previous.robot_id;
  next.step_index = previous.step_index + 1;
  next.states.assign(previous.states.begin() + 1, previous.states.end());
  next.states.push_back(dyn.step(previous.states.back(), last_input));
  return next;
}

PredictedTrajectory hold_prediction(int robot_id, uint64_t step_index,
                                    const JointState& x, int np,
                                    const DiscreteDynamics& dyn) {
  PredictedTrajectory p;
  p.robot_id = robot_id;
  p.step_index = step_index;
  p.states.reserve(np + 1);
  p.states.push_back(x);
  const ControlInput zero = Eigen::VectorXd::Zero(x.joints());
  for (int k = 0; k < np; ++k)
    p.states.push_back(dyn.step(p.states.back(), zero));
  return p;
}

Agent::Agent(int robot_id, const ManipulatorModel* model, AgentConfig config)
    : robot_id_(robot_id), model_(model), config_(std::move(config)) {
  config_.validate(model_->joint_count());
  u_prev_ = Eigen::VectorXd::Zero(model_->joint_count());
}

void Agent::reset() {
  warm_inputs_.clear();
  u_prev_.setZero();
  stale_reads_ = 0;
}

Agent::RoundResult Agent::round(
    uint64_t step_index, const JointState& x_current,
    const JointState& x_target,
    const std::map<int, PredictedTrajectory>& neighbor_preds,
    const std::map<int, const ManipulatorModel*>& neighbor_models,
    const DeadlockParams& deadlock_params) {
  // Freeze the neighbours' geometry at their communicated predictions.
  std::vector<FrozenNeighbor> frozen;
  for (const auto& pair : config_.pair_set.pairs) {
    const int other = pair.other_robot;
    if (std::any_of(frozen.begin(), frozen.end(),
                    [&](const FrozenNeighbor& f) { return f.robot_id == other; }))
      continue;
    auto pred = neighbor_preds.find(other);
    auto model = neighbor_models.find(other);
    if (pred == neighbor_preds.end() || model == neighbor_models.end())
      throw std::runtime_error("stale neighbor: no prediction for robot " +
                               std::to_string(other));
    if (pred->second.step_index != step_index) ++stale_reads_;
    frozen.push_back(
        freeze_neighbor(other, *model->second, pred->second.states));
  }

  JointOcp::Block blk;
  blk.robot_id = robot_id_;
  blk.model = model_;
  blk.config = config_;
  blk.x_start = x_current;
  blk.x_goal = x_target;
  blk.u_prev = u_prev_;

  RoundResult result;
  try {
    JointOcp problem({blk}, std::move(frozen));
    std::vector<std::vector<ControlInput>> warm{warm_inputs_};
    auto solved = solve_ocp(problem, warm_inputs_.empty() ? nullptr : &warm);
    result.solution = std::move(solved.robots[0]);
    result.applied = result.solution.inputs[0];
    result.prediction.robot_id = robot_id_;
    result.prediction.step_index = step_index;
    result.prediction.states = result.solution.states;
    result.deadlock = detect_deadlock(result.solution, x_current, x_target,
                                      deadlock_params);
    // Warm start for the next step: shift by one, repeat the last input.
    warm_inputs_.assign(result.solution.inputs.begin() + 1,
                        result.solution.inputs.end());
    warm_inputs_.push_back(result.solution.inputs.back());
    u_prev_ = result.applied;
  } catch (const NumericalFailure&) {
    // Safe degradation: brake for this step.
    result.braked = true;
    result.applied = Eigen::VectorXd::Zero(model_->joint_count());
    result.prediction =
        hold_prediction(robot_id_, step_index, x_current, config_.np,
                        config_.dyn);
    result.solution.states = result.prediction.states;
    result.solution.inputs.assign(config_.np, result.applied);
    result.solution.stats.numerical_failure = true;
    result.deadlock = false;
    warm_inputs_.clear();
    u_prev_ = result.applied;
  }
  return result;
}

GameStepResult game_step(std::vector<Agent>& agents,
                         const std::vector<JointState>& measured,
                         const std::vector<JointState>& targets,
                         const std::vector<PredictedTrajectory>&
                             prev_predictions,
                         uint64_t step_index,
                         const DeadlockParams& deadlock_params,
                         bool parallel_agents) {
  const int m = static_cast<int>(agents.size());
  GameStepResult result;
  result.rounds.resize(m);

  // Jacobi exchange: shift-extrapolate last step's predictions once for
  // everyone before any agent solves, so nobody can see a fresh solution.
  std::vector<PredictedTrajectory> shifted(m);
  std::map<int, const ManipulatorModel*> models;
  for (int i = 0; i < m; ++i) {
    const auto& prev = prev_predictions[i];
    if (prev.step_index == step_index) {
      shifted[i] = prev;  // bootstrap prediction, already aligned
    } else {
      if (prev.step_index + 1 != step_index)
        throw std::invalid_argument("prediction from the wrong step");
      shifted[i] = shift_extrapolate(
          prev, agents[i].config().dyn,
          last_implied_input(prev, agents[i].config().ts));
    }
    models[agents[i].robot_id()] = &agents[i].model();
  }

  std::map<int, PredictedTrajectory> pred_map;
  for (int i = 0; i < m; ++i) pred_map[agents[i].robot_id()] = shifted[i];

#pragma omp parallel for schedule(static) if (parallel_agents)
  for (int i = 0; i < m; ++i) {
    result.rounds[i] = agents[i].round(step_index, measured[i], targets[i],
                                       pred_map, models, deadlock_params);
  }
  return result;
}

CentralizedController::CentralizedController(std::vector<Agent*> agents)
    : agents_(std::move(agents)) {
  for (const auto* agent : agents_)
    u_prev_.push_back(Eigen::VectorXd::Zero(agent->model().joint_count()));
}

JointSolveResult CentralizedController::solve(
    const std::vector<JointState>& measured,
    const std::vector<JointState>& targets) {
  std::vector<JointOcp::Block> blocks;
  for (size_t i = 0; i < agents_.size(); ++i) {
    JointOcp::Block blk;
    blk.robot_id = agents_[i]->robot_id();
    blk.model = &agents_[i]->model();
    blk.config = agents_[i]->config();
    blk.x_start = measured[i];
    blk.x_goal = targets[i];
    blk.u_prev = u_prev_[i];
    blocks.push_back(std::move(blk));
  }
  JointOcp problem(std::move(blocks), {});
  auto result = solve_ocp(problem,
                          warm_inputs_.empty() ? nullptr : &warm_inputs_);
  warm_inputs_.clear();
  u_prev_.clear();
  for (const auto& sol : result.robots) {
    std::vector<ControlInput> warm(sol.inputs.begin() + 1, sol.inputs.end());
    warm.push_back(sol.inputs.back());
    warm_inputs_.push_back(std::move(warm));
    u_prev_.push_back(sol.inputs[0]);
  }
  return result;
}

}  // namespace mrmpc
