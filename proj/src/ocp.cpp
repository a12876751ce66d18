#include "mrmpc/ocp.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mrmpc {

void CostWeights::validate(int n) const {
  if (qx.size() != 2 * n || qf.size() != 2 * n || ru.size() != n ||
      rd.size() != n)
    throw std::invalid_argument("cost weights have wrong dimensions");
  auto nonneg = [](const Eigen::VectorXd& v) {
    return v.allFinite() && (v.array() >= 0.0).all();
  };
  if (!nonneg(qx) || !nonneg(qf) || !nonneg(ru) || !nonneg(rd))
    throw std::invalid_argument("cost weights must be finite and >= 0");
}

void AgentConfig::validate(int n) const {
  weights.validate(n);
  if (np < 2) throw std::invalid_argument("horizon must be >= 2");
  if (!(ts > 0.0)) throw std::invalid_argument("sampling time must be > 0");
  if (dyn.n != n || dyn.ts != ts)
    throw std::invalid_argument("dynamics do not match the agent config");
  if (!(solver.stationarity_tol > 0.0) || !(solver.feasibility_tol > 0.0))
    throw std::invalid_argument("solver tolerances must be > 0");
}

double stage_cost(const JointState& x, const ControlInput& u,
                  const ControlInput& u_next, const JointState& x_goal,
                  const CostWeights& weights, double ts) {
  const Eigen::VectorXd e = x.stacked() - x_goal.stacked();
  const Eigen::VectorXd du = (u_next - u) / ts;
  return e.dot(weights.qx.cwiseProduct(e)) + u.dot(weights.ru.cwiseProduct(u)) +
         du.dot(weights.rd.cwiseProduct(du));
}

double terminal_cost(const JointState& x, const JointState& x_goal,
                     const CostWeights& weights) {
  const Eigen::VectorXd e = x.stacked() - x_goal.stacked();
  return e.dot(weights.qf.cwiseProduct(e));
}

FrozenNeighbor freeze_neighbor(int robot_id, const ManipulatorModel& model,
                               const std::vector<JointState>& states) {
  FrozenNeighbor out;
  out.robot_id = robot_id;
  out.per_step.reserve(states.size());
  std::vector<LinkFrame> frames;
  for (const auto& x : states) {
    forward_kinematics_into(model, x.q, frames);
    out.per_step.push_back(ellipsoids(model, frames));
  }
  return out;
}

JointOcp::JointOcp(std::vector<Block> blocks, std::vector<FrozenNeighbor> frozen)
    : blocks_(std::move(blocks)), frozen_(std::move(frozen)) {
  if (blocks_.empty()) throw std::invalid_argument("no robots in the problem");
  np_ = blocks_[0].config.np;
  const double ts = blocks_[0].config.ts;
  for (const auto& b : blocks_) {
    if (b.model == nullptr) throw std::invalid_argument("block without model");
    const int n = b.model->joint_count();
    b.config.validate(n);
    if (b.config.np != np_ || b.config.ts != ts)
      throw std::invalid_argument("all robots must share Np and Ts");
    if (b.x_start.joints() != n || b.x_goal.joints() != n ||
        b.u_prev.size() != n)
      throw std::invalid_argument("state dimensions do not match the model");
  }
  for (const auto& f : frozen_) {
    if (static_cast<int>(f.per_step.size()) != np_ + 1)
      throw std::invalid_argument(
          "neighbor prediction length mismatch: expected Np+1 states");
  }

  // Variable layout.
  block_offset_.resize(blocks_.size());
  int off = 0;
  for (size_t b = 0; b < blocks_.size(); ++b) {
    block_offset_[b] = off;
    const int n = blocks_[b].model->joint_count();
    off += (np_ + 1) * 2 * n + np_ * n;
    eq_count_ += 2 * n + np_ * 2 * n;
    state_box_rows_ += (np_ - 1) * 4 * n;
    input_box_rows_ += np_ * 2 * n;
  }
  var_count_ = off;

  // Resolve collision pairs block by block, preserving pair-set order.
  auto find_block = [&](int robot_id) {
    for (size_t b = 0; b < blocks_.size(); ++b)
      if (blocks_[b].robot_id == robot_id) return static_cast<int>(b);
    return -1;
  };
  auto find_frozen = [&](int robot_id) {
    for (size_t f = 0; f < frozen_.size(); ++f)
      if (frozen_[f].robot_id == robot_id) return static_cast<int>(f);
    return -1;
  };
  for (size_t b = 0; b < blocks_.size(); ++b) {
    const auto& block = blocks_[b];
    for (int k = 1; k <= np_; ++k) {
      for (const auto& pair : block.config.pair_set.pairs) {
        CollisionRowRef row;
        row.seg_block = static_cast<int>(b);
        row.seg_index = pair.segment_index;
        row.ell_index = pair.ellipsoid_index;
        row.k = k;
        if (pair.segment_index < 0 ||
            pair.segment_index >=
                static_cast<int>(block.model->segment_spec.size()))
          throw std::invalid_argument("pair references unknown segment index");
        const int other_block = find_block(pair.other_robot);
        if (other_block >= 0 && other_block != static_cast<int>(b)) {
          row.frozen = false;
          row.source = other_block;
          if (pair.ellipsoid_index >=
              static_cast<int>(
                  blocks_[other_block].model->ellipsoid_spec.size()))
            throw std::invalid_argument(
                "pair references unknown ellipsoid index");
        } else {
          const int fi = find_frozen(pair.other_robot);
          if (fi < 0)
            throw std::runtime_error(
                "stale neighbor: no prediction for robot " +
                std::to_string(pair.other_robot));
          row.frozen = true;
          row.source = fi;
          if (pair.ellipsoid_index >=
              static_cast<int>(frozen_[fi].per_step[0].size()))
            throw std::invalid_argument(
                "pair references unknown ellipsoid index");
        }
        collision_rows_.push_back(row);
      }
    }
  }

  static_frames_.resize(blocks_.size());
  for (size_t b = 0; b < blocks_.size(); ++b) {
    static_frames_[b] = static_base_frames(*blocks_[b].model);
    for (int k = 1; k <= np_; ++k)
      for (size_t p = 0; p < static_frames_[b].size(); ++p)
        static_rows_.push_back({static_cast<int>(b), static_cast<int>(p),
                                static_frames_[b][p], k});
  }
}

int JointOcp::state_offset(int b, int k) const {
  return block_offset_[b] + k * 2 * blocks_[b].model->joint_count();
}

int JointOcp::input_offset(int b, int k) const {
  const int n = blocks_[b].model->joint_count();
  return block_offset_[b] + (np_ + 1) * 2 * n + k * n;
}

int JointOcp::inequality_count() const {
  return collision_row_count() + static_row_count() + state_box_rows_ +
         input_box_rows_;
}

Eigen::VectorXd JointOcp::pack(
    const std::vector<std::vector<JointState>>& states,
    const std::vector<std::vector<ControlInput>>& inputs) const {
  Eigen::VectorXd z(var_count_);
  for (int b = 0; b < block_count(); ++b) {
    const int n = blocks_[b].model->joint_count();
    for (int k = 0; k <= np_; ++k)
      z.segment(state_offset(b, k), 2 * n) = states[b][k].stacked();
    for (int k = 0; k < np_; ++k)
      z.segment(input_offset(b, k), n) = inputs[b][k];
  }
  return z;
}

void JointOcp::unpack(const Eigen::VectorXd& z,
                      std::vector<std::vector<JointState>>& states,
                      std::vector<std::vector<ControlInput>>& inputs) const {
  states.assign(block_count(), {});
  inputs.assign(block_count(), {});
  for (int b = 0; b < block_count(); ++b) {
    const int n = blocks_[b].model->joint_count();
    states[b].resize(np_ + 1);
    inputs[b].resize(np_);
    for (int k = 0; k <= np_; ++k)
      states[b][k] =
          JointState::from_stacked(z.segment(state_offset(b, k), 2 * n));
    for (int k = 0; k < np_; ++k)
      inputs[b][k] = z.segment(input_offset(b, k), n);
  }
}

double JointOcp::objective_value(
    const std::vector<std::vector<JointState>>& states,
    const std::vector<std::vector<ControlInput>>& inputs) const {
  double total = 0.0;
  for (int b = 0; b < block_count(); ++b) {
    const auto& blk = blocks_[b];
    const auto& w = blk.config.weights;
    const double ts = blk.config.ts;
    for (int k = 0; k < np_; ++k) {
      const Eigen::VectorXd e = states[b][k].stacked() - blk.x_goal.stacked();
      total += e.dot(w.qx.cwiseProduct(e)) +
               inputs[b][k].dot(w.ru.cwiseProduct(inputs[b][k]));
    }
    total += terminal_cost(states[b][np_], blk.x_goal, w);
    // Input-rate terms over k = 0..Np-2 plus the link to the previously
    // applied input, keeping commands smooth across re-solves.
    for (int k = 0; k + 1 < np_; ++k) {
      const Eigen::VectorXd du = (inputs[b][k + 1] - inputs[b][k]) / ts;
      total += du.dot(w.rd.cwiseProduct(du));
    }
    const Eigen::VectorXd du0 = (inputs[b][0] - blk.u_prev) / ts;
    total += du0.dot(w.rd.cwiseProduct(du0));
  }
  if (!std::isfinite(total))
    throw NumericalFailure("numerical failure: objective is not finite");
  return total;
}

double JointOcp::objective(const Eigen::VectorXd& z) const {
  std::vector<std::vector<JointState>> states;
  std::vector<std::vector<ControlInput>> inputs;
  unpack(z, states, inputs);
  return objective_value(states, inputs);
}

Eigen::VectorXd JointOcp::objective_gradient(const Eigen::VectorXd& z) const {
  std::vector<std::vector<JointState>> states;
  std::vector<std::vector<ControlInput>> inputs;
  unpack(z, states, inputs);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(var_count_);
  for (int b = 0; b < block_count(); ++b) {
    const auto& blk = blocks_[b];
    const auto& w = blk.config.weights;
    const int n = blk.model->joint_count();
    const double ts = blk.config.ts;
    for (int k = 0; k <= np_; ++k) {
      const Eigen::VectorXd e = states[b][k].stacked() - blk.x_goal.stacked();
      const Eigen::VectorXd& wk = (k == np_) ? w.qf : w.qx;
      grad.segment(state_offset(b, k), 2 * n) = 2.0 * wk.cwiseProduct(e);
    }
    for (int k = 0; k < np_; ++k)
      grad.segment(input_offset(b, k), n) =
          2.0 * w.ru.cwiseProduct(inputs[b][k]);
    for (int k = 0; k + 1 < np_; ++k) {
      const Eigen::VectorXd g =
          2.0 * w.rd.cwiseProduct(inputs[b][k + 1] - inputs[b][k]) / (ts * ts);
      grad.segment(input_offset(b, k), n) -= g;
      grad.segment(input_offset(b, k + 1), n) += g;
    }
    grad.segment(input_offset(b, 0), n) +=
        2.0 * w.rd.cwiseProduct(inputs[b][0] - blk.u_prev) / (ts * ts);
  }
  return grad;
}

Eigen::VectorXd JointOcp::equality_constraints(const Eigen::VectorXd& z) const {
  Eigen::VectorXd c(eq_count_);
  int row = 0;
  for (int b = 0; b < block_count(); ++b) {
    const auto& blk = blocks_[b];
    const int n = blk.model->joint_count();
    const double ts = blk.config.ts;
    c.segment(row, 2 * n) =
        z.segment(state_offset(b, 0), 2 * n) - blk.x_start.stacked();
    row += 2 * n;
    for (int k = 0; k < np_; ++k) {
      const auto x = z.segment(state_offset(b, k), 2 * n);
      const auto xn = z.segment(state_offset(b, k + 1), 2 * n);
      const auto u = z.segment(input_offset(b, k), n);
      c.segment(row, n) = xn.head(n) - x.head(n) - ts * x.tail(n) -
                          0.5 * ts * ts * u;
      c.segment(row + n, n) = xn.tail(n) - x.tail(n) - ts * u;
      row += 2 * n;
    }
  }
  return c;
}

Eigen::MatrixXd JointOcp::equality_jacobian(const Eigen::VectorXd&) const {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(eq_count_, var_count_);
  int row = 0;
  for (int b = 0; b < block_count(); ++b) {
    const auto& blk = blocks_[b];
    const int n = blk.model->joint_count();
    const double ts = blk.config.ts;
    for (int i = 0; i < 2 * n; ++i) jac(row + i, state_offset(b, 0) + i) = 1.0;
    row += 2 * n;
    for (int k = 0; k < np_; ++k) {
      for (int i = 0; i < 2 * n; ++i) {
        jac(row + i, state_offset(b, k + 1) + i) = 1.0;
        jac(row + i, state_offset(b, k) + i) = -1.0;
      }
      for (int j = 0; j < n; ++j) {
        jac(row + j, state_offset(b, k) + n + j) = -ts;
        jac(row + j, input_offset(b, k) + j) = -0.5 * ts * ts;
        jac(row + n + j, input_offset(b, k) + j) = -ts;
      }
      row += 2 * n;
    }
  }
  return jac;
}

void JointOcp::init_workspace(Workspace& ws) const {
  ws.jac.resize(block_count());
  ws.segments.resize(block_count());
  ws.ellipsoids.resize(block_count());
  for (int b = 0; b < block_count(); ++b) {
    ws.jac[b].resize(np_ + 1);
    ws.segments[b].resize(np_ + 1);
    ws.ellipsoids[b].resize(np_ + 1);
  }
  ws.collision_margin.resize(collision_row_count());
  ws.collision_grad_seg.resize(collision_row_count());
  ws.collision_grad_ell.resize(collision_row_count());
  ws.static_margin.resize(static_row_count());
  ws.static_grad.resize(static_row_count());
}

void JointOcp::geometry_pass(
    const std::vector<std::vector<JointState>>& states, bool with_gradients,
    Workspace& ws) const {
  // Does any row use a block's ellipsoids (centralized coupling)?
  std::vector<char> needs_ellipsoids(block_count(), 0);
  for (const auto& row : collision_rows_)
    if (!row.frozen) needs_ellipsoids[row.source] = 1;

  const int total = block_count() * (np_ + 1);
#pragma omp parallel for schedule(static) if (parallel_kernels_)
  for (int idx = 0; idx < total; ++idx) {
    const int b = idx / (np_ + 1);
    const int k = idx % (np_ + 1);
    const auto& model = *blocks_[b].model;
    auto& slot = ws.jac[b][k];
    if (with_gradients)
      fk_jacobians_into(model, states[b][k].q, slot);
    else
      forward_kinematics_into(model, states[b][k].q, slot.frames);
    line_segments_into(model, slot.frames, ws.segments[b][k]);
    if (needs_ellipsoids[b])
      ellipsoids_into(model, slot.frames, ws.ellipsoids[b][k]);
  }
}

void JointOcp::evaluate_margins(
    const std::vector<std::vector<JointState>>& states, bool with_gradients,
    Workspace& ws) const {
  geometry_pass(states, with_gradients, ws);

  const int rows = collision_row_count();
#pragma omp parallel for schedule(static) if (parallel_kernels_)
  for (int i = 0; i < rows; ++i) {
    const auto& row = collision_rows_[i];
    const auto& blk = blocks_[row.seg_block];
    const LineSegment& seg = ws.segments[row.seg_block][row.k][row.seg_index];
    const Ellipsoid& ell =
        row.frozen ? frozen_[row.source].per_step[row.k][row.ell_index]
                   : ws.ellipsoids[row.source][row.k][row.ell_index];
    if (!with_gradients) {
      ws.collision_margin[i] = els_margin(seg, ell, blk.config.proj);
      continue;
    }
    const ElsGradients grads = els_margin_gradients(seg, ell, blk.config.proj);
    ws.collision_margin[i] = grads.margin;
    ws.collision_grad_seg[i] =
        chain_to_segment_robot(grads, ws.jac[row.seg_block][row.k],
                               blk.model->segment_spec[row.seg_index]);
    if (!row.frozen)
      ws.collision_grad_ell[i] = chain_to_ellipsoid_robot(
          grads, ws.jac[row.source][row.k],
          blocks_[row.source].model->ellipsoid_spec[row.ell_index], ell);
  }

  const int srows = static_row_count();
#pragma omp parallel for schedule(static) if (parallel_kernels_)
  for (int i = 0; i < srows; ++i) {
    const auto& row = static_rows_[i];
    const auto& blk = blocks_[row.block];
    const auto& frames = ws.jac[row.block][row.k].frames;
    double zpos = frames[row.frame].origin.z();
    if (row.frame == blk.model->joint_count() + 1)
      zpos -= blk.model->gripper_offset;
    ws.static_margin[i] =
        zpos - blk.config.env.table_height - blk.config.env.clearance;
    if (with_gradients)
      ws.static_grad[i] =
          ws.jac[row.block][row.k].origin_jac[row.frame].row(2).transpose();
  }

  if (ws.collision_margin.hasNaN() || ws.static_margin.hasNaN()) {
    std::ostringstream oss;
    oss << "numerical failure: NaN in constraint evaluation;";
    for (int b = 0; b < block_count(); ++b)
      oss << " robot " << blocks_[b].robot_id << " q0=["
          << states[b][0].q.transpose() << "]";
    throw NumericalFailure(oss.str());
  }
}

Eigen::VectorXd JointOcp::inequality_margins(const Eigen::VectorXd& z) const {
  std::vector<std::vector<JointState>> states;
  std::vector<std::vector<ControlInput>> inputs;
  unpack(z, states, inputs);

  Workspace ws;
  init_workspace(ws);
  evaluate_margins(states, false, ws);

  Eigen::VectorXd m(inequality_count());
  int row = 0;
  for (int i = 0; i < collision_row_count(); ++i)
    m[row + i] = ws.collision_margin[i] -
                 blocks_[collision_rows_[i].seg_block].config.margin_epsilon;
  row += collision_row_count();
  m.segment(row, static_row_count()) = ws.static_margin;
  row += static_row_count();
  for (int b = 0; b < block_count(); ++b) {
    const auto& bounds = blocks_[b].config.bounds;
    const int n = blocks_[b].model->joint_count();
    for (int k = 1; k < np_; ++k) {
      const auto& x = states[b][k];
      for (int j = 0; j < n; ++j) {
        m[row++] = x.q[j] - bounds.q_min[j];
        m[row++] = bounds.q_max[j] - x.q[j];
      }
      for (int j = 0; j < n; ++j) {
        m[row++] = x.qd[j] + bounds.qd_max[j];
        m[row++] = bounds.qd_max[j] - x.qd[j];
      }
    }
    for (int k = 0; k < np_; ++k) {
      for (int j = 0; j < n; ++j) {
        m[row++] = inputs[b][k][j] + bounds.u_max[j];
        m[row++] = bounds.u_max[j] - inputs[b][k][j];
      }
    }
  }
  return m;
}

Eigen::MatrixXd JointOcp::inequality_jacobian(const Eigen::VectorXd& z) const {
  std::vector<std::vector<JointState>> states;
  std::vector<std::vector<ControlInput>> inputs;
  unpack(z, states, inputs);

  Workspace ws;
  init_workspace(ws);
  evaluate_margins(states, true, ws);

  Eigen::MatrixXd jac =
      Eigen::MatrixXd::Zero(inequality_count(), var_count_);
  int row = 0;
  for (int i = 0; i < collision_row_count(); ++i, ++row) {
    const auto& ref = collision_rows_[i];
    const int n_seg = blocks_[ref.seg_block].model->joint_count();
    jac.row(row).segment(state_offset(ref.seg_block, ref.k), n_seg) =
        ws.collision_grad_seg[i].transpose();
    if (!ref.frozen) {
      const int n_ell = blocks_[ref.source].model->joint_count();
      jac.row(row).segment(state_offset(ref.source, ref.k), n_ell) =
          ws.collision_grad_ell[i].transpose();
    }
  }
  for (int i = 0; i < static_row_count(); ++i, ++row) {
    const auto& ref = static_rows_[i];
    const int n = blocks_[ref.block].model->joint_count();
    jac.row(row).segment(state_offset(ref.block, ref.k), n) =
        ws.static_grad[i].transpose();
  }
  for (int b = 0; b < block_count(); ++b) {
    const int n = blocks_[b].model->joint_count();
    for (int k = 1; k < np_; ++k) {
      for (int j = 0; j < n; ++j) {
        jac(row++, state_offset(b, k) + j) = 1.0;
        jac(row++, state_offset(b, k) + j) = -1.0;
      }
      for (int j = 0; j < n; ++j) {
        jac(row++, state_offset(b, k) + n + j) = 1.0;
        jac(row++, state_offset(b, k) + n + j) = -1.0;
      }
    }
    for (int k = 0; k < np_; ++k) {
      for (int j = 0; j < n; ++j) {
        jac(row++, input_offset(b, k) + j) = 1.0;
        jac(row++, input_offset(b, k) + j) = -1.0;
      }
    }
  }
  return jac;
}

}  // namespace mrmpc
