#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "mrmpc/collision.hpp"
#include "mrmpc/dynamics.hpp"
#include "mrmpc/kinematics.hpp"
#include "mrmpc/model.hpp"

namespace mrmpc {

/// Diagonal cost weights of one agent's quadratic objective.
struct CostWeights {
  Eigen::VectorXd qx;  // 2N state error weights
  Eigen::VectorXd qf;  // 2N terminal state error weights
  Eigen::VectorXd ru;  // N input magnitude weights
  Eigen::VectorXd rd;  // N input rate weights

  void validate(int n) const;
};

struct SolverOptions {
  double stationarity_tol = 1e-6;
  double feasibility_tol = 1e-6;
  int max_inner = 200;  // per outer iteration
  int max_outer = 30;
};

struct AgentConfig {
  CostWeights weights;
  int np = 0;   // prediction horizon steps
  double ts = 0.0;
  DiscreteDynamics dyn;
  Bounds bounds;
  CollisionPairSet pair_set;
  StaticEnvironment env;
  SmoothProjection proj;
  SolverOptions solver;
  // Tightening of the inter-robot margin constraints (margin >= epsilon at
  // the samples), buying clearance for the continuous path between them.
  double margin_epsilon = 0.0;

  void validate(int n) const;
};

struct SolveStats {
  int inner_iterations = 0;
  int outer_iterations = 0;
  double solve_seconds = 0.0;
  bool converged = false;
  double max_violation = 0.0;
  bool numerical_failure = false;
};

/// Optimal state/input sequence of one robot over the horizon.
struct OcpSolution {
  std::vector<JointState> states;   // Np + 1
  std::vector<ControlInput> inputs;  // Np
  double objective = 0.0;
  SolveStats stats;
};

double stage_cost(const JointState& x, const ControlInput& u,
                  const ControlInput& u_next, const JointState& x_goal,
                  const CostWeights& weights, double ts);

double terminal_cost(const JointState& x, const JointState& x_goal,
                     const CostWeights& weights);

/// World-frame ellipsoid sequence of one neighbouring robot whose motion is
/// frozen at its communicated prediction.
struct FrozenNeighbor {
  int robot_id = -1;
  std::vector<std::vector<Ellipsoid>> per_step;  // [k][ellipsoid_index]
};

FrozenNeighbor freeze_neighbor(int robot_id, const ManipulatorModel& model,
                               const std::vector<JointState>& states);

class NumericalFailure : public std::runtime_error {
 public:
  explicit NumericalFailure(const std::string& what)
      : std::runtime_error(what) {}
};

/// Multiple-shooting transcription over one or more robots. A single block
/// with frozen neighbours is one agent's problem of the distributed game;
/// several blocks with cross pairs form the centralized problem.
///
/// Decision vector z per block: [x^0 .. x^Np, u^0 .. u^{Np-1}], blocks
/// concatenated. Constraint conventions: equalities c(z) = 0 (dynamics and
/// initial state), inequalities written as margins m(z) >= 0.
class JointOcp {
 public:
  struct Block {
    int robot_id = 0;
    const ManipulatorModel* model = nullptr;
    AgentConfig config;
    JointState x_start;
    JointState x_goal;
    Eigen::VectorXd u_prev;  // previously applied input, links the rate cost
  };

  JointOcp(std::vector<Block> blocks, std::vector<FrozenNeighbor> frozen);

  int block_count() const { return static_cast<int>(blocks_.size()); }
  const Block& block(int b) const { return blocks_[b]; }
  int horizon() const { return np_; }

  // Full-space dimensions and layout.
  int variable_count() const { return var_count_; }
  int state_offset(int b, int k) const;
  int input_offset(int b, int k) const;
  int equality_count() const { return eq_count_; }
  int inequality_count() const;
  int collision_row_count() const {
    return static_cast<int>(collision_rows_.size());
  }
  int static_row_count() const { return static_cast<int>(static_rows_.size()); }
  int state_box_row_count() const { return state_box_rows_; }
  int input_box_row_count() const { return input_box_rows_; }

  /// Packs per-block state/input sequences into a full decision vector.
  Eigen::VectorXd pack(const std::vector<std::vector<JointState>>& states,
                       const std::vector<std::vector<ControlInput>>& inputs)
      const;
  void unpack(const Eigen::VectorXd& z,
              std::vector<std::vector<JointState>>& states,
              std::vector<std::vector<ControlInput>>& inputs) const;

  double objective(const Eigen::VectorXd& z) const;
  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& z) const;
  Eigen::VectorXd equality_constraints(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd equality_jacobian(const Eigen::VectorXd& z) const;
  /// Margins m(z); the OCP is feasible where every entry is >= 0.
  Eigen::VectorXd inequality_margins(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd inequality_jacobian(const Eigen::VectorXd& z) const;

  /// Enables the OpenMP evaluation path (bit-identical to the serial one;
  /// the kernels write independent slots and reduce serially).
  void set_parallel_kernels(bool enabled) { parallel_kernels_ = enabled; }
  bool parallel_kernels() const { return parallel_kernels_; }

  // --- internals shared with the solver ---

  struct CollisionRowRef {
    int seg_block = 0;      // block owning the line segment
    int seg_index = 0;
    bool frozen = false;    // ellipsoid source: frozen neighbour or block
    int source = 0;         // frozen index or block index
    int ell_index = 0;
    int k = 0;              // horizon step, 1..Np
  };
  struct StaticRowRef {
    int block = 0;
    int base_pos = 0;  // position within static_base_frames(model)
    int frame = 0;
    int k = 0;
  };

  const std::vector<CollisionRowRef>& collision_rows() const {
    return collision_rows_;
  }
  const std::vector<StaticRowRef>& static_rows() const { return static_rows_; }

  /// Geometry caches and per-row results for one trajectory evaluation.
  struct Workspace {
    // [block][k]
    std::vector<std::vector<FkJacobians>> jac;
    std::vector<std::vector<std::vector<LineSegment>>> segments;
    std::vector<std::vector<std::vector<Ellipsoid>>> ellipsoids;
    // per collision row
    Eigen::VectorXd collision_margin;
    std::vector<Eigen::VectorXd> collision_grad_seg;  // w.r.t. segment-side q
    std::vector<Eigen::VectorXd> collision_grad_ell;  // w.r.t. ellipsoid-side q
    // per static row
    Eigen::VectorXd static_margin;
    std::vector<Eigen::VectorXd> static_grad;  // w.r.t. q
  };

  void init_workspace(Workspace& ws) const;

  /// Computes geometry, margins and (optionally) margin gradients for the
  /// given per-block trajectories. Throws NumericalFailure on NaN.
  void evaluate_margins(const std::vector<std::vector<JointState>>& states,
                        bool with_gradients, Workspace& ws) const;

  double objective_value(const std::vector<std::vector<JointState>>& states,
                         const std::vector<std::vector<ControlInput>>& inputs)
      const;

 private:
  std::vector<Block> blocks_;
  std::vector<FrozenNeighbor> frozen_;
  int np_ = 0;
  int var_count_ = 0;
  int eq_count_ = 0;
  int state_box_rows_ = 0;
  int input_box_rows_ = 0;
  std::vector<int> block_offset_;       // start of each block in z
  std::vector<std::vector<int>> static_frames_;  // per block
  std::vector<CollisionRowRef> collision_rows_;
  std::vector<StaticRowRef> static_rows_;
  bool parallel_kernels_ = false;

  void geometry_pass(const std::vector<std::vector<JointState>>& states,
                     bool with_gradients, Workspace& ws) const;
};

}  // namespace mrmpc
