#pragma once

#include <optional>
#include <vector>

#include "mrmpc/ocp.hpp"

namespace mrmpc {

struct JointSolveResult {
  std::vector<OcpSolution> robots;  // one per block, same order
  double objective = 0.0;
  SolveStats stats;
};

/// Solves the OCP to a first-order stationary point. The linear dynamics are
/// eliminated by condensing (inputs are the only free variables; states come
/// from the exact rollout), an augmented Lagrangian handles the smooth
/// inequality constraints, and a projected Gauss-Newton iteration handles
/// the input box. Warm start is a per-block input sequence; states are
/// re-derived by rollout. Deterministic for identical inputs.
JointSolveResult solve_ocp(
    const JointOcp& problem,
    const std::vector<std::vector<ControlInput>>* warm_start = nullptr);

}  // namespace mrmpc
