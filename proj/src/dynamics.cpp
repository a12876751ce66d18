#include "mrmpc/dynamics.hpp"

#include <stdexcept>

namespace mrmpc {

DiscreteDynamics discretize(int joint_count, double ts) {
  if (joint_count < 1)
    throw std::invalid_argument("discretize: joint count must be >= 1");
  if (ts < 0.0)
    throw std::invalid_argument("discretize: sampling time must be >= 0");
  return DiscreteDynamics{joint_count, ts};
}

JointState step(const DiscreteDynamics& dyn, const JointState& x,
                const ControlInput& u) {
  return dyn.step(x, u);
}

std::vector<JointState> rollout(const DiscreteDynamics& dyn,
                                const JointState& x0,
                                const std::vector<ControlInput>& inputs) {
  std::vector<JointState> states;
  states.reserve(inputs.size() + 1);
  states.push_back(x0);
  for (const auto& u : inputs) states.push_back(dyn.step(states.back(), u));
  return states;
}

Bounds bounds(const ManipulatorModel& model) {
  Bounds b;
  b.q_min = model.joint_min;
  b.q_max = model.joint_max;
  b.qd_max = model.velocity_limits;
  b.u_max = model.acceleration_limits;
  return b;
}

}  // namespace mrmpc
