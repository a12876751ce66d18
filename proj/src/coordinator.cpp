#include "mrmpc/coordinator.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace mrmpc {

void DeadlockParams::validate() const {
  if (!(eps_v > 0.0) || !(delta_x > 0.0) || !(d_min > 0.0) || !(eps_res > 0.0))
    throw std::invalid_argument("deadlock parameters must be positive");
}

bool detect_deadlock(const OcpSolution& solution, const JointState& x_current,
                     const JointState& x_target, const DeadlockParams& params) {
  const Eigen::VectorXd dv =
      solution.states.back().qd - solution.states.front().qd;
  return dv.norm() <= params.eps_v &&
         residuum(x_current, x_target) >= params.delta_x;
}

double residuum(const JointState& x_current, const JointState& x_target) {
  return (x_current.stacked() - x_target.stacked()).norm();
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

double robot_distance(const ManipulatorModel& ma, const Eigen::VectorXd& qa,
                      const ManipulatorModel& mb, const Eigen::VectorXd& qb) {
  const auto sa = line_segments(ma, qa);
  const auto sb = line_segments(mb, qb);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& a : sa)
    for (const auto& b : sb)
      best = std::min(best, segment_segment_distance(a, b));
  return best;
}

}  // namespace

std::vector<std::vector<int>> cluster_robots(
    const std::vector<const ManipulatorModel*>& models,
    const std::vector<Eigen::VectorXd>& joint_positions,
    const std::vector<bool>& gamma_d, double d_min) {
  const int m = static_cast<int>(models.size());
  UnionFind uf(m);
  for (int i = 0; i < m; ++i) {
    if (!gamma_d[i]) continue;
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      if (robot_distance(*models[i], joint_positions[i], *models[j],
                         joint_positions[j]) <= d_min)
        uf.unite(i, j);
    }
  }
  std::vector<std::vector<int>> clusters;
  std::vector<int> root_to_cluster(m, -1);
  for (int i = 0; i < m; ++i) {
    const int root = uf.find(i);
    if (root_to_cluster[root] < 0) {
      root_to_cluster[root] = static_cast<int>(clusters.size());
      clusters.emplace_back();
    }
    clusters[root_to_cluster[root]].push_back(i);
  }
  return clusters;
}

Coordinator::Coordinator(std::vector<const ManipulatorModel*> models,
                         DeadlockParams params)
    : models_(std::move(models)), params_(params) {
  params_.validate();
  const int m = static_cast<int>(models_.size());
  gamma_r_.assign(m, true);
  stored_targets_.resize(m);
  prev_gamma_d_.assign(m, false);
}

JointState Coordinator::neutral_state(int robot) const {
  JointState x(models_[robot]->joint_count());
  x.q = models_[robot]->neutral_pose;
  return x;
}

std::vector<RobotCommand> Coordinator::step(
    const std::vector<RobotReport>& reports) {
  const int m = static_cast<int>(models_.size());
  if (static_cast<int>(reports.size()) != m)
    throw std::invalid_argument("coordinator expects one report per robot");

  std::vector<bool> gamma_d(m, false);
  std::vector<Eigen::VectorXd> q(m);
  std::vector<double> task_residuum(m);
  for (int i = 0; i < m; ++i) {
    const auto& rep = reports[i];
    if (rep.robot_id != i)
      throw std::invalid_argument("reports must be ordered by robot id");
    gamma_d[i] = rep.gamma_d;
    q[i] = rep.x_current.q;
    // Rank parked robots by their stored task target, not the override.
    const JointState& goal = gamma_r_[i] ? rep.x_target : stored_targets_[i];
    task_residuum[i] = residuum(rep.x_current, goal);
    if (rep.gamma_d && !prev_gamma_d_[i]) ++deadlock_events_;
    prev_gamma_d_[i] = rep.gamma_d;
  }

  // Dissolve finished episodes: the active robot is (almost) at its goal, or
  // a full step passed with no member reporting a deadlock.
  for (size_t c = 0; c < clusters_.size();) {
    const int active = cluster_active_[c];
    bool any_deadlock = false;
    for (int member : clusters_[c]) any_deadlock |= gamma_d[member];
    if (task_residuum[active] <= params_.eps_res || !any_deadlock) {
      for (int member : clusters_[c]) gamma_r_[member] = true;
      clusters_.erase(clusters_.begin() + c);
      cluster_active_.erase(cluster_active_.begin() + c);
    } else {
      ++c;
    }
  }

  // Form or grow clusters around freshly reported deadlocks.
  auto fresh = cluster_robots(models_, q, gamma_d, params_.d_min);
  for (const auto& group : fresh) {
    if (group.size() < 2) continue;
    int existing = -1;
    for (size_t c = 0; c < clusters_.size() && existing < 0; ++c)
      for (int member : clusters_[c])
        if (std::find(group.begin(), group.end(), member) != group.end()) {
          existing = static_cast<int>(c);
          break;
        }
    if (existing < 0) {
      // New episode: the active member with minimal residuum stays active,
      // ties broken by the lowest robot id.
      int best = -1;
      for (int member : group) {
        if (!gamma_r_[member]) continue;
        if (best < 0 || task_residuum[member] < task_residuum[best])
          best = member;
      }
      if (best < 0) continue;  // every member already parked
      clusters_.push_back(group);
      cluster_active_.push_back(best);
      for (int member : group) {
        if (member == best || !gamma_r_[member]) continue;
        gamma_r_[member] = false;
        stored_targets_[member] = reports[member].x_target;
      }
    } else {
      // Grow the existing episode; newly caught robots park as well.
      for (int member : group) {
        auto& members = clusters_[existing];
        if (std::find(members.begin(), members.end(), member) ==
            members.end()) {
          members.push_back(member);
          if (gamma_r_[member] && member != cluster_active_[existing]) {
            gamma_r_[member] = false;
            stored_targets_[member] = reports[member].x_target;
          }
        }
      }
    }
  }

  std::vector<RobotCommand> commands(m);
  for (int i = 0; i < m; ++i) {
    commands[i].robot_id = i;
    commands[i].gamma_r = gamma_r_[i];
    commands[i].has_override = !gamma_r_[i];
    if (commands[i].has_override)
      commands[i].override_target = neutral_state(i);
  }
  return commands;
}

}  // namespace mrmpc
