// Compares the serial and OpenMP constraint-evaluation kernels on the
// two-robot centralized problem, the largest margin workload in the
// controller, and verifies they agree bitwise.

#include <chrono>
#include <iostream>
#include <random>

#include "mrmpc/ocp.hpp"
#include "mrmpc/solver.hpp"

using namespace mrmpc;

namespace {

JointOcp make_problem(const ManipulatorModel& ma, const ManipulatorModel& mb,
                      int np) {
  std::vector<const ManipulatorModel*> models{&ma, &mb};
  auto sets = build_pair_sets(models, PruningTable{});

  auto config_for = [&](const ManipulatorModel& m, const CollisionPairSet& p) {
    AgentConfig cfg;
    const int n = m.joint_count();
    cfg.weights.qx = Eigen::VectorXd::Ones(2 * n);
    cfg.weights.qf = 10.0 * cfg.weights.qx;
    cfg.weights.ru = Eigen::VectorXd::Ones(n);
    cfg.weights.rd = Eigen::VectorXd::Ones(n);
    cfg.np = np;
    cfg.ts = 0.2;
    cfg.dyn = discretize(n, 0.2);
    cfg.bounds = bounds(m);
    cfg.pair_set = p;
    cfg.env = StaticEnvironment{1.107, 0.02};
    return cfg;
  };

  JointOcp::Block a, b;
  a.robot_id = 0;
  a.model = &ma;
  a.config = config_for(ma, sets[0]);
  a.x_start = JointState(ma.joint_count());
  a.x_goal = JointState(ma.joint_count());
  a.u_prev = Eigen::VectorXd::Zero(ma.joint_count());
  b = a;
  b.robot_id = 1;
  b.model = &mb;
  b.config = config_for(mb, sets[1]);
  return JointOcp({a, b}, {});
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 200;

  auto ma = load_model("models/ur3_like.json");
  auto mb = ma;
  mb.base_pose.position = Eigen::Vector3d(0.744, 0.0, 0.0);
  mb.base_pose.rotation =
      Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitZ()).toRotationMatrix();

  std::cout << "threads available: " << omp_get_max_threads() << "\n";
  std::cout << "np rows serial_us omp_us speedup identical\n";

  for (int np : {10, 15, 20}) {
    auto problem = make_problem(ma, mb, np);
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> dist(-1.2, 1.2);

    std::vector<std::vector<JointState>> states(2);
    for (int b = 0; b < 2; ++b) {
      for (int k = 0; k <= np; ++k) {
        JointState x(6);
        for (int j = 0; j < 6; ++j) x.q[j] = dist(gen);
        states[b].push_back(x);
      }
    }

    JointOcp::Workspace ws_serial, ws_parallel;
    problem.init_workspace(ws_serial);
    problem.init_workspace(ws_parallel);

    auto time_eval = [&](bool parallel, JointOcp::Workspace& ws) {
      problem.set_parallel_kernels(parallel);
      problem.evaluate_margins(states, true, ws);  // warm the caches
      const auto t0 = std::chrono::steady_clock::now();
      for (int r = 0; r < repeats; ++r)
        problem.evaluate_margins(states, true, ws);
      const auto t1 = std::chrono::steady_clock::now();
      return std::chrono::duration<double, std::micro>(t1 - t0).count() /
             repeats;
    };

    const double serial_us = time_eval(false, ws_serial);
    const double omp_us = time_eval(true, ws_parallel);

    bool identical =
        (ws_serial.collision_margin - ws_parallel.collision_margin)
                .cwiseAbs()
                .maxCoeff() == 0.0 &&
        (ws_serial.static_margin - ws_parallel.static_margin)
                .cwiseAbs()
                .maxCoeff() == 0.0;
    for (size_t i = 0; i < ws_serial.collision_grad_seg.size(); ++i)
      identical = identical && (ws_serial.collision_grad_seg[i] -
                                ws_parallel.collision_grad_seg[i])
                                      .cwiseAbs()
                                      .maxCoeff() == 0.0;

    std::cout << np << " " << problem.collision_row_count() << " "
              << serial_us << " " << omp_us << " " << serial_us / omp_us
              << " " << (identical ? "yes" : "NO") << "\n";
  }
  return 0;
}
