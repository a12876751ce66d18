#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mrmpc/coordinator.hpp"
#include "oracles.hpp"
#include "test_models.hpp"

using namespace mrmpc;

namespace {

OcpSolution prediction_with_velocities(const Eigen::VectorXd& qd_first,
                                       const Eigen::VectorXd& qd_last,
                                       int np = 10) {
  OcpSolution sol;
  const int n = static_cast<int>(qd_first.size());
  for (int k = 0; k <= np; ++k) {
    JointState x(n);
    x.qd = (k == np) ? qd_last : qd_first;
    sol.states.push_back(x);
  }
  return sol;
}

DeadlockParams params() {
  DeadlockParams p;
  p.eps_v = 1.5e-3;
  p.delta_x = 1.2e-2;
  p.d_min = 0.2;
  p.eps_res = 4e-2;
  return p;
}

}  // namespace

TEST_CASE("deadlock detection") {
  auto p = params();
  const Eigen::Vector2d zero(0.0, 0.0);
  JointState at(2), far(2);
  far.q << 0.4, 0.3;

  SUBCASE("stalled and far from the goal") {
    auto sol = prediction_with_velocities(zero, zero);
    CHECK(detect_deadlock(sol, at, far, p));
  }
  SUBCASE("at the goal, never a deadlock") {
    auto sol = prediction_with_velocities(zero, zero);
    CHECK_FALSE(detect_deadlock(sol, at, at, p));
  }
  SUBCASE("accelerating robot") {
    auto sol =
        prediction_with_velocities(zero, Eigen::Vector2d(0.3, 0.0));
    CHECK_FALSE(detect_deadlock(sol, at, far, p));
  }
  SUBCASE("monotone in delta_x") {
    auto sol = prediction_with_velocities(zero, zero);
    auto loose = p;
    for (double dx = 1.2e-2; dx > 1e-5; dx *= 0.5) {
      auto tighter = p;
      tighter.delta_x = dx;
      if (detect_deadlock(sol, at, far, loose))
        CHECK(detect_deadlock(sol, at, far, tighter));
      loose = tighter;
    }
  }
}

TEST_CASE("residuum is the full-state norm") {
  JointState a(2), b(2);
  CHECK(residuum(a, a) == 0.0);
  b.q << 1.0, 0.0;
  CHECK(residuum(a, b) == doctest::Approx(1.0));
  auto gen = oracles::rng(5);
  a.q = oracles::uniform_vector(gen, 2, -1, 1);
  a.qd = oracles::uniform_vector(gen, 2, -1, 1);
  b.q = oracles::uniform_vector(gen, 2, -1, 1);
  b.qd = oracles::uniform_vector(gen, 2, -1, 1);
  const double expected = std::sqrt(
      (a.q - b.q).squaredNorm() + (a.qd - b.qd).squaredNorm());
  CHECK(residuum(a, b) == doctest::Approx(expected).epsilon(1e-12));
}

namespace {

// Three planar robots in a row; adjacent pairs are close, the outer pair is
// far apart.
struct RowOfThree {
  ManipulatorModel m0, m1, m2;
  std::vector<const ManipulatorModel*> models;
  std::vector<Eigen::VectorXd> q;

  explicit RowOfThree(double spacing) {
    m0 = test_models::planar2();
    m1 = test_models::planar2();
    m2 = test_models::planar2();
    m1.base_pose.position = Eigen::Vector3d(spacing, 0, 0);
    m2.base_pose.position = Eigen::Vector3d(10.0, 0, 0);  // far away
    models = {&m0, &m1, &m2};
    q = {Eigen::Vector2d(0, 0), Eigen::Vector2d(0, 0), Eigen::Vector2d(0, 0)};
  }
};

}  // namespace

TEST_CASE("clustering") {
  SUBCASE("no deadlocks, all singletons") {
    RowOfThree row(2.1);
    auto clusters =
        cluster_robots(row.models, row.q, {false, false, false}, 0.2);
    CHECK(clusters.size() == 3);
    for (const auto& c : clusters) CHECK(c.size() == 1);
  }
  SUBCASE("one deadlocked robot pulls in its close neighbour") {
    RowOfThree row(2.1);  // tip of robot 0 is 0.1 m from robot 1's base
    auto clusters =
        cluster_robots(row.models, row.q, {true, false, false}, 0.2);
    REQUIRE(clusters.size() == 2);
    CHECK(clusters[0] == std::vector<int>{0, 1});
    CHECK(clusters[1] == std::vector<int>{2});
  }
  SUBCASE("transitive closure over mutually close robots") {
    RowOfThree row(2.1);
    row.m2.base_pose.position = Eigen::Vector3d(4.2, 0, 0);
    auto clusters =
        cluster_robots(row.models, row.q, {true, true, false}, 0.2);
    REQUIRE(clusters.size() == 1);
    CHECK(clusters[0] == std::vector<int>{0, 1, 2});
  }
}

namespace {

RobotReport make_report(int id, bool gamma_d, const Eigen::VectorXd& q,
                        const Eigen::VectorXd& target_q) {
  RobotReport rep;
  rep.robot_id = id;
  rep.gamma_d = gamma_d;
  rep.x_current = JointState(static_cast<int>(q.size()));
  rep.x_current.q = q;
  rep.x_target = JointState(static_cast<int>(q.size()));
  rep.x_target.q = target_q;
  return rep;
}

}  // namespace

TEST_CASE("resolution deactivates all but the closest robot") {
  ManipulatorModel ma = test_models::planar2();
  ManipulatorModel mb = test_models::planar2();
  mb.base_pose.position = Eigen::Vector3d(2.1, 0, 0);
  Coordinator coord({&ma, &mb}, params());

  // Residua 0.3 and 0.7: robot 0 stays active.
  auto r0 = make_report(0, true, Eigen::Vector2d(0, 0),
                        Eigen::Vector2d(0.3, 0.0));
  auto r1 = make_report(1, true, Eigen::Vector2d(0, 0),
                        Eigen::Vector2d(0.7, 0.0));
  auto commands = coord.step({r0, r1});
  CHECK(commands[0].gamma_r);
  CHECK_FALSE(commands[0].has_override);
  CHECK_FALSE(commands[1].gamma_r);
  REQUIRE(commands[1].has_override);
  CHECK(commands[1].override_target.q.isApprox(mb.neutral_pose));

  SUBCASE("cluster persists while the deadlock lasts") {
    auto commands2 = coord.step({r0, make_report(1, false,
                                                 Eigen::Vector2d(0.2, 0),
                                                 mb.neutral_pose)});
    CHECK(commands2[0].gamma_r);
    CHECK_FALSE(commands2[1].gamma_r);
  }
  SUBCASE("active robot reaching its goal reactivates everyone") {
    auto near = make_report(0, false, Eigen::Vector2d(0.29, 0.0),
                            Eigen::Vector2d(0.3, 0.0));
    auto commands2 = coord.step({near, make_report(1, true,
                                                   Eigen::Vector2d(0.2, 0),
                                                   mb.neutral_pose)});
    CHECK(commands2[0].gamma_r);
    CHECK(commands2[1].gamma_r);
    CHECK_FALSE(commands2[1].has_override);
  }
  SUBCASE("a quiet step dissolves the cluster") {
    auto commands2 = coord.step({make_report(0, false, Eigen::Vector2d(0, 0),
                                             Eigen::Vector2d(0.3, 0.0)),
                                 make_report(1, false, Eigen::Vector2d(0.2, 0),
                                             mb.neutral_pose)});
    CHECK(commands2[0].gamma_r);
    CHECK(commands2[1].gamma_r);
  }
}

TEST_CASE("singleton deadlock changes nothing") {
  ManipulatorModel ma = test_models::planar2();
  ManipulatorModel mb = test_models::planar2();
  mb.base_pose.position = Eigen::Vector3d(10.0, 0, 0);  // out of range
  Coordinator coord({&ma, &mb}, params());
  auto commands = coord.step(
      {make_report(0, true, Eigen::Vector2d(0, 0), Eigen::Vector2d(0.5, 0)),
       make_report(1, false, Eigen::Vector2d(0, 0), Eigen::Vector2d(0.5, 0))});
  CHECK(commands[0].gamma_r);
  CHECK(commands[1].gamma_r);
}

TEST_CASE("robots outside the cluster are never restricted") {
  RowOfThree row(2.1);
  Coordinator coord(row.models, params());
  auto commands = coord.step(
      {make_report(0, true, row.q[0], Eigen::Vector2d(0.5, 0)),
       make_report(1, false, row.q[1], Eigen::Vector2d(0.9, 0)),
       make_report(2, false, row.q[2], Eigen::Vector2d(0.9, 0))});
  CHECK(commands[2].gamma_r);
  CHECK_FALSE(commands[1].gamma_r);  // clustered with robot 0, farther away
  CHECK(commands[0].gamma_r);
  CHECK(coord.deadlock_events() == 1);
}
