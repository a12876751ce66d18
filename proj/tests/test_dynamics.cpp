#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mrmpc/dynamics.hpp"
#include "oracles.hpp"
#include "test_models.hpp"

using namespace mrmpc;

TEST_CASE("closed-form ZOH matrices") {
  auto dyn = discretize(1, 0.2);
  Eigen::MatrixXd a = dyn.a_matrix();
  Eigen::MatrixXd b = dyn.b_matrix();
  CHECK(a(0, 0) == 1.0);
  CHECK(a(0, 1) == doctest::Approx(0.2));
  CHECK(a(1, 1) == 1.0);
  CHECK(a(1, 0) == 0.0);
  CHECK(b(0, 0) == doctest::Approx(0.02));
  CHECK(b(1, 0) == doctest::Approx(0.2));
}

TEST_CASE("zero sampling time degenerates to identity") {
  auto dyn = discretize(2, 0.0);
  CHECK(dyn.a_matrix().isIdentity(0.0));
  CHECK(dyn.b_matrix().isZero(0.0));
}

TEST_CASE("matches matrix-exponential oracle") {
  for (double ts : {0.05, 0.2, 1.0}) {
    const int n = 3;
    auto dyn = discretize(n, ts);
    // Augmented continuous system [[A, B], [0, 0]] exponentiated gives
    // [[Ad, Bd], [0, I]].
    Eigen::MatrixXd big = Eigen::MatrixXd::Zero(3 * n, 3 * n);
    big.block(0, n, n, n).setIdentity();        // qdot = v
    big.block(n, 2 * n, n, n).setIdentity();    // vdot = u
    Eigen::MatrixXd e = oracles::expm_series(big * ts);
    CHECK((e.topLeftCorner(2 * n, 2 * n) - dyn.a_matrix())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK((e.topRightCorner(2 * n, n) - dyn.b_matrix()).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("single step arithmetic") {
  auto dyn = discretize(2, 0.2);
  JointState x(2);
  ControlInput u = Eigen::VectorXd::Ones(2);
  auto next = step(dyn, x, u);
  CHECK(next.q.isApproxToConstant(0.02, 1e-15));
  CHECK(next.qd.isApproxToConstant(0.2, 1e-15));

  auto coast = step(dyn, next, Eigen::VectorXd::Zero(2));
  CHECK((coast.qd - next.qd).norm() == 0.0);
}

TEST_CASE("rollout matches the closed-form ballistic answer") {
  auto dyn = discretize(1, 0.1);
  JointState x0(1);
  ControlInput u = Eigen::VectorXd::Constant(1, 0.7);
  std::vector<ControlInput> inputs(10, u);
  auto states = rollout(dyn, x0, inputs);
  REQUIRE(states.size() == 11);
  const double t = 1.0;
  CHECK(states[10].q[0] == doctest::Approx(0.5 * t * t * 0.7).epsilon(1e-12));
  CHECK(states[10].qd[0] == doctest::Approx(t * 0.7).epsilon(1e-12));
}

TEST_CASE("rollout equals an explicit double loop") {
  auto gen = oracles::rng(21);
  auto dyn = discretize(3, 0.2);
  JointState x0(3);
  x0.q = oracles::uniform_vector(gen, 3, -1, 1);
  x0.qd = oracles::uniform_vector(gen, 3, -1, 1);
  std::vector<ControlInput> inputs;
  for (int k = 0; k < 8; ++k)
    inputs.push_back(oracles::uniform_vector(gen, 3, -2, 2));
  auto states = rollout(dyn, x0, inputs);

  Eigen::MatrixXd a = dyn.a_matrix();
  Eigen::MatrixXd b = dyn.b_matrix();
  Eigen::VectorXd x = x0.stacked();
  for (size_t k = 0; k < inputs.size(); ++k) {
    x = a * x + b * inputs[k];
    CHECK((states[k + 1].stacked() - x).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("linearity of the step map") {
  auto gen = oracles::rng(31);
  auto dyn = discretize(2, 0.2);
  JointState x1(2), x2(2), zero(2);
  x1.q = oracles::uniform_vector(gen, 2, -1, 1);
  x1.qd = oracles::uniform_vector(gen, 2, -1, 1);
  x2.q = oracles::uniform_vector(gen, 2, -1, 1);
  x2.qd = oracles::uniform_vector(gen, 2, -1, 1);
  ControlInput u1 = oracles::uniform_vector(gen, 2, -2, 2);
  ControlInput u2 = oracles::uniform_vector(gen, 2, -2, 2);

  JointState sum;
  sum.q = x1.q + x2.q;
  sum.qd = x1.qd + x2.qd;
  auto lhs = step(dyn, sum, u1 + u2);
  auto rhs1 = step(dyn, x1, u1);
  auto rhs2 = step(dyn, x2, u2);
  auto rhs0 = step(dyn, zero, Eigen::VectorXd::Zero(2));
  CHECK((lhs.stacked() - rhs1.stacked() - rhs2.stacked() + rhs0.stacked())
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("bounds from the model") {
  auto model = test_models::planar2();
  model.velocity_limits << 3.14159265358979, 6.28318530717959;
  auto b = bounds(model);
  CHECK(b.qd_max[1] == doctest::Approx(6.28318530717959));

  JointState x(2);
  CHECK(b.contains_state(x));
  x.qd[0] = b.qd_max[0] + 1e-6;
  CHECK_FALSE(b.contains_state(x));
  CHECK(b.contains_input(Eigen::VectorXd::Zero(2)));
  Eigen::VectorXd u = Eigen::VectorXd::Zero(2);
  u[0] = b.u_max[0] + 1e-6;
  CHECK_FALSE(b.contains_input(u));
}
