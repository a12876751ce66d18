#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mrmpc/game.hpp"
#include "oracles.hpp"
#include "test_models.hpp"

using namespace mrmpc;

namespace {

AgentConfig make_config(const ManipulatorModel& model, int np = 8,
                        double ts = 0.2) {
  AgentConfig cfg;
  const int n = model.joint_count();
  cfg.weights.qx = Eigen::VectorXd::Ones(2 * n);
  cfg.weights.qf = 10.0 * cfg.weights.qx;
  cfg.weights.ru = Eigen::VectorXd::Ones(n);
  cfg.weights.rd = Eigen::VectorXd::Ones(n);
  cfg.np = np;
  cfg.ts = ts;
  cfg.dyn = discretize(n, ts);
  cfg.bounds = bounds(model);
  cfg.env = StaticEnvironment{-1000.0, 0.0};
  return cfg;
}

DeadlockParams dl_params() { return DeadlockParams{}; }

JointState state_q(const Eigen::VectorXd& q) {
  JointState x(static_cast<int>(q.size()));
  x.q = q;
  return x;
}

}  // namespace

TEST_CASE("prediction construction validates dynamic consistency") {
  auto dyn = discretize(2, 0.2);
  Bounds b;
  b.q_min = Eigen::VectorXd::Constant(2, -10);
  b.q_max = Eigen::VectorXd::Constant(2, 10);
  b.qd_max = Eigen::VectorXd::Constant(2, 5);
  b.u_max = Eigen::VectorXd::Constant(2, 2);

  JointState x0(2);
  x0.qd << 0.5, -0.5;
  std::vector<ControlInput> inputs(4, Eigen::VectorXd::Constant(2, 0.3));
  auto states = rollout(dyn, x0, inputs);
  CHECK_NOTHROW(make_prediction(0, 3, states, dyn, b, 1e-9));

  SUBCASE("broken positions are rejected") {
    auto bad = states;
    bad[2].q[0] += 0.01;
    CHECK_THROWS_AS(make_prediction(0, 3, bad, dyn, b, 1e-9),
                    std::invalid_argument);
  }
  SUBCASE("inadmissible implied input is rejected") {
    auto bad = states;
    bad[3].qd[1] += 1.0;  // implies u beyond the bound
    CHECK_THROWS_AS(make_prediction(0, 3, bad, dyn, b, 1e-9),
                    std::invalid_argument);
  }
}

TEST_CASE("shift and extrapolate") {
  auto dyn = discretize(1, 0.2);
  SUBCASE("stationary robot stays put") {
    PredictedTrajectory p;
    p.robot_id = 2;
    p.step_index = 5;
    p.states.assign(6, JointState(1));
    auto shifted = shift_extrapolate(p, dyn, Eigen::VectorXd::Zero(1));
    CHECK(shifted.step_index == 6);
    REQUIRE(shifted.states.size() == 6);
    for (const auto& x : shifted.states) {
      CHECK(x.q[0] == 0.0);
      CHECK(x.qd[0] == 0.0);
    }
  }
  SUBCASE("constant velocity keeps drifting") {
    JointState x(1);
    x.qd[0] = 0.3;
    std::vector<ControlInput> zeros(5, Eigen::VectorXd::Zero(1));
    PredictedTrajectory p;
    p.robot_id = 0;
    p.step_index = 0;
    p.states = rollout(dyn, x, zeros);
    auto shifted = shift_extrapolate(p, dyn, Eigen::VectorXd::Zero(1));
    for (size_t k = 0; k + 1 < p.states.size(); ++k)
      CHECK(shifted.states[k].q[0] == doctest::Approx(p.states[k + 1].q[0]));
    CHECK(shifted.states.back().q[0] ==
          doctest::Approx(p.states.back().q[0] + 0.2 * 0.3));
  }
  SUBCASE("appended state follows the dynamics") {
    auto gen = oracles::rng(23);
    JointState x(3);
    x.q = oracles::uniform_vector(gen, 3, -1, 1);
    x.qd = oracles::uniform_vector(gen, 3, -1, 1);
    auto dyn3 = discretize(3, 0.2);
    std::vector<ControlInput> inputs;
    for (int k = 0; k < 6; ++k)
      inputs.push_back(oracles::uniform_vector(gen, 3, -2, 2));
    PredictedTrajectory p;
    p.states = rollout(dyn3, x, inputs);
    const ControlInput last = inputs.back();
    auto shifted = shift_extrapolate(p, dyn3, last);
    auto expected = dyn3.step(p.states.back(), last);
    CHECK((shifted.states.back().stacked() - expected.stacked()).norm() ==
          0.0);
    // The implied input recovers the one used for extrapolation.
    CHECK((last_implied_input(p, 0.2) - last).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("agent at its target applies zero input") {
  auto model = test_models::spatial3();
  Agent agent(0, &model, make_config(model));
  JointState x = state_q(Eigen::Vector3d(0.3, -0.1, 0.2));
  auto result = agent.round(0, x, x, {}, {}, dl_params());
  CHECK_FALSE(result.braked);
  CHECK(result.applied.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK_FALSE(result.deadlock);
  CHECK(result.prediction.step_index == 0);
  CHECK(result.prediction.states.size() == 9);
}

TEST_CASE("distant robots solve as if independent") {
  auto ma = test_models::spatial3();
  auto mb = test_models::spatial3();
  mb.base_pose.position = Eigen::Vector3d(25.0, 0.0, 0.0);  // far away
  std::vector<const ManipulatorModel*> models{&ma, &mb};
  auto sets = build_pair_sets(models, PruningTable{});

  auto cfg_a = make_config(ma);
  cfg_a.pair_set = sets[0];
  auto cfg_b = make_config(mb);
  cfg_b.pair_set = sets[1];

  std::vector<Agent> coupled;
  coupled.emplace_back(0, &ma, cfg_a);
  coupled.emplace_back(1, &mb, cfg_b);

  // The same robots with the coupling removed.
  auto cfg_a0 = make_config(ma);
  auto cfg_b0 = make_config(mb);
  std::vector<Agent> isolated;
  isolated.emplace_back(0, &ma, cfg_a0);
  isolated.emplace_back(1, &mb, cfg_b0);

  std::vector<JointState> measured{state_q(Eigen::Vector3d(0.1, 0.2, -0.1)),
                                   state_q(Eigen::Vector3d(-0.3, 0.1, 0.2))};
  std::vector<JointState> targets{state_q(Eigen::Vector3d(0.8, -0.2, 0.3)),
                                  state_q(Eigen::Vector3d(0.4, 0.5, -0.5))};
  std::vector<PredictedTrajectory> prev{
      hold_prediction(0, 0, measured[0], 8, cfg_a.dyn),
      hold_prediction(1, 0, measured[1], 8, cfg_b.dyn)};

  auto coupled_result =
      game_step(coupled, measured, targets, prev, 0, dl_params(), false);
  auto isolated_result =
      game_step(isolated, measured, targets, prev, 0, dl_params(), false);
  for (int i = 0; i < 2; ++i) {
    const auto& a = coupled_result.rounds[i];
    const auto& b = isolated_result.rounds[i];
    CHECK((a.applied - b.applied).cwiseAbs().maxCoeff() < 1e-6);
    for (size_t k = 0; k < a.prediction.states.size(); ++k)
      CHECK((a.prediction.states[k].stacked() -
             b.prediction.states[k].stacked())
                .cwiseAbs()
                .maxCoeff() < 1e-6);
  }
}

TEST_CASE("game step is order independent and reads no fresh solutions") {
  auto ma = test_models::spatial3();
  auto mb = test_models::spatial3();
  mb.base_pose.position = Eigen::Vector3d(0.8, 0.0, 0.0);
  std::vector<const ManipulatorModel*> models{&ma, &mb};
  auto sets = build_pair_sets(models, PruningTable{});
  auto cfg_a = make_config(ma);
  cfg_a.pair_set = sets[0];
  auto cfg_b = make_config(mb);
  cfg_b.pair_set = sets[1];

  std::vector<JointState> measured{state_q(Eigen::Vector3d(0.2, 0.3, -0.2)),
                                   state_q(Eigen::Vector3d(2.5, 0.4, 0.1))};
  std::vector<JointState> targets{state_q(Eigen::Vector3d(1.2, -0.3, 0.4)),
                                  state_q(Eigen::Vector3d(1.8, 0.6, -0.3))};
  std::vector<PredictedTrajectory> prev{
      hold_prediction(0, 0, measured[0], 8, cfg_a.dyn),
      hold_prediction(1, 0, measured[1], 8, cfg_b.dyn)};

  // Forward order.
  std::vector<Agent> fwd;
  fwd.emplace_back(0, &ma, cfg_a);
  fwd.emplace_back(1, &mb, cfg_b);
  auto r_fwd = game_step(fwd, measured, targets, prev, 0, dl_params(), false);

  // Reversed agent order; the exchanged predictions are identical, so every
  // output bit must match (Jacobi semantics).
  std::vector<Agent> rev;
  rev.emplace_back(1, &mb, cfg_b);
  rev.emplace_back(0, &ma, cfg_a);
  std::vector<JointState> measured_rev{measured[1], measured[0]};
  std::vector<JointState> targets_rev{targets[1], targets[0]};
  std::vector<PredictedTrajectory> prev_rev{prev[1], prev[0]};
  auto r_rev =
      game_step(rev, measured_rev, targets_rev, prev_rev, 0, dl_params(),
                false);

  for (int i = 0; i < 2; ++i) {
    const auto& a = r_fwd.rounds[i];
    const auto& b = r_rev.rounds[1 - i];
    CHECK((a.applied - b.applied).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(fwd[0].stale_prediction_reads() == 0);
  CHECK(fwd[1].stale_prediction_reads() == 0);
}

TEST_CASE("two-agent game matches a hand-rolled loop") {
  auto ma = test_models::spatial3();
  auto mb = test_models::spatial3();
  mb.base_pose.position = Eigen::Vector3d(0.8, 0.0, 0.0);
  std::vector<const ManipulatorModel*> models{&ma, &mb};
  auto sets = build_pair_sets(models, PruningTable{});
  auto cfg_a = make_config(ma);
  cfg_a.pair_set = sets[0];
  auto cfg_b = make_config(mb);
  cfg_b.pair_set = sets[1];

  std::vector<JointState> x{state_q(Eigen::Vector3d(0.2, 0.3, -0.2)),
                            state_q(Eigen::Vector3d(2.6, 0.4, 0.1))};
  std::vector<JointState> targets{state_q(Eigen::Vector3d(1.0, -0.3, 0.4)),
                                  state_q(Eigen::Vector3d(2.0, 0.6, -0.3))};

  std::vector<Agent> agents;
  agents.emplace_back(0, &ma, cfg_a);
  agents.emplace_back(1, &mb, cfg_b);
  std::vector<Agent> manual;
  manual.emplace_back(0, &ma, cfg_a);
  manual.emplace_back(1, &mb, cfg_b);
  std::map<int, const ManipulatorModel*> model_map{{0, &ma}, {1, &mb}};

  auto x_game = x;
  auto x_manual = x;
  std::vector<PredictedTrajectory> prev{
      hold_prediction(0, 0, x[0], 8, cfg_a.dyn),
      hold_prediction(1, 0, x[1], 8, cfg_b.dyn)};
  auto prev_manual = prev;

  for (uint64_t t = 0; t < 5; ++t) {
    auto result =
        game_step(agents, x_game, targets, prev, t, dl_params(), false);

    // Hand-rolled Jacobi step: shift both predictions first, then solve both
    // agents against the shifted set.
    std::vector<PredictedTrajectory> shifted(2);
    for (int i = 0; i < 2; ++i) {
      if (prev_manual[i].step_index == t) {
        shifted[i] = prev_manual[i];
      } else {
        shifted[i] = shift_extrapolate(
            prev_manual[i], manual[i].config().dyn,
            last_implied_input(prev_manual[i], manual[i].config().ts));
      }
    }
    std::vector<Agent::RoundResult> manual_rounds(2);
    for (int i = 0; i < 2; ++i) {
      std::map<int, PredictedTrajectory> preds{
          {1 - i, shifted[1 - i]}};
      manual_rounds[i] = manual[i].round(t, x_manual[i], targets[i], preds,
                                         model_map, dl_params());
    }

    for (int i = 0; i < 2; ++i) {
      CHECK((result.rounds[i].applied - manual_rounds[i].applied)
                .cwiseAbs()
                .maxCoeff() == 0.0);
      x_game[i] =
          agents[i].config().dyn.step(x_game[i], result.rounds[i].applied);
      x_manual[i] =
          manual[i].config().dyn.step(x_manual[i], manual_rounds[i].applied);
      prev[i] = result.rounds[i].prediction;
      prev_manual[i] = manual_rounds[i].prediction;
    }
  }
}

TEST_CASE("head-on robots keep their margins nonnegative") {
  auto ma = test_models::spatial3();
  auto mb = test_models::spatial3();
  mb.base_pose.position = Eigen::Vector3d(1.1, 0.0, 0.0);
  mb.base_pose.rotation =
      Eigen::AngleAxisd(3.14159265358979, Eigen::Vector3d::UnitZ())
          .toRotationMatrix();
  std::vector<const ManipulatorModel*> models{&ma, &mb};
  auto sets = build_pair_sets(models, PruningTable{});
  auto cfg_a = make_config(ma, 10);
  cfg_a.pair_set = sets[0];
  auto cfg_b = make_config(mb, 10);
  cfg_b.pair_set = sets[1];

  std::vector<Agent> agents;
  agents.emplace_back(0, &ma, cfg_a);
  agents.emplace_back(1, &mb, cfg_b);
  std::map<int, const ManipulatorModel*> model_map{{0, &ma}, {1, &mb}};

  // Both arms sweep through the shared middle in opposite directions; the
  // unsynchronized mid-swing configurations would intersect.
  std::vector<JointState> x{state_q(Eigen::Vector3d(0.9, 0.4, -0.4)),
                            state_q(Eigen::Vector3d(0.9, 0.4, -0.4))};
  std::vector<JointState> targets{state_q(Eigen::Vector3d(-0.9, 0.4, -0.4)),
                                  state_q(Eigen::Vector3d(-0.9, 0.4, -0.4))};
  std::vector<PredictedTrajectory> prev{
      hold_prediction(0, 0, x[0], 10, cfg_a.dyn),
      hold_prediction(1, 0, x[1], 10, cfg_b.dyn)};

  SmoothProjection proj;
  double min_margin = 1e9;
  for (uint64_t t = 0; t < 30; ++t) {
    auto result = game_step(agents, x, targets, prev, t, dl_params(), false);
    for (int i = 0; i < 2; ++i) {
      x[i] = agents[i].config().dyn.step(x[i], result.rounds[i].applied);
      prev[i] = result.rounds[i].prediction;
    }
    auto segs0 = line_segments(ma, x[0].q);
    auto segs1 = line_segments(mb, x[1].q);
    auto ells0 = ellipsoids(ma, x[0].q);
    auto ells1 = ellipsoids(mb, x[1].q);
    for (const auto& p : sets[0].pairs)
      min_margin = std::min(
          min_margin,
          els_margin(segs0[p.segment_index], ells1[p.ellipsoid_index], proj));
    for (const auto& p : sets[1].pairs)
      min_margin = std::min(
          min_margin,
          els_margin(segs1[p.segment_index], ells0[p.ellipsoid_index], proj));
  }
  CHECK(min_margin >= -1e-6);
}

TEST_CASE("centralized controller with one robot equals the agent solve") {
  auto model = test_models::spatial3();
  auto cfg = make_config(model);

  Agent agent(0, &model, cfg);
  Agent for_central(0, &model, cfg);
  CentralizedController central({&for_central});

  JointState xs = state_q(Eigen::Vector3d(0.2, -0.4, 0.3));
  JointState xf = state_q(Eigen::Vector3d(-0.5, 0.3, 0.1));

  auto x_d = xs;
  auto x_c = xs;
  for (uint64_t t = 0; t < 4; ++t) {
    auto dist = agent.round(t, x_d, xf, {}, {}, dl_params());
    auto cent = central.solve({x_c}, {xf});
    CHECK((dist.applied - cent.robots[0].inputs[0]).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK(dist.solution.objective == cent.robots[0].objective);
    x_d = cfg.dyn.step(x_d, dist.applied);
    x_c = cfg.dyn.step(x_c, cent.robots[0].inputs[0]);
  }
}
