#include "mrmpc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mrmpc {

namespace {

using nlohmann::json;

std::string dirname_of(const std::string& path) {
  const auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

Eigen::VectorXd json_vector(const json& arr) {
  Eigen::VectorXd v(arr.size());
  for (size_t i = 0; i < arr.size(); ++i) v[i] = arr[i].get<double>();
  return v;
}

Eigen::VectorXd weight_entry(const json& spec, int size) {
  if (spec.is_number())
    return Eigen::VectorXd::Constant(size, spec.get<double>());
  Eigen::VectorXd v = json_vector(spec);
  if (v.size() != size)
    throw std::invalid_argument("weight vector has the wrong length");
  return v;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (robots.empty()) throw std::invalid_argument("scenario needs >= 1 robot");
  if (step_budget <= 0)
    throw std::invalid_argument("step budget must be positive");
  if (np < 2) throw std::invalid_argument("horizon must be >= 2");
  if (!(ts > 0)) throw std::invalid_argument("sampling time must be positive");
  deadlock.validate();
  const int n = robots[0].model.joint_count();
  weights.validate(n);
  for (size_t i = 0; i < robots.size(); ++i) {
    const auto& r = robots[i];
    r.model.validate();
    if (r.model.joint_count() != n)
      throw std::invalid_argument("all robots must share the joint count");
    if (r.start_q.size() != n)
      throw std::invalid_argument("robot " + std::to_string(i) +
                                  ": start_q has the wrong dimension");
    auto check_within = [&](const Eigen::VectorXd& q, const std::string& what) {
      for (int j = 0; j < n; ++j)
        if (q[j] < r.model.joint_min[j] || q[j] > r.model.joint_max[j])
          throw std::invalid_argument(
              "robot " + std::to_string(i) + ": " + what + " joint " +
              std::to_string(j + 1) + " outside joint limits");
    };
    check_within(r.start_q, "start_q");
    if (static_margins(r.model, r.start_q, env).size() > 0 &&
        static_margins(r.model, r.start_q, env).minCoeff() < 0.0)
      throw std::invalid_argument("robot " + std::to_string(i) +
                                  ": start_q violates the table clearance");
    for (size_t t = 0; t < r.tasks.size(); ++t) {
      if (r.tasks[t].target_q.size() != n)
        throw std::invalid_argument("task target has the wrong dimension");
      check_within(r.tasks[t].target_q,
                   "task " + std::to_string(t) + " target");
      if (static_margins(r.model, r.tasks[t].target_q, env).minCoeff() < 0.0)
        throw std::invalid_argument(
            "robot " + std::to_string(i) + ": task " + std::to_string(t) +
            " target violates the table clearance");
      if (r.tasks[t].dwell < 0)
        throw std::invalid_argument("dwell must be >= 0");
    }
  }
}

ScenarioConfig parse_scenario(const std::string& json_text,
                              const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("scenario is not valid JSON: ") +
                                e.what());
  }

  ScenarioConfig s;
  s.name = doc.value("name", "scenario");
  s.np = doc.value("np", 15);
  s.ts = doc.value("ts", 0.2);
  s.seed = doc.value("seed", 1ULL);
  s.step_budget = doc.value("step_budget", 500);
  s.default_dwell = doc.value("dwell_steps", 5);
  s.parallel_agents = doc.value("parallel_agents", true);
  s.loss_abort_after = doc.value("loss_abort_after", 3);
  const std::string transport = doc.value("transport", "inproc");
  if (transport == "inproc")
    s.transport = TransportKind::in_process;
  else if (transport == "udp")
    s.transport = TransportKind::udp;
  else
    throw std::invalid_argument("unknown transport: " + transport);

  const auto& table = doc.value("table", json::object());
  s.env.table_height = table.value("z_t", 0.0);
  s.env.clearance = table.value("z_min", 0.02);
  s.proj.c = doc.value("projection_c", 20.0);
  s.margin_epsilon = doc.value("margin_epsilon", 0.0);

  const auto& dl = doc.value("deadlock", json::object());
  s.deadlock.eps_v = dl.value("eps_v", 1.5e-3);
  s.deadlock.delta_x = dl.value("delta_x", 1.2e-2);
  s.deadlock.d_min = dl.value("d_min", 0.2);
  s.deadlock.eps_res = dl.value("eps_res", 4e-2);

  const auto& so = doc.value("solver", json::object());
  s.solver.stationarity_tol = so.value("stationarity_tol", 1e-6);
  s.solver.feasibility_tol = so.value("feasibility_tol", 1e-6);
  s.solver.max_inner = so.value("max_inner", 200);
  s.solver.max_outer = so.value("max_outer", 30);

  if (!doc.contains("robots") || !doc["robots"].is_array() ||
      doc["robots"].empty())
    throw std::invalid_argument("scenario needs a non-empty 'robots' array");

  for (const auto& rj : doc["robots"]) {
    RobotSpec r;
    r.model_path = rj.at("model").get<std::string>();
    std::string path = r.model_path;
    if (!path.empty() && path[0] != '/') path = base_dir + "/" + path;
    r.model = load_model(path);
    if (rj.contains("base_position"))
      r.model.base_pose.position = json_vector(rj["base_position"]).head<3>();
    if (rj.contains("base_rpy")) {
      const Eigen::VectorXd rpy = json_vector(rj["base_rpy"]);
      r.model.base_pose.rotation =
          (Eigen::AngleAxisd(rpy[2], Eigen::Vector3d::UnitZ()) *
           Eigen::AngleAxisd(rpy[1], Eigen::Vector3d::UnitY()) *
           Eigen::AngleAxisd(rpy[0], Eigen::Vector3d::UnitX()))
              .toRotationMatrix();
    }
    r.start_q = rj.contains("start_q") ? json_vector(rj["start_q"])
                                       : r.model.neutral_pose;
    for (const auto& tj : rj.value("tasks", json::array())) {
      TaskSpec task;
      task.target_q = json_vector(tj.at("target_q"));
      task.dwell = tj.value("dwell", s.default_dwell);
      r.tasks.push_back(std::move(task));
    }
    s.robots.push_back(std::move(r));
  }

  const int n = s.robots[0].model.joint_count();
  const auto& wj = doc.value("weights", json::object());
  if (wj.contains("qx"))
    s.weights.qx = weight_entry(wj["qx"], 2 * n);
  else
    s.weights.qx = Eigen::VectorXd::Ones(2 * n);
  if (wj.contains("qf"))
    s.weights.qf = weight_entry(wj["qf"], 2 * n);
  else
    s.weights.qf = wj.value("qf_scale", 10.0) * s.weights.qx;
  s.weights.ru = wj.contains("ru") ? weight_entry(wj["ru"], n)
                                   : Eigen::VectorXd::Ones(n);
  s.weights.rd = wj.contains("rd") ? weight_entry(wj["rd"], n)
                                   : Eigen::VectorXd::Ones(n);

  if (doc.contains("pruning") && doc["pruning"].is_string()) {
    const std::string pruning = doc["pruning"].get<std::string>();
    if (pruning == "none") {
      s.pruning.disable_all = true;
    } else if (pruning != "full") {
      std::string path = pruning;
      if (!path.empty() && path[0] != '/') path = base_dir + "/" + path;
      s.pruning = load_pruning_table(path);
    }
  }

  s.validate();
  return s;
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open scenario file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), dirname_of(path));
}

namespace {

struct RobotRuntime {
  JointState x;
  size_t task_index = 0;
  int dwell_left = 0;
  bool completed = false;
  bool gamma_r = true;
  JointState override_target;
  std::map<int, PredictedTrajectory> neighbor_pred;  // aligned to this step
  std::map<int, int> staleness;                      // consecutive losses
};

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

Eigen::VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

}  // namespace

SimLog run(const ScenarioConfig& scenario, Transport* transport_override) {
  scenario.validate();
  const int m = static_cast<int>(scenario.robots.size());
  const int np = scenario.np;
  const double ts = scenario.ts;
  const int coordinator_id = m;

  std::vector<const ManipulatorModel*> models;
  for (const auto& r : scenario.robots) models.push_back(&r.model);
  auto pair_sets = build_pair_sets(models, scenario.pruning);

  std::vector<Agent> agents;
  std::map<int, const ManipulatorModel*> model_map;
  for (int i = 0; i < m; ++i) {
    AgentConfig cfg;
    cfg.weights = scenario.weights;
    cfg.np = np;
    cfg.ts = ts;
    cfg.dyn = discretize(models[i]->joint_count(), ts);
    cfg.bounds = bounds(*models[i]);
    cfg.pair_set = pair_sets[i];
    cfg.env = scenario.env;
    cfg.proj = scenario.proj;
    cfg.solver = scenario.solver;
    cfg.margin_epsilon = scenario.margin_epsilon;
    agents.emplace_back(i, models[i], cfg);
    model_map[i] = models[i];
  }

  // Who consumes robot j's predictions.
  std::vector<std::vector<int>> neighbors_of(m), recipients_of(m);
  for (int i = 0; i < m; ++i) {
    std::set<int> seen;
    for (const auto& p : pair_sets[i].pairs) seen.insert(p.other_robot);
    neighbors_of[i] = {seen.begin(), seen.end()};
    for (int j : neighbors_of[i]) recipients_of[j].push_back(i);
  }

  std::unique_ptr<Transport> owned_transport;
  Transport* transport = transport_override;
  if (transport == nullptr) {
    std::vector<int> endpoint_ids(m + 1);
    for (int i = 0; i <= m; ++i) endpoint_ids[i] = i;
    if (scenario.transport == TransportKind::udp)
      owned_transport = std::make_unique<UdpTransport>(endpoint_ids);
    else
      owned_transport = std::make_unique<InProcessTransport>();
    transport = owned_transport.get();
  }

  std::vector<MessageEndpoint> robot_end;
  robot_end.reserve(m);
  for (int i = 0; i < m; ++i) robot_end.emplace_back(*transport, i);
  MessageEndpoint coord_end(*transport, coordinator_id);

  Coordinator coordinator(models, scenario.deadlock);

  std::vector<RobotRuntime> rt(m);
  for (int i = 0; i < m; ++i) {
    rt[i].x = JointState(models[i]->joint_count());
    rt[i].x.q = scenario.robots[i].start_q;
    rt[i].completed = scenario.robots[i].tasks.empty();
  }

  SimLog log;
  log.robot_count = m;
  log.ts = ts;
  log.tasks_completed.assign(m, false);
  {
    std::vector<JointState> initial;
    for (int i = 0; i < m; ++i) initial.push_back(rt[i].x);
    log.plant_states.push_back(initial);
  }

  const double recv_timeout =
      scenario.recv_timeout > 0.0
          ? scenario.recv_timeout
          : (scenario.transport == TransportKind::udp ? 0.2 : 5.0);
  std::vector<DeadlockReport> last_report(m);
  for (int i = 0; i < m; ++i) {
    last_report[i].robot_id = static_cast<uint16_t>(i);
    last_report[i].x_current = to_std(rt[i].x.stacked());
    last_report[i].x_target = to_std(rt[i].x.stacked());
  }

  SmoothProjection proj = scenario.proj;

  for (int t = 0; t < scenario.step_budget; ++t) {
    bool safety_stop = false;

    // --- gather neighbour predictions, shifted to this step ---
    for (int i = 0; i < m && !safety_stop; ++i) {
      for (int j : neighbors_of[i]) {
        if (t == 0) {
          rt[i].neighbor_pred[j] =
              hold_prediction(j, 0, rt[j].x, np, agents[j].config().dyn);
          rt[i].staleness[j] = 0;
          continue;
        }
        auto msg = robot_end[i].receive_where(
            [&](const Message& msg) {
              const auto* tm = std::get_if<TrajectoryMessage>(&msg);
              return tm != nullptr && tm->robot_id == j &&
                     tm->step_index == static_cast<uint64_t>(t - 1);
            },
            recv_timeout);
        if (msg) {
          const auto& tm = std::get<TrajectoryMessage>(*msg);
          std::vector<JointState> states(tm.horizon + 1);
          for (int k = 0; k <= tm.horizon; ++k)
            states[k] = JointState::from_stacked(Eigen::Map<const Eigen::VectorXd>(
                tm.states.data() + k * 2 * tm.joints, 2 * tm.joints));
          auto pred = make_prediction(
              j, tm.step_index, std::move(states), agents[j].config().dyn,
              agents[j].config().bounds,
              std::max(1e-7, scenario.solver.feasibility_tol));
          rt[i].neighbor_pred[j] = shift_extrapolate(
              pred, agents[j].config().dyn, last_implied_input(pred, ts));
          rt[i].staleness[j] = 0;
        } else {
          // Missing prediction: reuse the last one, shifted one more step.
          ++rt[i].staleness[j];
          ++log.stale_predictions;
          if (rt[i].staleness[j] >= scenario.loss_abort_after) {
            safety_stop = true;
            break;
          }
          auto& prev = rt[i].neighbor_pred[j];
          prev = shift_extrapolate(prev, agents[j].config().dyn,
                                   last_implied_input(prev, ts));
        }
      }
    }

    if (safety_stop) {
      // Brake everyone and end the run.
      std::vector<ControlInput> zeros;
      std::vector<JointState> next;
      for (int i = 0; i < m; ++i) {
        ControlInput u = Eigen::VectorXd::Zero(models[i]->joint_count());
        SimLogRow row;
        row.t = t * ts;
        row.robot_id = i;
        row.q = rt[i].x.q;
        row.qd = rt[i].x.qd;
        row.u = u;
        row.gamma_r = rt[i].gamma_r;
        row.target_id = static_cast<int>(rt[i].task_index);
        log.rows.push_back(std::move(row));
        rt[i].x = agents[i].config().dyn.step(rt[i].x, u);
        zeros.push_back(u);
        next.push_back(rt[i].x);
      }
      log.applied_inputs.push_back(zeros);
      log.plant_states.push_back(next);
      log.steps = t + 1;
      log.safety_stopped = true;
      break;
    }

    // --- working targets and solve set ---
    std::vector<JointState> targets(m);
    std::vector<bool> solves(m, false);
    for (int i = 0; i < m; ++i) {
      const auto& tasks = scenario.robots[i].tasks;
      // Task progress is evaluated on the measured state each step.
      if (rt[i].gamma_r && !rt[i].completed && rt[i].dwell_left == 0) {
        JointState goal(models[i]->joint_count());
        goal.q = tasks[rt[i].task_index].target_q;
        if (residuum(rt[i].x, goal) <= scenario.deadlock.eps_res) {
          if (tasks[rt[i].task_index].dwell == 0) {
            ++rt[i].task_index;
            rt[i].completed = rt[i].task_index >= tasks.size();
          } else {
            rt[i].dwell_left = tasks[rt[i].task_index].dwell;
          }
        }
      }
      if (rt[i].gamma_r) {
        JointState goal(models[i]->joint_count());
        goal.q = rt[i].completed
                     ? (tasks.empty() ? scenario.robots[i].start_q
                                      : tasks.back().target_q)
                     : tasks[rt[i].task_index].target_q;
        targets[i] = goal;
        solves[i] = !rt[i].completed && rt[i].dwell_left == 0;
      } else {
        // Deactivated robots plan toward their neutral pose; a grasp in
        // progress still finishes first.
        targets[i] = rt[i].override_target;
        solves[i] = rt[i].dwell_left == 0;
      }
    }

    // --- concurrent agent solves (Jacobi: only last-step predictions) ---
    std::vector<Agent::RoundResult> rounds(m);
#pragma omp parallel for schedule(static) if (scenario.parallel_agents)
    for (int i = 0; i < m; ++i) {
      if (solves[i]) {
        rounds[i] = agents[i].round(t, rt[i].x, targets[i],
                                    rt[i].neighbor_pred, model_map,
                                    scenario.deadlock);
      } else {
        Agent::RoundResult hold;
        hold.applied = Eigen::VectorXd::Zero(models[i]->joint_count());
        hold.prediction =
            hold_prediction(i, t, rt[i].x, np, agents[i].config().dyn);
        hold.solution.states = hold.prediction.states;
        hold.solution.inputs.assign(np, hold.applied);
        rounds[i] = std::move(hold);
      }
    }

    // --- coordinator round ---
    for (int i = 0; i < m; ++i) {
      DeadlockReport rep;
      rep.robot_id = static_cast<uint16_t>(i);
      rep.step_index = t;
      rep.gamma_d = rounds[i].deadlock;
      rep.x_current = to_std(rt[i].x.stacked());
      rep.x_target = to_std(targets[i].stacked());
      robot_end[i].send(coordinator_id, rep);
    }
    std::vector<RobotReport> reports(m);
    for (int i = 0; i < m; ++i) {
      auto msg = coord_end.receive_where(
          [&](const Message& msg) {
            const auto* r = std::get_if<DeadlockReport>(&msg);
            return r != nullptr && r->robot_id == i &&
                   r->step_index == static_cast<uint64_t>(t);
          },
          recv_timeout);
      DeadlockReport rep = msg ? std::get<DeadlockReport>(*msg)
                               : last_report[i];  // lost report: reuse
      if (!msg) rep.gamma_d = false;
      last_report[i] = rep;
      reports[i].robot_id = i;
      reports[i].gamma_d = rep.gamma_d;
      reports[i].x_current = JointState::from_stacked(from_std(rep.x_current));
      reports[i].x_target = JointState::from_stacked(from_std(rep.x_target));
    }
    auto commands = coordinator.step(reports);
    for (const auto& cmd : commands) {
      CoordinatorCommand wire;
      wire.robot_id = static_cast<uint16_t>(cmd.robot_id);
      wire.step_index = t;
      wire.gamma_r = cmd.gamma_r;
      wire.has_override = cmd.has_override;
      if (cmd.has_override)
        wire.override_target = to_std(cmd.override_target.stacked());
      coord_end.send(cmd.robot_id, wire);
    }
    for (int i = 0; i < m; ++i) {
      auto msg = robot_end[i].receive_where(
          [&](const Message& msg) {
            const auto* c = std::get_if<CoordinatorCommand>(&msg);
            return c != nullptr && c->robot_id == i &&
                   c->step_index == static_cast<uint64_t>(t);
          },
          recv_timeout);
      if (msg) {
        const auto& cmd = std::get<CoordinatorCommand>(*msg);
        rt[i].gamma_r = cmd.gamma_r;  // takes effect next step
        if (cmd.has_override)
          rt[i].override_target =
              JointState::from_stacked(from_std(cmd.override_target));
      }
    }

    // --- publish fresh predictions ---
    for (int j = 0; j < m; ++j) {
      TrajectoryMessage tm;
      tm.robot_id = static_cast<uint16_t>(j);
      tm.step_index = t;
      tm.joints = static_cast<uint8_t>(models[j]->joint_count());
      tm.horizon = static_cast<uint16_t>(np);
      tm.states.reserve((np + 1) * 2 * tm.joints);
      for (const auto& x : rounds[j].prediction.states) {
        const Eigen::VectorXd s = x.stacked();
        tm.states.insert(tm.states.end(), s.data(), s.data() + s.size());
      }
      for (int dest : recipients_of[j]) robot_end[j].send(dest, tm);
    }

    // --- physical clearance at the measured states ---
    double min_margin = std::numeric_limits<double>::infinity();
    double min_dist = std::numeric_limits<double>::infinity();
    {
      std::vector<std::vector<LineSegment>> segs(m);
      std::vector<std::vector<Ellipsoid>> ells(m);
      for (int i = 0; i < m; ++i) {
        auto frames = forward_kinematics(*models[i], rt[i].x.q);
        segs[i] = line_segments(*models[i], frames);
        ells[i] = ellipsoids(*models[i], frames);
      }
      for (int i = 0; i < m; ++i)
        for (const auto& p : pair_sets[i].pairs)
          min_margin = std::min(
              min_margin, els_margin(segs[i][p.segment_index],
                                     ells[p.other_robot][p.ellipsoid_index],
                                     proj));
      for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j)
          for (const auto& sa : segs[i])
            for (const auto& sb : segs[j])
              min_dist = std::min(min_dist, segment_segment_distance(sa, sb));
      if (!std::isfinite(min_margin)) min_margin = 0.0;
      if (!std::isfinite(min_dist)) min_dist = 0.0;
    }

    // --- log ---
    for (int i = 0; i < m; ++i) {
      SimLogRow row;
      row.t = t * ts;
      row.robot_id = i;
      row.q = rt[i].x.q;
      row.qd = rt[i].x.qd;
      row.u = rounds[i].applied;
      row.cost = solves[i] ? rounds[i].solution.objective : 0.0;
      row.solve_ms = solves[i]
                         ? rounds[i].solution.stats.solve_seconds * 1000.0
                         : 0.0;
      row.gamma_d = rounds[i].deadlock;
      row.gamma_r = rt[i].gamma_r;
      row.target_id = rt[i].gamma_r ? static_cast<int>(rt[i].task_index) : -1;
      row.min_els_margin = min_margin;
      row.min_link_dist = min_dist;
      log.rows.push_back(std::move(row));
    }

    // --- plant step (exact ZOH; the model is the plant) ---
    std::vector<ControlInput> applied;
    std::vector<JointState> next;
    for (int i = 0; i < m; ++i) {
      rt[i].x = agents[i].config().dyn.step(rt[i].x, rounds[i].applied);
      applied.push_back(rounds[i].applied);
      next.push_back(rt[i].x);
    }
    log.applied_inputs.push_back(std::move(applied));
    log.plant_states.push_back(std::move(next));
    log.steps = t + 1;

    // --- dwell bookkeeping and task advance ---
    bool all_done = true;
    for (int i = 0; i < m; ++i) {
      if (rt[i].dwell_left > 0 && --rt[i].dwell_left == 0) {
        ++rt[i].task_index;
        if (rt[i].task_index >= scenario.robots[i].tasks.size())
          rt[i].completed = true;
      }
      log.tasks_completed[i] = rt[i].completed && rt[i].dwell_left == 0;
      all_done = all_done && log.tasks_completed[i];
    }
    if (all_done) break;
  }

  return log;
}

SimLog run_centralized(const ScenarioConfig& scenario) {
  scenario.validate();
  const int m = static_cast<int>(scenario.robots.size());
  const int np = scenario.np;
  const double ts = scenario.ts;

  std::vector<const ManipulatorModel*> models;
  for (const auto& r : scenario.robots) models.push_back(&r.model);
  auto pair_sets = build_pair_sets(models, scenario.pruning);

  std::vector<Agent> agents;
  for (int i = 0; i < m; ++i) {
    AgentConfig cfg;
    cfg.weights = scenario.weights;
    cfg.np = np;
    cfg.ts = ts;
    cfg.dyn = discretize(models[i]->joint_count(), ts);
    cfg.bounds = bounds(*models[i]);
    cfg.pair_set = pair_sets[i];
    cfg.env = scenario.env;
    cfg.proj = scenario.proj;
    cfg.solver = scenario.solver;
    cfg.margin_epsilon = scenario.margin_epsilon;
    agents.emplace_back(i, models[i], cfg);
  }
  std::vector<Agent*> agent_ptrs;
  for (auto& a : agents) agent_ptrs.push_back(&a);
  CentralizedController controller(agent_ptrs);

  std::vector<RobotRuntime> rt(m);
  for (int i = 0; i < m; ++i) {
    rt[i].x = JointState(models[i]->joint_count());
    rt[i].x.q = scenario.robots[i].start_q;
    rt[i].completed = scenario.robots[i].tasks.empty();
  }

  SimLog log;
  log.robot_count = m;
  log.ts = ts;
  log.tasks_completed.assign(m, false);
  {
    std::vector<JointState> initial;
    for (int i = 0; i < m; ++i) initial.push_back(rt[i].x);
    log.plant_states.push_back(initial);
  }

  for (int t = 0; t < scenario.step_budget; ++t) {
    std::vector<JointState> targets(m);
    for (int i = 0; i < m; ++i) {
      const auto& tasks = scenario.robots[i].tasks;
      if (!rt[i].completed && rt[i].dwell_left == 0) {
        JointState goal(models[i]->joint_count());
        goal.q = tasks[rt[i].task_index].target_q;
        if (residuum(rt[i].x, goal) <= scenario.deadlock.eps_res) {
          if (tasks[rt[i].task_index].dwell == 0) {
            ++rt[i].task_index;
            rt[i].completed = rt[i].task_index >= tasks.size();
          } else {
            rt[i].dwell_left = tasks[rt[i].task_index].dwell;
          }
        }
      }
      JointState goal(models[i]->joint_count());
      if (rt[i].completed) {
        goal.q = tasks.empty() ? scenario.robots[i].start_q
                               : tasks.back().target_q;
      } else if (rt[i].dwell_left > 0) {
        goal = rt[i].x;  // hold the grasp pose
        goal.qd.setZero();
      } else {
        goal.q = tasks[rt[i].task_index].target_q;
      }
      targets[i] = goal;
    }

    std::vector<JointState> measured;
    for (int i = 0; i < m; ++i) measured.push_back(rt[i].x);
    auto joint = controller.solve(measured, targets);

    double min_margin = std::numeric_limits<double>::infinity();
    double min_dist = std::numeric_limits<double>::infinity();
    {
      std::vector<std::vector<LineSegment>> segs(m);
      std::vector<std::vector<Ellipsoid>> ells(m);
      for (int i = 0; i < m; ++i) {
        auto frames = forward_kinematics(*models[i], rt[i].x.q);
        segs[i] = line_segments(*models[i], frames);
        ells[i] = ellipsoids(*models[i], frames);
      }
      for (int i = 0; i < m; ++i)
        for (const auto& p : pair_sets[i].pairs)
          min_margin = std::min(
              min_margin, els_margin(segs[i][p.segment_index],
                                     ells[p.other_robot][p.ellipsoid_index],
                                     scenario.proj));
      for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j)
          for (const auto& sa : segs[i])
            for (const auto& sb : segs[j])
              min_dist = std::min(min_dist, segment_segment_distance(sa, sb));
      if (!std::isfinite(min_margin)) min_margin = 0.0;
      if (!std::isfinite(min_dist)) min_dist = 0.0;
    }

    std::vector<ControlInput> applied;
    std::vector<JointState> next;
    for (int i = 0; i < m; ++i) {
      SimLogRow row;
      row.t = t * ts;
      row.robot_id = i;
      row.q = rt[i].x.q;
      row.qd = rt[i].x.qd;
      row.u = joint.robots[i].inputs[0];
      row.cost = joint.robots[i].objective;
      row.solve_ms = joint.stats.solve_seconds * 1000.0;
      row.gamma_d = false;
      row.gamma_r = true;
      row.target_id = static_cast<int>(rt[i].task_index);
      row.min_els_margin = min_margin;
      row.min_link_dist = min_dist;
      log.rows.push_back(std::move(row));

      rt[i].x = agents[i].config().dyn.step(rt[i].x, joint.robots[i].inputs[0]);
      applied.push_back(joint.robots[i].inputs[0]);
      next.push_back(rt[i].x);
    }
    log.applied_inputs.push_back(std::move(applied));
    log.plant_states.push_back(std::move(next));
    log.steps = t + 1;

    bool all_done = true;
    for (int i = 0; i < m; ++i) {
      if (rt[i].dwell_left > 0 && --rt[i].dwell_left == 0) {
        ++rt[i].task_index;
        if (rt[i].task_index >= scenario.robots[i].tasks.size())
          rt[i].completed = true;
      }
      log.tasks_completed[i] = rt[i].completed && rt[i].dwell_left == 0;
      all_done = all_done && log.tasks_completed[i];
    }
    if (all_done) break;
  }
  return log;
}

void write_csv(const SimLog& log, const std::string& path) {
  if (log.rows.empty()) throw std::invalid_argument("empty log");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const int n = static_cast<int>(log.rows[0].q.size());
  out << "t,robot_id";
  for (int j = 1; j <= n; ++j) out << ",q" << j;
  for (int j = 1; j <= n; ++j) out << ",qd" << j;
  for (int j = 1; j <= n; ++j) out << ",u" << j;
  out << ",cost,solve_ms,gamma_D,gamma_R,target_id,min_els_margin,"
         "min_link_dist\n";
  char buf[64];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    out << ',' << buf;
  };
  for (const auto& row : log.rows) {
    std::snprintf(buf, sizeof(buf), "%.9g", row.t);
    out << buf << ',' << row.robot_id;
    for (int j = 0; j < n; ++j) emit(row.q[j]);
    for (int j = 0; j < n; ++j) emit(row.qd[j]);
    for (int j = 0; j < n; ++j) emit(row.u[j]);
    emit(row.cost);
    emit(row.solve_ms);
    out << ',' << (row.gamma_d ? 1 : 0) << ',' << (row.gamma_r ? 1 : 0) << ','
        << row.target_id;
    emit(row.min_els_margin);
    emit(row.min_link_dist);
    out << '\n';
  }
}

bool logs_equal_modulo_timing(const std::string& csv_a,
                              const std::string& csv_b) {
  std::ifstream a(csv_a), b(csv_b);
  if (!a || !b) throw std::runtime_error("cannot open csv for comparison");
  std::string header_a, header_b;
  std::getline(a, header_a);
  std::getline(b, header_b);
  if (header_a != header_b) return false;

  // Locate the solve_ms column.
  int solve_col = -1, col = 0;
  std::stringstream hs(header_a);
  std::string name;
  while (std::getline(hs, name, ',')) {
    if (name == "solve_ms") solve_col = col;
    ++col;
  }

  std::string la, lb;
  while (true) {
    const bool ga = static_cast<bool>(std::getline(a, la));
    const bool gb = static_cast<bool>(std::getline(b, lb));
    if (ga != gb) return false;
    if (!ga) return true;
    std::stringstream sa(la), sb(lb);
    std::string fa, fb;
    for (int c = 0; c < col; ++c) {
      if (!std::getline(sa, fa, ',') || !std::getline(sb, fb, ',')) return false;
      if (c == solve_col) continue;
      if (fa != fb) return false;
    }
  }
}

ClearanceAudit audit_clearance(const SimLog& log,
                               const ScenarioConfig& scenario, int substeps) {
  if (log.steps == 0) throw std::invalid_argument("empty log");
  const int m = log.robot_count;
  std::vector<const ManipulatorModel*> models;
  for (const auto& r : scenario.robots) models.push_back(&r.model);
  auto pair_sets = build_pair_sets(models, scenario.pruning);

  ClearanceAudit audit;
  audit.min_els_margin = std::numeric_limits<double>::infinity();
  audit.min_link_distance = std::numeric_limits<double>::infinity();
  audit.per_substep_margin.assign(substeps,
                                  std::numeric_limits<double>::infinity());

  std::vector<std::vector<LineSegment>> segs(m);
  std::vector<std::vector<Ellipsoid>> ells(m);
  for (int step = 0; step < log.steps; ++step) {
    for (int sub = 0; sub < substeps; ++sub) {
      const double tau = scenario.ts * sub / substeps;
      for (int i = 0; i < m; ++i) {
        const auto& x = log.plant_states[step][i];
        const auto& u = log.applied_inputs[step][i];
        Eigen::VectorXd q = x.q + tau * x.qd + 0.5 * tau * tau * u;
        auto frames = forward_kinematics(*models[i], q);
        segs[i] = line_segments(*models[i], frames);
        ells[i] = ellipsoids(*models[i], frames);
      }
      double margin = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m; ++i)
        for (const auto& p : pair_sets[i].pairs)
          margin = std::min(
              margin, els_margin(segs[i][p.segment_index],
                                 ells[p.other_robot][p.ellipsoid_index],
                                 scenario.proj));
      for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j)
          for (const auto& sa : segs[i])
            for (const auto& sb : segs[j])
              audit.min_link_distance = std::min(
                  audit.min_link_distance, segment_segment_distance(sa, sb));
      audit.per_substep_margin[sub] =
          std::min(audit.per_substep_margin[sub], margin);
      audit.min_els_margin = std::min(audit.min_els_margin, margin);
    }
  }
  return audit;
}

std::vector<Eigen::Vector3d> place_objects_rsa(const Eigen::Vector3d& box_min,
                                               const Eigen::Vector3d& box_max,
                                               int count, double min_sep,
                                               uint64_t seed) {
  if ((box_max.array() < box_min.array()).any())
    throw std::invalid_argument("invalid placement region");
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::Vector3d> points;
  int rejections = 0;
  while (static_cast<int>(points.size()) < count) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a)
      p[a] = box_min[a] + unit(gen) * (box_max[a] - box_min[a]);
    bool ok = true;
    for (const auto& other : points)
      if ((p - other).norm() < min_sep) {
        ok = false;
        break;
      }
    if (ok) {
      points.push_back(p);
    } else if (++rejections >= 100000) {
      throw std::runtime_error("region too crowded");
    }
  }
  return points;
}

std::optional<Eigen::VectorXd> ik_solve(const ManipulatorModel& model,
                                        const Eigen::Vector3d& target,
                                        const Eigen::VectorXd& initial_q) {
  const int n = model.joint_count();
  Eigen::VectorXd q = initial_q;
  const double damping = 0.05;
  for (int iter = 0; iter < 500; ++iter) {
    auto jac = fk_jacobians(model, q);
    const Eigen::Vector3d tool = jac.frames[n + 1].origin;
    const Eigen::Vector3d err = target - tool;
    if (err.norm() <= 1e-4) return q;
    const auto& j = jac.origin_jac[n + 1];
    Eigen::MatrixXd jjt =
        j * j.transpose() + damping * damping * Eigen::Matrix3d::Identity();
    Eigen::VectorXd dq = j.transpose() * jjt.ldlt().solve(err);
    if (dq.norm() > 0.5) dq *= 0.5 / dq.norm();
    q += dq;
    q = q.cwiseMax(model.joint_min).cwiseMin(model.joint_max);
  }
  return std::nullopt;
}

RunMetrics metrics(const SimLog& log) {
  if (log.rows.empty() || log.steps == 0)
    throw std::invalid_argument("empty log");
  const int m = log.robot_count;
  RunMetrics out;
  out.execution_steps = log.steps;
  out.execution_seconds = log.steps * log.ts;
  out.tasks_completed = log.tasks_completed;
  out.mean_solve_ms.assign(m, 0.0);
  out.std_solve_ms.assign(m, 0.0);

  for (int i = 0; i < m; ++i) {
    std::vector<double> samples;
    for (int s = 0; s < log.steps; ++s) {
      const double v = log.row(s, i).solve_ms;
      if (v > 0.0) samples.push_back(v);
    }
    if (samples.empty()) continue;
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= samples.size();
    double var = 0.0;
    for (double v : samples) var += (v - mean) * (v - mean);
    var /= samples.size();
    out.mean_solve_ms[i] = mean;
    out.std_solve_ms[i] = std::sqrt(var);
  }

  double step_sum = 0.0;
  int step_count = 0;
  for (int s = 0; s < log.steps; ++s) {
    double worst = 0.0;
    for (int i = 0; i < m; ++i)
      worst = std::max(worst, log.row(s, i).solve_ms);
    if (worst > 0.0) {
      step_sum += worst;
      ++step_count;
    }
  }
  out.mean_step_solve_ms = step_count > 0 ? step_sum / step_count : 0.0;

  std::vector<bool> prev(m, false);
  for (int s = 0; s < log.steps; ++s)
    for (int i = 0; i < m; ++i) {
      const bool d = log.row(s, i).gamma_d;
      if (d && !prev[i]) ++out.deadlock_events;
      prev[i] = d;
    }
  return out;
}

}  // namespace mrmpc
