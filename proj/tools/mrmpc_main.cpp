#include <sys/stat.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mrmpc/sim.hpp"

using namespace mrmpc;
using nlohmann::json;

namespace {

void ensure_dir(const std::string& path) {
  ::mkdir(path.c_str(), 0755);
}

json metrics_to_json(const RunMetrics& m) {
  json j;
  j["execution_seconds"] = m.execution_seconds;
  j["execution_steps"] = m.execution_steps;
  j["mean_solve_ms"] = m.mean_solve_ms;
  j["std_solve_ms"] = m.std_solve_ms;
  j["mean_step_solve_ms"] = m.mean_step_solve_ms;
  j["tasks_completed"] = m.tasks_completed;
  j["deadlock_events"] = m.deadlock_events;
  return j;
}

double rms_joint_deviation(const SimLog& a, const SimLog& b) {
  const int steps = std::min(a.steps, b.steps);
  double sum = 0.0;
  long count = 0;
  for (int s = 0; s < steps; ++s)
    for (int r = 0; r < a.robot_count; ++r) {
      const Eigen::VectorXd d = a.row(s, r).q - b.row(s, r).q;
      sum += d.squaredNorm();
      count += d.size();
    }
  return count > 0 ? std::sqrt(sum / count) : 0.0;
}

void apply_overrides(ScenarioConfig& scenario, int horizon,
                     const std::string& transport, int64_t seed) {
  if (horizon > 0) scenario.np = horizon;
  if (!transport.empty()) {
    if (transport == "inproc")
      scenario.transport = TransportKind::in_process;
    else if (transport == "udp")
      scenario.transport = TransportKind::udp;
    else
      throw CLI::ValidationError("--transport must be inproc or udp");
  }
  if (seed >= 0) scenario.seed = static_cast<uint64_t>(seed);
}

int cmd_run(const std::string& scenario_path, const std::string& out_dir,
            int horizon, const std::string& transport, int64_t seed) {
  auto scenario = load_scenario(scenario_path);
  apply_overrides(scenario, horizon, transport, seed);
  ensure_dir(out_dir);

  auto log = run(scenario);
  write_csv(log, out_dir + "/log.csv");
  auto m = metrics(log);
  auto audit = audit_clearance(log, scenario);

  const bool margins_ok = audit.min_els_margin >= -1e-6;
  const bool distance_ok =
      scenario.robots.size() < 2 || audit.min_link_distance > 0.0;
  const bool ok = log.all_tasks_completed() && !log.safety_stopped &&
                  margins_ok && distance_ok;

  json summary;
  summary["scenario"] = scenario.name;
  summary["metrics"] = metrics_to_json(m);
  summary["completed"] = log.all_tasks_completed();
  summary["safety_stopped"] = log.safety_stopped;
  summary["stale_predictions"] = log.stale_predictions;
  summary["audit_min_els_margin"] = audit.min_els_margin;
  summary["audit_min_link_distance"] = audit.min_link_distance;
  summary["ok"] = ok;
  std::ofstream(out_dir + "/summary.json") << summary.dump(2) << "\n";

  std::cout << scenario.name << ": " << (ok ? "ok" : "FAILED") << " after "
            << m.execution_steps << " steps (" << m.execution_seconds
            << " s sim time); min audited margin " << audit.min_els_margin
            << ", min link distance " << audit.min_link_distance
            << ", deadlock events " << m.deadlock_events << "\n";
  return ok ? 0 : 1;
}

int cmd_benchmark(const std::string& scenario_path, const std::string& mode,
                  const std::vector<int>& horizons,
                  const std::string& out_dir) {
  ensure_dir(out_dir);
  json report;
  report["scenario"] = scenario_path;
  std::cout << "mode horizon steps mean_step_ms per_robot_mean_ms completed\n";

  std::map<int, SimLog> dmpc_logs, cmpc_logs;
  for (int np : horizons) {
    auto scenario = load_scenario(scenario_path);
    scenario.np = np;
    if (mode == "dmpc" || mode == "both") {
      auto log = run(scenario);
      auto m = metrics(log);
      json entry = metrics_to_json(m);
      entry["horizon"] = np;
      report["dmpc"].push_back(entry);
      write_csv(log, out_dir + "/dmpc_np" + std::to_string(np) + ".csv");
      std::cout << "dmpc " << np << " " << m.execution_steps << " "
                << m.mean_step_solve_ms << " [";
      for (double v : m.mean_solve_ms) std::cout << " " << v;
      std::cout << " ] " << log.all_tasks_completed() << "\n";
      dmpc_logs.emplace(np, std::move(log));
    }
    if (mode == "cmpc" || mode == "both") {
      auto log = run_centralized(scenario);
      auto m = metrics(log);
      json entry = metrics_to_json(m);
      entry["horizon"] = np;
      report["cmpc"].push_back(entry);
      write_csv(log, out_dir + "/cmpc_np" + std::to_string(np) + ".csv");
      std::cout << "cmpc " << np << " " << m.execution_steps << " "
                << m.mean_step_solve_ms << " [";
      for (double v : m.mean_solve_ms) std::cout << " " << v;
      std::cout << " ] " << log.all_tasks_completed() << "\n";
      cmpc_logs.emplace(np, std::move(log));
    }
  }

  if (mode == "both") {
    std::cout << "horizon rms_joint_deviation_vs_cmpc speedup\n";
    for (int np : horizons) {
      const auto& d = dmpc_logs.at(np);
      const auto& c = cmpc_logs.at(np);
      const double rms = rms_joint_deviation(d, c);
      const double speedup = metrics(c).mean_step_solve_ms /
                             std::max(1e-12, metrics(d).mean_step_solve_ms);
      json cmp;
      cmp["horizon"] = np;
      cmp["rms_joint_deviation"] = rms;
      cmp["speedup"] = speedup;
      report["comparison"].push_back(cmp);
      std::cout << np << " " << rms << " " << speedup << "\n";
    }
  }
  std::ofstream(out_dir + "/benchmark.json") << report.dump(2) << "\n";
  return 0;
}

// Module layouts for the generator: bases on a 0.744 m pitch with the
// neutral poses folding away from the shared workspace.
struct Layout {
  std::vector<Eigen::Vector3d> base_positions;
  std::vector<double> base_yaw;
  Eigen::Vector3d region_min, region_max;  // object placement region
  std::vector<Eigen::Vector3d> trays;      // tray centers
};

Layout make_layout(int robots, double z_top) {
  const double pitch = 0.744;
  Layout l;
  if (robots == 2) {
    l.base_positions = {{0, 0, z_top}, {pitch, 0, z_top}};
    l.base_yaw = {0.0, M_PI};
    l.region_min = {0.24, -0.20, 1.29};
    l.region_max = {0.50, 0.20, 1.29};
    l.trays = {{0.372, 0.40, 1.31}, {0.372, -0.40, 1.31}};
  } else if (robots == 3) {
    l.base_positions = {{0, 0, z_top}, {pitch, 0, z_top}, {2 * pitch, 0, z_top}};
    l.base_yaw = {0.0, M_PI / 2.0, M_PI};
    l.region_min = {0.24, -0.20, 1.29};
    l.region_max = {2 * pitch - 0.24, 0.20, 1.29};
    l.trays = {{0.372, 0.40, 1.31}, {1.116, 0.40, 1.31},
               {0.372, -0.40, 1.31}, {1.116, -0.40, 1.31}};
  } else if (robots == 4) {
    l.base_positions = {{0, 0, z_top},
                        {pitch, 0, z_top},
                        {pitch, pitch, z_top},
                        {0, pitch, z_top}};
    l.base_yaw = {M_PI / 4, 3 * M_PI / 4, -3 * M_PI / 4, -M_PI / 4};
    l.region_min = {0.20, 0.17, 1.29};
    l.region_max = {0.54, 0.57, 1.29};
    l.trays = {{0.372, -0.35, 1.31},
               {1.09, 0.372, 1.31},
               {0.372, 1.09, 1.31},
               {-0.35, 0.372, 1.31}};
  } else {
    throw std::invalid_argument("generator supports 2, 3 or 4 robots");
  }
  return l;
}

int cmd_gen(int robots, int objects, int64_t seed, const std::string& out,
            const std::string& model_rel) {
  const double z_top = 1.107;
  auto layout = make_layout(robots, z_top);

  // Resolve the model path relative to the output file's directory.
  const auto slash = out.find_last_of('/');
  const std::string out_dir =
      slash == std::string::npos ? "." : out.substr(0, slash);
  auto model = load_model(out_dir + "/" + model_rel);

  auto points = place_objects_rsa(layout.region_min, layout.region_max,
                                  objects, 0.08,
                                  static_cast<uint64_t>(seed));

  StaticEnvironment env{z_top, 0.02};
  json doc;
  doc["name"] = "generated_m" + std::to_string(robots) + "_n" +
                std::to_string(objects) + "_s" + std::to_string(seed);
  doc["np"] = 15;
  doc["ts"] = 0.2;
  doc["seed"] = seed;
  doc["step_budget"] = 900;
  doc["transport"] = "inproc";
  doc["table"] = {{"z_t", z_top}, {"z_min", 0.02}};
  doc["projection_c"] = 20.0;
  doc["margin_epsilon"] = 0.05;
  doc["weights"] = {
      {"qx", {1, 1, 1, 0.2, 0.2, 1, 1, 1, 1, 0.1, 0.1, 0.1}},
      {"qf_scale", 10.0},
      {"ru", 1.0},
      {"rd", 1.0}};
  doc["deadlock"] = {{"eps_v", 1.5e-3},
                     {"delta_x", 1.2e-2},
                     {"d_min", 0.2},
                     {"eps_res", 4e-2}};
  doc["pruning"] = "../config/pruning_two_robot.json";

  // Position-only IK lands in arbitrary elbow postures; try the chained
  // seed first, then a few canonical ones, and keep the first solution
  // clear of the table.
  auto ik_checked = [&](ManipulatorModel& m, const Eigen::Vector3d& target,
                        const Eigen::VectorXd& q_seed) {
    std::vector<Eigen::VectorXd> seeds{q_seed};
    for (double base : {0.0, M_PI / 2, M_PI, -M_PI / 2}) {
      Eigen::VectorXd s(6);
      s << base, -1.0, 1.2, -1.77, -1.5707963, 0.0;
      seeds.push_back(s);
      s << base, -0.6, 0.9, -1.87, -1.5707963, 0.0;
      seeds.push_back(s);
    }
    for (const auto& s : seeds) {
      auto q = ik_solve(m, target, s);
      if (!q) continue;
      if (static_margins(m, *q, env).minCoeff() >= 0.01) return *q;
    }
    throw std::runtime_error(
        "gen: no reachable table-clear posture for target (" +
        std::to_string(target.x()) + ", " + std::to_string(target.y()) + ", " +
        std::to_string(target.z()) + ")");
  };

  json robots_json = json::array();
  for (int r = 0; r < robots; ++r) {
    ManipulatorModel placed = model;
    placed.base_pose.position = layout.base_positions[r];
    placed.base_pose.rotation =
        Eigen::AngleAxisd(layout.base_yaw[r], Eigen::Vector3d::UnitZ())
            .toRotationMatrix();

    // Ready pose: tool hovering over the robot's own edge of the region.
    const Eigen::Vector3d center =
        0.5 * (layout.region_min + layout.region_max);
    Eigen::Vector3d toward = center - placed.base_pose.position;
    toward.z() = 0.0;
    toward.normalize();
    const Eigen::Vector3d home =
        placed.base_pose.position + 0.30 * toward +
        Eigen::Vector3d(0, 0, 0.33);

    Eigen::VectorXd seed_q(6);
    seed_q << 0.0, -1.0, 1.2, -1.77, -1.5707963, 0.0;
    Eigen::VectorXd start_q = ik_checked(placed, home, seed_q);

    json rj;
    rj["model"] = model_rel;
    rj["base_position"] = {layout.base_positions[r].x(),
                           layout.base_positions[r].y(),
                           layout.base_positions[r].z()};
    rj["base_rpy"] = {0.0, 0.0, layout.base_yaw[r]};
    rj["start_q"] = std::vector<double>(start_q.data(), start_q.data() + 6);

    json tasks = json::array();
    Eigen::VectorXd q_prev = start_q;
    int slot = 0;
    for (int o = r; o < objects; o += robots) {
      Eigen::VectorXd q_pick = ik_checked(placed, points[o], q_prev);
      const Eigen::Vector3d tray = layout.trays[r % layout.trays.size()];
      Eigen::Vector3d slot_pos = tray;
      slot_pos.x() += 0.08 * (slot % 3 - 1);
      ++slot;
      Eigen::VectorXd q_place = ik_checked(placed, slot_pos, q_pick);
      tasks.push_back({{"target_q", std::vector<double>(
                                        q_pick.data(), q_pick.data() + 6)},
                       {"dwell", 5}});
      tasks.push_back({{"target_q", std::vector<double>(
                                        q_place.data(), q_place.data() + 6)},
                       {"dwell", 5}});
      q_prev = q_place;
    }
    rj["tasks"] = tasks;
    robots_json.push_back(rj);
  }
  doc["robots"] = robots_json;

  std::ofstream(out) << doc.dump(2) << "\n";
  // Round-trip through the loader to prove the file is valid.
  load_scenario(out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_check(const std::string& scenario_path) {
  try {
    auto scenario = load_scenario(scenario_path);
    std::cout << "valid: " << scenario.name << " ("
              << scenario.robots.size() << " robots, Np=" << scenario.np
              << ", Ts=" << scenario.ts << ")\n";
    return 0;
  } catch (const std::exception& e) {
    std::cout << "invalid: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed MPC motion control for multiple manipulators"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir = "out", transport, mode = "both";
  std::string model_rel = "../models/ur3_like.json";
  int horizon = -1;
  int64_t seed = -1;
  std::vector<int> horizons{10, 15, 20};
  int robots = 2, objects = 6;

  auto* run_cmd = app.add_subcommand("run", "execute a scenario");
  run_cmd->add_option("--scenario", scenario_path, "scenario file")
      ->required();
  run_cmd->add_option("--out", out_dir, "output directory");
  run_cmd->add_option("--horizon", horizon, "override the horizon Np");
  run_cmd->add_option("--transport", transport, "inproc or udp");
  run_cmd->add_option("--seed", seed, "override the seed");

  auto* bench_cmd =
      app.add_subcommand("benchmark", "compare DMPC and centralized MPC");
  bench_cmd->add_option("--scenario", scenario_path, "scenario file")
      ->required();
  bench_cmd->add_option("--mode", mode, "dmpc, cmpc or both");
  bench_cmd->add_option("--horizons", horizons, "horizon lengths to sweep");
  bench_cmd->add_option("--out", out_dir, "output directory");

  auto* gen_cmd = app.add_subcommand("gen", "generate a scenario");
  gen_cmd->add_option("--robots", robots, "number of robots (2-4)");
  gen_cmd->add_option("--objects", objects, "number of objects");
  gen_cmd->add_option("--seed", seed, "placement seed")->required();
  gen_cmd->add_option("--out", scenario_path, "output scenario file")
      ->required();
  gen_cmd->add_option("--model", model_rel,
                      "model path relative to the output file");

  auto* check_cmd = app.add_subcommand("check", "validate a scenario file");
  check_cmd->add_option("--scenario", scenario_path, "scenario file")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd)
      return cmd_run(scenario_path, out_dir, horizon, transport, seed);
    if (*bench_cmd)
      return cmd_benchmark(scenario_path, mode, horizons, out_dir);
    if (*gen_cmd)
      return cmd_gen(robots, objects, seed < 0 ? 1 : seed, scenario_path,
                     model_rel);
    if (*check_cmd) return cmd_check(scenario_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
