#include "mrmpc/model.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mrmpc {

namespace {

using nlohmann::json;

Eigen::VectorXd to_vector(const json& arr, const char* what) {
  if (!arr.is_array())
    throw std::invalid_argument(std::string("model field '") + what +
                                "' must be an array");
  Eigen::VectorXd v(arr.size());
  for (size_t i = 0; i < arr.size(); ++i) v[i] = arr[i].get<double>();
  return v;
}

Eigen::Vector3d to_vec3(const json& arr, const char* what) {
  Eigen::VectorXd v = to_vector(arr, what);
  if (v.size() != 3)
    throw std::invalid_argument(std::string("model field '") + what +
                                "' must have 3 entries");
  return v.head<3>();
}

Eigen::Matrix3d rotation_rpy(double roll, double pitch, double yaw) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

}  // namespace

ManipulatorModel parse_model(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("model file is not valid JSON: ") +
                                e.what());
  }

  ManipulatorModel m;
  m.name = doc.value("name", "unnamed");
  if (!doc.contains("dh_rows") || !doc["dh_rows"].is_array())
    throw std::invalid_argument("model is missing 'dh_rows'");
  for (const auto& row : doc["dh_rows"]) {
    DhRow r;
    r.a = row.value("a", 0.0);
    r.alpha = row.value("alpha", 0.0);
    r.d = row.value("d", 0.0);
    r.theta_offset = row.value("theta_offset", 0.0);
    m.dh_rows.push_back(r);
  }

  if (doc.contains("base_pose")) {
    const auto& bp = doc["base_pose"];
    if (bp.contains("position"))
      m.base_pose.position = to_vec3(bp["position"], "base_pose.position");
    if (bp.contains("rpy")) {
      Eigen::Vector3d rpy = to_vec3(bp["rpy"], "base_pose.rpy");
      m.base_pose.rotation = rotation_rpy(rpy.x(), rpy.y(), rpy.z());
    }
  }

  m.joint_min = to_vector(doc.at("joint_min"), "joint_min");
  m.joint_max = to_vector(doc.at("joint_max"), "joint_max");
  m.velocity_limits = to_vector(doc.at("velocity_limits"), "velocity_limits");
  m.acceleration_limits =
      to_vector(doc.at("acceleration_limits"), "acceleration_limits");
  m.neutral_pose = to_vector(doc.at("neutral_pose"), "neutral_pose");
  m.gripper_offset = doc.value("gripper_offset", 0.0);
  m.link_radius = doc.value("link_radius", 0.0);

  for (const auto& seg : doc.value("segments", json::array())) {
    SegmentSpec s;
    s.frame_start = seg.at("start").get<int>();
    s.frame_end = seg.at("end").get<int>();
    s.name = seg.value("name", "");
    m.segment_spec.push_back(s);
  }
  for (const auto& ell : doc.value("ellipsoids", json::array())) {
    EllipsoidSpec e;
    e.frame_start = ell.at("start").get<int>();
    e.frame_end = ell.at("end").get<int>();
    e.semi_axes = to_vec3(ell.at("semi_axes"), "ellipsoid semi_axes");
    e.name = ell.value("name", "");
    m.ellipsoid_spec.push_back(e);
  }

  m.validate();
  return m;
}

ManipulatorModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw std::invalid_argument("cannot open model file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

}  // namespace mrmpc
