#include "mrmpc/collision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mrmpc {

namespace {
// Clamp the exponent argument so exp() cannot overflow; beyond +-40 the
// logistic is 0/1 at double precision anyway.
constexpr double kExpClamp = 40.0;
}  // namespace

double SmoothProjection::heaviside(double a) const {
  const double t = std::clamp(c * a, -kExpClamp, kExpClamp);
  return 1.0 / (1.0 + std::exp(-t));
}

double SmoothProjection::project(double a) const {
  return a * heaviside(a) - (a - 1.0) * heaviside(a - 1.0);
}

double SmoothProjection::project_derivative(double a) const {
  const double p0 = heaviside(a);
  const double p1 = heaviside(a - 1.0);
  const double d0 = c * p0 * (1.0 - p0);
  const double d1 = c * p1 * (1.0 - p1);
  return p0 + a * d0 - p1 - (a - 1.0) * d1;
}

double unconstrained_alpha(const LineSegment& seg, const Ellipsoid& ell) {
  if (seg.direction.squaredNorm() < 1e-24)
    throw std::invalid_argument("unconstrained_alpha: zero-length segment");
  const Eigen::Matrix3d m = ell.world_form();
  const Eigen::Vector3d mr = m * seg.direction;
  const Eigen::Vector3d w = seg.base - ell.center;
  return -w.dot(mr) / seg.direction.dot(mr);
}

double els_margin(const LineSegment& seg, const Ellipsoid& ell,
                  const SmoothProjection& proj) {
  const double alpha = proj.project(unconstrained_alpha(seg, ell));
  const Eigen::Vector3d d = seg.base + alpha * seg.direction - ell.center;
  return d.dot(ell.world_form() * d) - 1.0;
}

ElsGradients els_margin_gradients(const LineSegment& seg, const Ellipsoid& ell,
                                  const SmoothProjection& proj) {
  const Eigen::Matrix3d m = ell.world_form();
  const Eigen::Vector3d r = seg.direction;
  const Eigen::Vector3d w = seg.base - ell.center;
  const Eigen::Vector3d mr = m * r;
  const Eigen::Vector3d mw = m * w;
  const double v = r.dot(mr);
  const double alpha_hat = -w.dot(mr) / v;
  const double alpha = proj.project(alpha_hat);
  const double pd = proj.project_derivative(alpha_hat);

  const Eigen::Vector3d d = w + alpha * r;
  const Eigen::Vector3d md = m * d;

  ElsGradients out;
  out.margin = d.dot(md) - 1.0;

  // Chain through the projected parameter: dg/dalpha* times dalpha*/d(.).
  const double h = 2.0 * r.dot(md) * pd;
  const Eigen::Vector3d da_db = -mr / v;
  const Eigen::Vector3d da_dr = -(mw + 2.0 * alpha_hat * mr) / v;
  const Eigen::Matrix3d da_dm =
      -(w * r.transpose() + alpha_hat * r * r.transpose()) / v;

  out.d_base = 2.0 * md + h * da_db;
  out.d_direction = 2.0 * alpha * md + h * da_dr;
  out.d_center = -2.0 * md - h * da_db;
  out.d_form = d * d.transpose() + h * da_dm;
  return out;
}

Eigen::VectorXd chain_to_segment_robot(const ElsGradients& g,
                                       const FkJacobians& jac,
                                       const SegmentSpec& spec) {
  const auto& js = jac.origin_jac[spec.frame_start];
  const auto& je = jac.origin_jac[spec.frame_end];
  return js.transpose() * (g.d_base - g.d_direction) +
         je.transpose() * g.d_direction;
}

Eigen::VectorXd chain_to_ellipsoid_robot(const ElsGradients& g,
                                         const FkJacobians& jac,
                                         const EllipsoidSpec& spec,
                                         const Ellipsoid& world_ell) {
  const int n = static_cast<int>(jac.joint_axis.cols());
  const auto& js = jac.origin_jac[spec.frame_start];
  const auto& je = jac.origin_jac[spec.frame_end];
  Eigen::VectorXd grad = 0.5 * (js + je).transpose() * g.d_center;

  // The quadratic form rotates rigidly with the carrying frame:
  // dM/dq_j = S_j M - M S_j with S_j the skew of joint j's world axis.
  const Eigen::Matrix3d m = world_ell.world_form();
  const int moving = jac.driving_joints(spec.frame_end, n);
  for (int j = 0; j < moving; ++j) {
    const Eigen::Matrix3d s = skew(jac.joint_axis.col(j));
    const Eigen::Matrix3d dm = s * m - m * s;
    grad[j] += g.d_form.cwiseProduct(dm).sum();
  }
  return grad;
}

std::vector<int> static_base_frames(const ManipulatorModel& model) {
  std::set<int> frames;
  for (const auto& seg : model.segment_spec) {
    frames.insert(seg.frame_start);
    frames.insert(seg.frame_end);
  }
  // Frame 0 is the fixed mount: constant in q and necessarily at table
  // height, so it carries no meaningful clearance constraint.
  frames.erase(0);
  return {frames.begin(), frames.end()};
}

Eigen::VectorXd static_margins(const ManipulatorModel& model,
                               const std::vector<LinkFrame>& frames,
                               const StaticEnvironment& env) {
  const std::vector<int> bases = static_base_frames(model);
  const int tool_frame = model.joint_count() + 1;
  Eigen::VectorXd margins(bases.size());
  for (size_t i = 0; i < bases.size(); ++i) {
    double z = frames[bases[i]].origin.z();
    if (bases[i] == tool_frame) z -= model.gripper_offset;
    margins[i] = z - env.table_height - env.clearance;
  }
  return margins;
}

Eigen::VectorXd static_margins(const ManipulatorModel& model,
                               const Eigen::VectorXd& q,
                               const StaticEnvironment& env) {
  return static_margins(model, forward_kinematics(model, q), env);
}

double segment_segment_distance(const LineSegment& a, const LineSegment& b) {
  // Closest points between segments a.base + s*a.direction and
  // b.base + t*b.direction with s, t clamped to [0, 1].
  const Eigen::Vector3d d1 = a.direction;
  const Eigen::Vector3d d2 = b.direction;
  const Eigen::Vector3d r = a.base - b.base;
  const double aa = d1.squaredNorm();
  const double ee = d2.squaredNorm();
  const double f = d2.dot(r);

  double s = 0.0, t = 0.0;
  if (aa <= 1e-30 && ee <= 1e-30) {
    return r.norm();
  }
  if (aa <= 1e-30) {
    t = std::clamp(f / ee, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (ee <= 1e-30) {
      s = std::clamp(-c / aa, 0.0, 1.0);
    } else {
      const double bb = d1.dot(d2);
      const double denom = aa * ee - bb * bb;
      if (denom > 1e-30) {
        s = std::clamp((bb * f - c * ee) / denom, 0.0, 1.0);
      } else {
        s = 0.0;  // parallel: pick an endpoint, fix up below
      }
      t = (bb * s + f) / ee;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / aa, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((bb - c) / aa, 0.0, 1.0);
      }
    }
  }
  return (a.base + s * d1 - b.base - t * d2).norm();
}

PruningTable parse_pruning_table(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(
        std::string("pruning table is not valid JSON: ") + e.what());
  }
  PruningTable table;
  for (const auto& entry : doc.value("pairs", nlohmann::json::array())) {
    PruningTable::Entry e;
    e.ellipsoid = entry.at("ellipsoid").get<std::string>();
    e.segment = entry.at("segment").get<std::string>();
    table.entries.push_back(e);
  }
  return table;
}

PruningTable load_pruning_table(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw std::invalid_argument("cannot open pruning table: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pruning_table(ss.str());
}

std::vector<CollisionPairSet> build_pair_sets(
    const std::vector<const ManipulatorModel*>& models,
    const PruningTable& table) {
  const int m = static_cast<int>(models.size());
  std::vector<CollisionPairSet> sets(m);
  if (table.disable_all) return sets;
  for (int i = 0; i < m; ++i) {
    std::set<std::tuple<int, int, int>> seen;
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      if (table.full_product()) {
        for (size_t n = 0; n < models[j]->ellipsoid_spec.size(); ++n)
          for (size_t s = 0; s < models[i]->segment_spec.size(); ++s)
            sets[i].pairs.push_back(
                {j, static_cast<int>(n), static_cast<int>(s)});
      } else {
        for (const auto& entry : table.entries) {
          CollisionPair p;
          p.other_robot = j;
          p.ellipsoid_index = models[j]->ellipsoid_index(entry.ellipsoid);
          p.segment_index = models[i]->segment_index(entry.segment);
          if (!seen.insert({j, p.ellipsoid_index, p.segment_index}).second)
            throw std::invalid_argument("duplicate pruning entry " +
                                        entry.ellipsoid + "/" + entry.segment);
          sets[i].pairs.push_back(p);
        }
      }
    }
  }
  return sets;
}

}  // namespace mrmpc
