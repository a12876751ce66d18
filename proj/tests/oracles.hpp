#pragma once

// Independent reference implementations used only by tests. These must not
// share code with the library paths they check.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mrmpc/kinematics.hpp"
#include "mrmpc/model.hpp"

namespace oracles {

// Forward kinematics by plain 4x4 homogeneous matrix products, standard DH.
inline std::vector<Eigen::Matrix4d> dh_chain_homogeneous(
    const mrmpc::ManipulatorModel& model, const Eigen::VectorXd& q) {
  auto make_t = [](double theta, double d, double a,
                   double alpha) -> Eigen::Matrix4d {
    Eigen::Matrix4d rz = Eigen::Matrix4d::Identity();
    rz(0, 0) = std::cos(theta);
    rz(0, 1) = -std::sin(theta);
    rz(1, 0) = std::sin(theta);
    rz(1, 1) = std::cos(theta);
    Eigen::Matrix4d tz = Eigen::Matrix4d::Identity();
    tz(2, 3) = d;
    Eigen::Matrix4d tx = Eigen::Matrix4d::Identity();
    tx(0, 3) = a;
    Eigen::Matrix4d rx = Eigen::Matrix4d::Identity();
    rx(1, 1) = std::cos(alpha);
    rx(1, 2) = -std::sin(alpha);
    rx(2, 1) = std::sin(alpha);
    rx(2, 2) = std::cos(alpha);
    return rz * tz * tx * rx;
  };
  Eigen::Matrix4d base = Eigen::Matrix4d::Identity();
  base.topLeftCorner<3, 3>() = model.base_pose.rotation;
  base.topRightCorner<3, 1>() = model.base_pose.position;
  std::vector<Eigen::Matrix4d> frames{base};
  Eigen::Matrix4d acc = base;
  for (int j = 0; j < model.joint_count(); ++j) {
    const auto& row = model.dh_rows[j];
    acc = acc * make_t(q[j] + row.theta_offset, row.d, row.a, row.alpha);
    frames.push_back(acc);
  }
  Eigen::Matrix4d tool = Eigen::Matrix4d::Identity();
  tool(2, 3) = model.gripper_offset;
  frames.push_back(acc * tool);
  return frames;
}

// Central finite difference of a scalar function.
inline Eigen::VectorXd central_difference(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x, xm = x;
  for (int i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return g;
}

// Minimum of H(base + alpha * direction) over a uniform alpha grid on [0, 1].
inline double grid_min_h(const mrmpc::LineSegment& seg,
                         const mrmpc::Ellipsoid& ell, int points = 100000) {
  const Eigen::Matrix3d m = ell.world_form();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < points; ++i) {
    const double alpha = static_cast<double>(i) / (points - 1);
    const Eigen::Vector3d d = seg.base + alpha * seg.direction - ell.center;
    best = std::min(best, d.dot(m * d));
  }
  return best;
}

// Matrix exponential by scaling and squaring of the plain Taylor series.
inline Eigen::MatrixXd expm_series(const Eigen::MatrixXd& a) {
  const int squarings = 10;
  Eigen::MatrixXd scaled = a / std::pow(2.0, squarings);
  Eigen::MatrixXd result =
      Eigen::MatrixXd::Identity(a.rows(), a.cols());
  Eigen::MatrixXd term = result;
  for (int k = 1; k <= 24; ++k) {
    term = term * scaled / static_cast<double>(k);
    result += term;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

inline std::mt19937_64 rng(uint64_t seed) { return std::mt19937_64{seed}; }

inline double uniform(std::mt19937_64& gen, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(gen);
}

inline Eigen::VectorXd uniform_vector(std::mt19937_64& gen, int n, double lo,
                                      double hi) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = uniform(gen, lo, hi);
  return v;
}

}  // namespace oracles
