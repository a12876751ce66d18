#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mrmpc/collision.hpp"
#include "oracles.hpp"
#include "test_models.hpp"

using namespace mrmpc;

namespace {

Ellipsoid unit_sphere() {
  Ellipsoid e;
  e.center.setZero();
  e.rotation.setIdentity();
  e.inv_sq_semi_axes.setOnes();
  return e;
}

LineSegment make_seg(const Eigen::Vector3d& b, const Eigen::Vector3d& r) {
  LineSegment s;
  s.base = b;
  s.direction = r;
  return s;
}

Ellipsoid random_ellipsoid(std::mt19937_64& gen) {
  Ellipsoid e;
  e.center = oracles::uniform_vector(gen, 3, -0.8, 0.8);
  Eigen::Vector4d qv = oracles::uniform_vector(gen, 4, -1.0, 1.0);
  Eigen::Quaterniond quat(qv[0], qv[1], qv[2], qv[3]);
  quat.normalize();
  e.rotation = quat.toRotationMatrix();
  // UR-scale semi-axes.
  Eigen::Vector3d axes(oracles::uniform(gen, 0.1, 0.35),
                       oracles::uniform(gen, 0.1, 0.35),
                       oracles::uniform(gen, 0.1, 0.35));
  e.inv_sq_semi_axes = axes.array().square().inverse();
  return e;
}

LineSegment random_segment(std::mt19937_64& gen) {
  LineSegment s;
  s.base = oracles::uniform_vector(gen, 3, -0.8, 0.8);
  Eigen::Vector3d dir = oracles::uniform_vector(gen, 3, -1.0, 1.0);
  while (dir.norm() < 1e-3) dir = oracles::uniform_vector(gen, 3, -1.0, 1.0);
  s.direction = dir.normalized() * oracles::uniform(gen, 0.08, 0.45);
  return s;
}

}  // namespace

TEST_CASE("unconstrained alpha closed form") {
  auto sphere = unit_sphere();
  SUBCASE("grid search agreement") {
    auto seg = make_seg({2, 0, 0}, {-4, 0, 0});
    CHECK(unconstrained_alpha(seg, sphere) == doctest::Approx(0.5).epsilon(1e-12));
    // Brute force over a fine alpha grid.
    double best_alpha = 0.0, best = 1e300;
    for (int i = 0; i < 100000; ++i) {
      const double a = -1.0 + 3.0 * i / 99999.0;
      const Eigen::Vector3d p = seg.base + a * seg.direction;
      if (p.squaredNorm() < best) {
        best = p.squaredNorm();
        best_alpha = a;
      }
    }
    CHECK(std::abs(best_alpha - 0.5) < 1e-4);
  }
  SUBCASE("perpendicular offset gives zero") {
    auto seg = make_seg({0, 2, 0}, {1, 0, 0});
    CHECK(unconstrained_alpha(seg, sphere) == doctest::Approx(0.0));
  }
  SUBCASE("doubling the direction halves alpha, same point in space") {
    auto seg1 = make_seg({2, 0, 0}, {-4, 0, 0});
    auto seg2 = make_seg({2, 0, 0}, {-8, 0, 0});
    const double a1 = unconstrained_alpha(seg1, sphere);
    const double a2 = unconstrained_alpha(seg2, sphere);
    CHECK(a2 == doctest::Approx(a1 / 2.0));
    CHECK((seg1.base + a1 * seg1.direction - seg2.base - a2 * seg2.direction)
              .norm() < 1e-12);
  }
}

TEST_CASE("smooth projection") {
  SmoothProjection proj;  // c = 20
  SUBCASE("odd symmetry fixes the midpoint") {
    CHECK(proj.project(0.5) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("saturation") {
    CHECK(std::abs(proj.project(10.0) - 1.0) < 1e-9);
    CHECK(std::abs(proj.project(-10.0)) < 1e-9);
  }
  SUBCASE("no overflow for extreme arguments") {
    CHECK(std::isfinite(proj.project(1e12)));
    CHECK(std::isfinite(proj.project(-1e12)));
  }
  SUBCASE("bounded and near-monotone around the unit interval") {
    // The logistic smoothing has a worst-case gap of 0.2785/c on each side
    // of the clamp, so the output can dip below 0 and overshoot 1 by that
    // amount, and monotonicity only holds up to the same backslide.
    const double gap = 0.2785 / proj.c;
    double prev = proj.project(-3.0);
    double max_err = 0.0;
    for (int i = 1; i <= 6000; ++i) {
      const double a = -3.0 + 6.0 * i / 6000.0;
      const double p = proj.project(a);
      CHECK(p >= -gap - 1e-9);
      CHECK(p <= 1.0 + gap + 1e-9);
      CHECK(p >= prev - 2.0 * gap);
      prev = p;
      max_err = std::max(max_err, std::abs(p - std::clamp(a, 0.0, 1.0)));
    }
    CHECK(max_err < gap + 1e-6);
    CHECK(max_err > 0.9 * gap);
  }
  SUBCASE("derivative matches finite differences") {
    for (double a : {-2.0, -0.1, 0.0, 0.3, 0.5, 0.97, 1.0, 1.02, 2.5}) {
      const double fd =
          (proj.project(a + 1e-7) - proj.project(a - 1e-7)) / 2e-7;
      CHECK(proj.project_derivative(a) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("els margin on hand-evaluated cases") {
  SmoothProjection proj;
  auto sphere = unit_sphere();
  SUBCASE("clamped at the far end") {
    auto seg = make_seg({3, 0, 0}, {-1, 0, 0});
    CHECK(unconstrained_alpha(seg, sphere) == doctest::Approx(3.0));
    CHECK(els_margin(seg, sphere, proj) == doctest::Approx(3.0).epsilon(1e-6));
  }
  SUBCASE("deep intersection") {
    auto seg = make_seg({2, 0, 0}, {-4, 0, 0});
    CHECK(els_margin(seg, sphere, proj) ==
          doctest::Approx(-1.0).epsilon(1e-6));
  }
  SUBCASE("far away, perpendicular") {
    auto seg = make_seg({100, 0, 0}, {0, 1, 0});
    CHECK(els_margin(seg, sphere, proj) ==
          doctest::Approx(9999.0).epsilon(1e-9));
  }
}

TEST_CASE("smooth-projected margin tracks the grid oracle") {
  SmoothProjection proj;
  auto gen = oracles::rng(1234);
  int checked_signs = 0;
  for (int trial = 0; trial < 500; ++trial) {
    auto seg = random_segment(gen);
    auto ell = random_ellipsoid(gen);
    const double grid_h = oracles::grid_min_h(seg, ell, 100000);
    const double alpha = proj.project(unconstrained_alpha(seg, ell));
    const Eigen::Vector3d d = seg.base + alpha * seg.direction - ell.center;
    const double smooth_h = d.dot(ell.world_form() * d);
    CHECK(std::abs(smooth_h - grid_h) <= 5e-2);
    if (std::abs(grid_h - 1.0) > 0.05) {
      ++checked_signs;
      CHECK((smooth_h - 1.0 > 0) == (grid_h - 1.0 > 0));
    }
  }
  CHECK(checked_signs > 100);
}

TEST_CASE("margin is invariant under rigid transforms") {
  SmoothProjection proj;
  auto gen = oracles::rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    auto seg = random_segment(gen);
    auto ell = random_ellipsoid(gen);
    const double g0 = els_margin(seg, ell, proj);

    Eigen::Vector4d qv = oracles::uniform_vector(gen, 4, -1.0, 1.0);
    Eigen::Quaterniond quat(qv[0], qv[1], qv[2], qv[3]);
    quat.normalize();
    const Eigen::Matrix3d rot = quat.toRotationMatrix();
    const Eigen::Vector3d t = oracles::uniform_vector(gen, 3, -2.0, 2.0);

    LineSegment seg2;
    seg2.base = rot * seg.base + t;
    seg2.direction = rot * seg.direction;
    Ellipsoid ell2 = ell;
    ell2.center = rot * ell.center + t;
    ell2.rotation = rot * ell.rotation;
    CHECK(std::abs(els_margin(seg2, ell2, proj) - g0) < 1e-9);
  }
}

TEST_CASE("margin gradients match central differences") {
  SmoothProjection proj;
  auto model_i = test_models::spatial3();
  auto model_j = test_models::spatial3();
  model_j.base_pose.position = Eigen::Vector3d(0.9, 0.2, 0.0);

  auto gen = oracles::rng(2024);
  int accepted = 0;
  while (accepted < 3) {
    Eigen::VectorXd qi = oracles::uniform_vector(gen, 3, -1.5, 1.5);
    Eigen::VectorXd qj = oracles::uniform_vector(gen, 3, -1.5, 1.5);
    const int seg_idx = 2, ell_idx = 1;

    auto margin_of = [&](const Eigen::VectorXd& qqi,
                         const Eigen::VectorXd& qqj) {
      auto segs = line_segments(model_i, qqi);
      auto ells = ellipsoids(model_j, qqj);
      return els_margin(segs[seg_idx], ells[ell_idx], proj);
    };

    // Skip configurations inside the projection's kink-smoothing region.
    auto segs = line_segments(model_i, qi);
    auto ells = ellipsoids(model_j, qj);
    const double ah = unconstrained_alpha(segs[seg_idx], ells[ell_idx]);
    if (std::abs(ah) < 0.2 || std::abs(ah - 1.0) < 0.2) continue;
    ++accepted;

    auto grads = els_margin_gradients(segs[seg_idx], ells[ell_idx], proj);
    auto jac_i = fk_jacobians(model_i, qi);
    auto jac_j = fk_jacobians(model_j, qj);
    Eigen::VectorXd gi =
        chain_to_segment_robot(grads, jac_i, model_i.segment_spec[seg_idx]);
    Eigen::VectorXd gj = chain_to_ellipsoid_robot(
        grads, jac_j, model_j.ellipsoid_spec[ell_idx], ells[ell_idx]);

    Eigen::VectorXd fdi = oracles::central_difference(
        [&](const Eigen::VectorXd& q) { return margin_of(q, qj); }, qi);
    Eigen::VectorXd fdj = oracles::central_difference(
        [&](const Eigen::VectorXd& q) { return margin_of(qi, q); }, qj);
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(gi[k] - fdi[k]) <=
            1e-5 * std::max({1.0, std::abs(gi[k]), std::abs(fdi[k])}));
      CHECK(std::abs(gj[k] - fdj[k]) <=
            1e-5 * std::max({1.0, std::abs(gj[k]), std::abs(fdj[k])}));
    }
  }
}

TEST_CASE("static margins") {
  StaticEnvironment env{1.107, 0.05};
  auto model = test_models::planar2();
  SUBCASE("boundary is zero") {
    StaticEnvironment flush{0.0, 0.0};
    auto margins = static_margins(model, Eigen::Vector2d(0.0, 0.0), flush);
    for (int i = 0; i < margins.size(); ++i)
      CHECK(margins[i] == doctest::Approx(0.0));
  }
  SUBCASE("planar model lifted into the working plane") {
    auto lifted = model;
    lifted.base_pose.position = Eigen::Vector3d(0.0, 0.0, 1.2);
    auto margins = static_margins(lifted, Eigen::Vector2d(0.3, -0.2), env);
    // Moving bases only: the fixed mount frame carries no constraint.
    REQUIRE(margins.size() == 2);
    for (int i = 0; i < margins.size(); ++i)
      CHECK(margins[i] == doctest::Approx(0.043));
  }
  SUBCASE("tool point is lowered by the gripper length") {
    auto gripper = model;
    gripper.gripper_offset = 0.1;
    gripper.segment_spec.push_back({2, 3, "Tool"});
    // Planar rotations keep z; the approach axis points up, so the tool
    // point lands at base z + gripper_offset = 1.25.
    gripper.base_pose.position = Eigen::Vector3d(0.0, 0.0, 1.15);
    auto margins = static_margins(gripper, Eigen::Vector2d(0.0, 0.0), env);
    const double expected = 1.25 - 0.1 - 1.107 - 0.05;
    CHECK(margins[margins.size() - 1] == doctest::Approx(expected));
  }
}

TEST_CASE("segment-segment distance") {
  SUBCASE("parallel unit segments") {
    auto a = make_seg({0, 0, 0}, {1, 0, 0});
    auto b = make_seg({0, 1, 0}, {1, 0, 0});
    CHECK(segment_segment_distance(a, b) == doctest::Approx(1.0));
  }
  SUBCASE("crossing segments touch") {
    auto a = make_seg({0, 0, 0}, {1, 0, 0});
    auto b = make_seg({0.5, -0.5, 0}, {0.0, 1.0, 0});
    CHECK(segment_segment_distance(a, b) == doctest::Approx(0.0));
  }
  SUBCASE("symmetry and grid oracle on skew segments") {
    auto gen = oracles::rng(55);
    for (int trial = 0; trial < 40; ++trial) {
      auto a = random_segment(gen);
      auto b = random_segment(gen);
      const double dab = segment_segment_distance(a, b);
      CHECK(segment_segment_distance(b, a) == doctest::Approx(dab));
      double best = 1e300;
      for (int i = 0; i < 1000; ++i)
        for (int j = 0; j < 1000; ++j) {
          const double s = i / 999.0, t = j / 999.0;
          best = std::min(best, (a.base + s * a.direction - b.base -
                                 t * b.direction)
                                    .squaredNorm());
        }
      CHECK(std::abs(dab - std::sqrt(best)) < 1e-3);
    }
  }
  SUBCASE("perturbation bound") {
    auto gen = oracles::rng(56);
    for (int trial = 0; trial < 30; ++trial) {
      auto a = random_segment(gen);
      auto c = random_segment(gen);
      auto b = a;
      const Eigen::Vector3d shift = oracles::uniform_vector(gen, 3, -0.1, 0.1);
      b.base += shift;
      // Hausdorff distance between a and its translate is the shift norm.
      CHECK(std::abs(segment_segment_distance(a, c) -
                     segment_segment_distance(b, c)) <=
            shift.norm() + 1e-12);
    }
  }
}

TEST_CASE("pair set construction") {
  auto model_a = test_models::spatial3();
  auto model_b = test_models::spatial3();
  std::vector<const ManipulatorModel*> models{&model_a, &model_b};

  SUBCASE("full cross product") {
    auto sets = build_pair_sets(models, PruningTable{});
    REQUIRE(sets.size() == 2);
    CHECK(sets[0].pairs.size() == 4 * 3);  // N_L * N_E
    CHECK(sets[1].pairs.size() == 4 * 3);
  }
  SUBCASE("named pruning") {
    PruningTable table;
    table.entries = {{"Upper", "Tool"}, {"Fore", "Tool"}, {"Fore", "Fore"}};
    auto sets = build_pair_sets(models, table);
    CHECK(sets[0].pairs.size() == 3);
    CHECK(sets[0].count_for(1) == 3);
  }
  SUBCASE("unknown names are rejected") {
    PruningTable table;
    table.entries = {{"NoSuchLink", "Tool"}};
    CHECK_THROWS_AS(build_pair_sets(models, table), std::invalid_argument);
  }
}

TEST_CASE("pruning table round trip") {
  const std::string text = R"({"pairs": [
    {"ellipsoid": "Upper", "segment": "Tool"},
    {"ellipsoid": "Fore", "segment": "Base"}
  ]})";
  auto table = parse_pruning_table(text);
  REQUIRE(table.entries.size() == 2);
  CHECK(table.entries[0].ellipsoid == "Upper");
  CHECK(table.entries[1].segment == "Base");
  CHECK_FALSE(table.full_product());
}
