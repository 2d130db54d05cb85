#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "dsa4d/geometry.hpp"

using namespace dsa4d;

namespace {

ScanGeometry sweep133() {
  ScanGeometry g;
  g.num_frames_total = 133;
  g.angle_range_deg = 198.0;
  return g;
}

double deg(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace

TEST_CASE("pose endpoints and midpoint of a 133-frame sweep") {
  const ScanGeometry g = sweep133();
  const FramePose first = pose_for_frame(g, 1);
  CHECK(deg(first.angle_rad) == doctest::Approx(0.0));
  CHECK(first.t_norm == 0.0);
  const FramePose last = pose_for_frame(g, 133);
  CHECK(deg(last.angle_rad) == doctest::Approx(198.0));
  CHECK(last.t_norm == 1.0);
  const FramePose mid = pose_for_frame(g, 67);
  CHECK(deg(mid.angle_rad) == doctest::Approx(99.0));
  CHECK(mid.t_norm == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("pose is monotone and rejects out-of-range frames") {
  const ScanGeometry g = sweep133();
  for (int i = 2; i <= g.num_frames_total; ++i) {
    const FramePose a = pose_for_frame(g, i - 1);
    const FramePose b = pose_for_frame(g, i);
    CHECK(b.angle_rad > a.angle_rad);
    CHECK(b.t_norm > a.t_norm);
    CHECK(b.t_norm == doctest::Approx((i - 1) / 132.0));
  }
  CHECK_THROWS_AS(pose_for_frame(g, 0), std::invalid_argument);
  CHECK_THROWS_AS(pose_for_frame(g, 134), std::invalid_argument);
}

TEST_CASE("central ray at 0 and 180 degrees") {
  ScanGeometry g;
  g.num_frames_total = 2;
  g.angle_range_deg = 180.0;
  const auto r0 = ray_for_detector_point(g, pose_for_frame(g, 1), g.det_cols / 2.0, g.det_rows / 2.0);
  REQUIRE(r0);
  CHECK((r0->origin - Vec3(0, -750, 0)).norm() < 1e-9);
  CHECK((r0->direction - Vec3(0, 1, 0)).norm() < 1e-12);
  const auto r1 = ray_for_detector_point(g, pose_for_frame(g, 2), g.det_cols / 2.0, g.det_rows / 2.0);
  REQUIRE(r1);
  CHECK((r1->origin - Vec3(0, 750, 0)).norm() < 1e-9);
  CHECK((r1->direction - Vec3(0, -1, 0)).norm() < 1e-12);
  // Central ray crosses the 220 mm box from y=-110 to y=110.
  CHECK(r0->s_near == doctest::Approx(640.0));
  CHECK(r0->s_far == doctest::Approx(860.0));
}

TEST_CASE("detector axes follow the stated convention at angle 0") {
  ScanGeometry g;
  const DetectorFrame f = detector_frame(g, pose_for_frame(g, 1));
  CHECK((f.source - Vec3(0, -750, 0)).norm() < 1e-9);
  CHECK(f.center.y() == doctest::Approx(450.0));
  CHECK((f.u_axis - Vec3(1, 0, 0)).norm() < 1e-12);
  CHECK((f.v_axis - Vec3(0, 0, 1)).norm() < 1e-12);
  // A pixel to the right of center (larger u) points toward +x.
  const Ray r = pixel_line(g, pose_for_frame(g, 1), g.det_cols / 2.0 + 10.0, g.det_rows / 2.0);
  CHECK(r.direction.x() > 0.0);
  CHECK(std::abs(r.direction.z()) < 1e-12);
}

TEST_CASE("corner pixel leans toward the central ray") {
  ScanGeometry g;
  const FramePose p = pose_for_frame(g, 17);
  const Ray c = pixel_line(g, p, g.det_cols / 2.0, g.det_rows / 2.0);
  const Ray k = pixel_line(g, p, 0.5, 0.5);
  CHECK(std::abs(k.direction.norm() - 1.0) < 1e-9);
  CHECK(k.direction.dot(c.direction) > 0.0);
}

TEST_CASE("aabb intersection examples") {
  Aabb box;
  box.lo = Vec3(-1, -1, -1);
  box.hi = Vec3(1, 1, 1);
  const auto a = aabb_intersect(Vec3(-2, 0, 0), Vec3(1, 0, 0), box);
  REQUIRE(a);
  CHECK(a->s_near == doctest::Approx(1.0));
  CHECK(a->s_far == doctest::Approx(3.0));
  const auto b = aabb_intersect(Vec3(0, 0, 0), Vec3(1, 0, 0), box);
  REQUIRE(b);
  CHECK(b->s_near == 0.0);
  CHECK(b->s_far == doctest::Approx(1.0));
  CHECK_FALSE(aabb_intersect(Vec3(-2, 5, 0), Vec3(1, 0, 0), box));
  // Box behind the origin.
  CHECK_FALSE(aabb_intersect(Vec3(2, 0, 0), Vec3(1, 0, 0), box));
}

TEST_CASE("points strictly inside the hit interval lie inside the box") {
  ScanGeometry g;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> frame(1, g.num_frames_total);
  std::uniform_real_distribution<double> uu(0.0, g.det_cols), vv(0.0, g.det_rows), s01(0.0, 1.0);
  int hits = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto r = ray_for_detector_point(g, pose_for_frame(g, frame(rng)), uu(rng), vv(rng));
    if (!r) continue;
    ++hits;
    CHECK(r->s_near >= 0.0);
    CHECK(r->s_near < r->s_far);
    CHECK(std::abs(r->direction.norm() - 1.0) < 1e-9);
    for (int k = 0; k < 5; ++k) {
      const double s = r->s_near + (r->s_far - r->s_near) * (0.001 + 0.998 * s01(rng));
      CHECK(g.aabb.contains(r->at(s), 1e-9));
    }
  }
  CHECK(hits > 1000);
}

TEST_CASE("geometry validation") {
  ScanGeometry g;
  CHECK_NOTHROW(g.validate());
  ScanGeometry bad = g;
  bad.sdd_mm = 700.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.pitch_u_mm = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.num_frames_total = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.aabb.hi = Vec3(800, 800, 800);
  bad.aabb.lo = Vec3(-800, -800, -800);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
