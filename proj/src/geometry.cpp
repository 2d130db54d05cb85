#include "dsa4d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dsa4d {

bool Aabb::contains(const Vec3& p, double tol) const {
  for (int i = 0; i < 3; ++i) {
    if (p[i] < lo[i] - tol || p[i] > hi[i] + tol) return false;
  }
  return true;
}

void ScanGeometry::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("scan geometry: " + msg); };
  if (!(sod_mm > 0)) fail("sod_mm must be positive");
  if (!(sdd_mm > sod_mm)) fail("sdd_mm must exceed sod_mm");
  if (det_cols < 1 || det_rows < 1) fail("detector must have at least one pixel");
  if (!(pitch_u_mm > 0) || !(pitch_v_mm > 0)) fail("pixel pitch must be positive");
  if (num_frames_total < 2) fail("num_frames_total must be >= 2");
  for (int i = 0; i < 3; ++i) {
    if (!(aabb.hi[i] > aabb.lo[i])) fail("aabb must have positive extent");
  }
  // The box must stay strictly between the source orbit and the detector
  // plane for every gantry angle, i.e. inside the cylinder of radius
  // min(sod, sdd - sod) around the rotation axis.
  double r2 = 0.0;
  for (double x : {aabb.lo.x(), aabb.hi.x()}) {
    for (double y : {aabb.lo.y(), aabb.hi.y()}) r2 = std::max(r2, x * x + y * y);
  }
  const double limit = std::min(sod_mm, sdd_mm - sod_mm);
  if (!(std::sqrt(r2) < limit)) fail("aabb intersects the source orbit or the detector");
}

FramePose pose_for_frame(const ScanGeometry& geom, int frame_index) {
  if (frame_index < 1 || frame_index > geom.num_frames_total) {
    throw std::invalid_argument("frame index " + std::to_string(frame_index) + " outside [1, " +
                                std::to_string(geom.num_frames_total) + "]");
  }
  const double frac =
      static_cast<double>(frame_index - 1) / static_cast<double>(geom.num_frames_total - 1);
  FramePose pose;
  pose.frame_index = frame_index;
  pose.angle_rad = (geom.angle_start_deg + geom.angle_range_deg * frac) * std::numbers::pi / 180.0;
  pose.t_norm = frac;
  return pose;
}

std::optional<Interval> aabb_intersect(const Vec3& origin, const Vec3& direction, const Aabb& box) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double d = direction[i];
    if (d == 0.0) {
      if (origin[i] < box.lo[i] || origin[i] > box.hi[i]) return std::nullopt;
      continue;
    }
    double a = (box.lo[i] - origin[i]) / d;
    double b = (box.hi[i] - origin[i]) / d;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (!(t0 < t1)) return std::nullopt;
  return Interval{t0, t1};
}

DetectorFrame detector_frame(const ScanGeometry& geom, const FramePose& pose) {
  const double c = std::cos(pose.angle_rad);
  const double s = std::sin(pose.angle_rad);
  auto rot = [&](double x, double y, double z) { return Vec3(c * x - s * y, s * x + c * y, z); };
  DetectorFrame f;
  f.source = rot(0.0, -geom.sod_mm, 0.0);
  f.center = rot(0.0, geom.sdd_mm - geom.sod_mm, 0.0);
  f.u_axis = rot(1.0, 0.0, 0.0);
  f.v_axis = Vec3::UnitZ();
  return f;
}

Ray pixel_line(const ScanGeometry& geom, const FramePose& pose, double u, double v) {
  const DetectorFrame f = detector_frame(geom, pose);
  const double du = (u - 0.5 * geom.det_cols) * geom.pitch_u_mm;
  const double dv = (v - 0.5 * geom.det_rows) * geom.pitch_v_mm;
  const Vec3 target = f.center + du * f.u_axis + dv * f.v_axis;
  Ray r;
  r.origin = f.source;
  r.direction = (target - f.source).normalized();
  return r;
}

std::optional<Ray> ray_for_detector_point(const ScanGeometry& geom, const FramePose& pose, double u,
                                          double v) {
  if (u < 0.0 || u > geom.det_cols || v < 0.0 || v > geom.det_rows) {
    throw std::invalid_argument("detector coordinate outside the detector");
  }
  Ray r = pixel_line(geom, pose, u, v);
  const auto hit = aabb_intersect(r.origin, r.direction, geom.aabb);
  if (!hit) return std::nullopt;
  r.s_near = hit->s_near;
  r.s_far = hit->s_far;
  return r;
}

std::optional<Ray> ray_for_pixel(const ScanGeometry& geom, const FramePose& pose, int col, int row) {
  if (col < 0 || col >= geom.det_cols || row < 0 || row >= geom.det_rows) {
    throw std::invalid_argument("pixel (" + std::to_string(col) + ", " + std::to_string(row) +
                                ") outside the detector");
  }
  return ray_for_detector_point(geom, pose, col + 0.5, row + 0.5);
}

}  // namespace dsa4d
