// Rotational cone-beam acquisition geometry.
//
// World frame: isocenter at the origin, gantry rotating about +z. At angle 0
// the source sits at (0, -sod, 0) and the detector plane is y = sdd - sod,
// with the detector u-axis along +x and v-axis along +z. Positive angles
// rotate counter-clockwise when viewed from +z.
#pragma once

#include <optional>

#include <Eigen/Dense>

namespace dsa4d {

using Vec3 = Eigen::Vector3d;

struct Aabb {
  Vec3 lo{-110.0, -110.0, -110.0};
  Vec3 hi{110.0, 110.0, 110.0};

  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return 0.5 * (lo + hi); }
  bool contains(const Vec3& p, double tol = 0.0) const;
  /// Maps a world point to [0,1]^3 (unclamped).
  Vec3 to_unit(const Vec3& p) const { return (p - lo).cwiseQuotient(extent()); }
  Vec3 from_unit(const Vec3& u) const { return lo + u.cwiseProduct(extent()); }
};

struct ScanGeometry {
  double sod_mm = 750.0;
  double sdd_mm = 1200.0;
  int det_cols = 128;
  int det_rows = 128;
  double pitch_u_mm = 3.0;
  double pitch_v_mm = 3.0;
  double angle_start_deg = 0.0;
  double angle_range_deg = 198.0;
  int num_frames_total = 60;
  Aabb aabb;

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

struct FramePose {
  int frame_index = 1;  // 1-based
  double angle_rad = 0.0;
  double t_norm = 0.0;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitY();
  double s_near = 0.0;
  double s_far = 0.0;

  Vec3 at(double s) const { return origin + s * direction; }
  double length() const { return s_far - s_near; }
};

struct Interval {
  double s_near;
  double s_far;
};

FramePose pose_for_frame(const ScanGeometry& geom, int frame_index);

/// Slab-method intersection clipped to s >= 0. Returns nullopt on a miss.
std::optional<Interval> aabb_intersect(const Vec3& origin, const Vec3& direction, const Aabb& box);

/// Source position and detector frame for a pose.
struct DetectorFrame {
  Vec3 source;
  Vec3 center;  // detector plane center
  Vec3 u_axis;
  Vec3 v_axis;
};
DetectorFrame detector_frame(const ScanGeometry& geom, const FramePose& pose);

/// Ray through continuous detector coordinates (u, v) in pixel units; pixel
/// (i, j) has its center at (i + 0.5, j + 0.5) and the detector center is at
/// (cols/2, rows/2). Returns nullopt when the ray misses the scene box.
std::optional<Ray> ray_for_detector_point(const ScanGeometry& geom, const FramePose& pose, double u,
                                          double v);

/// Ray through the center of pixel (col, row).
std::optional<Ray> ray_for_pixel(const ScanGeometry& geom, const FramePose& pose, int col, int row);

/// Unbounded ray (s_near = 0, s_far = 0) through pixel center, no box clipping.
Ray pixel_line(const ScanGeometry& geom, const FramePose& pose, double u, double v);

}  // namespace dsa4d
