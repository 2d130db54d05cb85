// Synthetic dynamic vascular phantoms with exact line integrals.
//
// Vessels are spheres and capsules whose contrast attenuation ramps linearly
// from 0 to mu_peak. Overlapping primitives add. A static tissue ellipsoid
// provides the mask-run attenuation so the full mask/fill/log-subtraction
// chain can be simulated.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dsa4d/dataset_io.hpp"
#include "dsa4d/geometry.hpp"
#include "dsa4d/parallel.hpp"
#include "dsa4d/volume.hpp"

namespace dsa4d {

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

struct Capsule {
  Vec3 p0 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();
  double radius = 1.0;
};

struct Primitive {
  std::variant<Sphere, Capsule> shape;
  double mu_peak = 0.02;    // mm^-1 at full fill
  double fill_start = 0.0;  // t_norm of contrast arrival
  double fill_ramp = 0.0;   // t_norm duration of the 0 -> mu_peak ramp

  double fill(double t) const;
  bool contains(const Vec3& x) const;
  double radius() const;
  double surface_area() const;
  Aabb bounds() const;
};

struct BackgroundModel {
  Vec3 center = Vec3::Zero();
  Vec3 semi_axes{90.0, 90.0, 100.0};
  double mu_bg = 0.02;  // mm^-1
  double i0 = 1.0;
};

struct PhantomScene {
  std::vector<Primitive> primitives;
  BackgroundModel background;
  Aabb aabb;

  void validate() const;
  /// Smallest box containing every primitive.
  Aabb tight_bounds() const;
};

/// Ground-truth contrast attenuation at a world point.
double atten_at(const PhantomScene& scene, const Vec3& x, double t);

/// Exact length of {s >= 0 : origin + s*direction in primitive}; direction must be unit.
double chord_length(const Ray& ray, const Primitive& prim);
double chord_length(const Ray& ray, const Sphere& sphere);
double chord_length(const Ray& ray, const Capsule& capsule);
/// Chord through the background ellipsoid.
double background_chord(const Ray& ray, const BackgroundModel& bg);

/// Line integral of mu_c along the whole ray (s >= 0).
double project_analytic(const PhantomScene& scene, const Ray& ray, double t);

struct MaskFillSample {
  double i1;   // mask-run intensity
  double i2;   // fill-run intensity
  double dsa;  // ln(i1) - ln(i2)
};
MaskFillSample simulate_mask_fill(const PhantomScene& scene, const Ray& ray, double t);

/// Analytic projection image for one pose.
ProjectionImage project_image(const PhantomScene& scene, const ScanGeometry& geom,
                              const FramePose& pose, Exec exec = Exec::Parallel);

struct GenerateOptions {
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json provenance = nlohmann::json::object();
};

/// Renders one projection per frame index (sorted, in range), adds optional
/// Gaussian noise clamped at zero. Frame files are named frame_XXXX.raw.
Dataset generate_dataset(const PhantomScene& scene, const ScanGeometry& geom,
                         std::span<const int> frame_indices, const GenerateOptions& opts,
                         Exec exec = Exec::Parallel);

/// mu_c sampled at voxel centers.
VolumeImage ground_truth_volume(const PhantomScene& scene, const Lattice& lattice, double t);
/// Mean of ground_truth_volume over the given timestamps.
VolumeImage ground_truth_average(const PhantomScene& scene, const Lattice& lattice,
                                 std::span<const double> timestamps);
/// Indicator of the vessel union (1 inside any primitive).
VolumeImage vessel_mask(const PhantomScene& scene, const Lattice& lattice);

/// Uniform area-weighted samples on the boundary of the union of primitives.
std::vector<Vec3> sample_vessel_surface(const PhantomScene& scene, std::size_t count,
                                        std::uint64_t seed);

/// Trunk plus two branches and an aneurysm, filling progressively along the flow.
PhantomScene branching_y_scene();
/// Same topology with contrast arriving and saturating within the first frames.
PhantomScene fast_fill_scene();

nlohmann::json scene_to_json(const PhantomScene& scene);
PhantomScene scene_from_json(const nlohmann::json& j);
PhantomScene load_scene(const std::filesystem::path& path);
void save_scene(const std::filesystem::path& path, const PhantomScene& scene);

}  // namespace dsa4d
