// Discretized line-integral rendering, forward and backward.
//
// A ray's box interval [s_near, s_far] is split into K equal segments of
// length ds; the integrand is sampled once per segment, at the midpoint or at
// a uniform stratified offset when jitter is on, and the rendering is
// sum_k mu(x_k) * ds. Units: mu in mm^-1 times ds in mm.
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dsa4d/dataset_io.hpp"
#include "dsa4d/fields.hpp"
#include "dsa4d/geometry.hpp"
#include "dsa4d/parallel.hpp"

namespace dsa4d {

struct QuadratureConfig {
  int samples_per_ray = 256;
  bool jitter = true;

  void validate() const;
};

/// What a field rendering integrates.
enum class Integrand {
  MuC,      // full contrast attenuation
  Static,   // (1 - p) mu_s
  Dynamic,  // p mu_d
};

/// Sample distances along the ray; returns the segment length ds (0 for an
/// empty interval). rng is only used when jitter is on.
double sample_distances(const Ray& ray, const QuadratureConfig& quad, std::mt19937_64* rng,
                        std::vector<double>& s);

/// Midpoint-rule line integral of an arbitrary integrand f(world point).
template <typename F>
double render_line(const Ray& ray, const QuadratureConfig& quad, F&& integrand,
                   std::mt19937_64* rng = nullptr) {
  std::vector<double> s;
  const double ds = sample_distances(ray, quad, rng, s);
  double sum = 0.0;
  for (double sk : s) sum += integrand(ray.at(sk));
  return sum * ds;
}

/// Cached samples of one rendered ray batch, reused by render_backward.
template <typename Real>
struct RenderCache {
  FieldBatch<Real> batch;
  std::vector<int> first_sample;  // per ray, index into batch; -1 for rays without samples
  std::vector<int> sample_count;
  std::vector<double> ds;
  Integrand integrand = Integrand::MuC;
  bool valid = false;
};

/// Renders a batch of rays through the fields. times[i] is the timestamp of
/// rays[i]; world points are normalized by the scene box. Jitter offsets are
/// drawn from an RNG seeded with jitter_seed.
template <typename Real>
void render_forward(const FieldSet<Real>& fields, const Aabb& box, std::span<const Ray> rays,
                    std::span<const double> times, const QuadratureConfig& quad,
                    Integrand integrand, std::uint64_t jitter_seed, RenderCache<Real>& cache,
                    std::span<double> out);

/// Backpropagates dL/d(rendering) per ray into the field gradient buffers.
/// Each sample receives dL/d(mu_c) = dL/dI * ds. Only MuC renderings can be
/// differentiated.
template <typename Real>
void render_backward(const FieldSet<Real>& fields, RenderCache<Real>& cache,
                     std::span<const double> dl_di, GradRefs<Real> dest,
                     GradAccumulation mode = GradAccumulation::PerWorker);

/// Deterministic (no jitter unless quad.jitter) projection image of the fields.
template <typename Real>
ProjectionImage render_image(const FieldSet<Real>& fields, const ScanGeometry& geom,
                             const FramePose& pose, double t, Integrand integrand,
                             const QuadratureConfig& quad, Exec exec = Exec::Parallel,
                             std::uint64_t jitter_seed = 0);

/// Projection image of an arbitrary world-space integrand (e.g. phantom ground truth).
template <typename F>
ProjectionImage render_image_fn(const ScanGeometry& geom, const FramePose& pose,
                                const QuadratureConfig& quad, F&& integrand,
                                Exec exec = Exec::Parallel) {
  ProjectionImage img(geom.det_cols, geom.det_rows);
  auto row_kernel = [&](int row) {
    for (int col = 0; col < geom.det_cols; ++col) {
      const auto ray = ray_for_pixel(geom, pose, col, row);
      img.at(col, row) = ray ? static_cast<float>(render_line(*ray, quad, integrand)) : 0.0f;
    }
  };
  if (exec == Exec::Serial) {
    for (int row = 0; row < geom.det_rows; ++row) row_kernel(row);
  } else {
#pragma omp parallel for schedule(dynamic, 2)
    for (int row = 0; row < geom.det_rows; ++row) row_kernel(row);
  }
  return img;
}

}  // namespace dsa4d
