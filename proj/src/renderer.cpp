#include "dsa4d/renderer.hpp"

#include <stdexcept>

namespace dsa4d {

void QuadratureConfig::validate() const {
  if (samples_per_ray < 2) throw std::invalid_argument("quadrature: samples_per_ray must be >= 2");
}

double sample_distances(const Ray& ray, const QuadratureConfig& quad, std::mt19937_64* rng,
                        std::vector<double>& s) {
  s.clear();
  const double len = ray.s_far - ray.s_near;
  if (!(len > 0.0)) return 0.0;
  const int k = quad.samples_per_ray;
  const double ds = len / k;
  s.resize(k);
  if (quad.jitter && rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < k; ++i) s[i] = ray.s_near + (i + u(*rng)) * ds;
  } else {
    for (int i = 0; i < k; ++i) s[i] = ray.s_near + (i + 0.5) * ds;
  }
  return ds;
}

namespace {

FieldNeeds needs_for(Integrand kind) {
  switch (kind) {
    case Integrand::Static:
      return {true, false, true};
    case Integrand::Dynamic:
      return {false, true, true};
    case Integrand::MuC:
    default:
      return {true, true, true};
  }
}

template <typename Real>
double sample_value(const FieldBatch<Real>& b, int j, Integrand kind, bool guided) {
  switch (kind) {
    case Integrand::Static:
      return guided ? (Real(1) - b.p[j]) * b.mu_s[j] : b.mu_s[j];
    case Integrand::Dynamic:
      return guided ? b.p[j] * b.mu_d[j] : b.mu_d[j];
    case Integrand::MuC:
    default:
      return b.mu_c[j];
  }
}

}  // namespace

template <typename Real>
void render_forward(const FieldSet<Real>& fields, const Aabb& box, std::span<const Ray> rays,
                    std::span<const double> times, const QuadratureConfig& quad,
                    Integrand integrand, std::uint64_t jitter_seed, RenderCache<Real>& cache,
                    std::span<double> out) {
  if (times.size() != rays.size() || out.size() != rays.size()) {
    throw std::invalid_argument("render_forward: rays, times and output sizes differ");
  }
  quad.validate();
  const std::size_t nr = rays.size();
  cache.valid = false;
  cache.first_sample.assign(nr, -1);
  cache.sample_count.assign(nr, 0);
  cache.ds.assign(nr, 0.0);
  cache.integrand = integrand;

  int total = 0;
  for (std::size_t i = 0; i < nr; ++i) {
    if (rays[i].s_far > rays[i].s_near) {
      cache.first_sample[i] = total;
      cache.sample_count[i] = quad.samples_per_ray;
      total += quad.samples_per_ray;
    }
  }
  FieldBatch<Real>& batch = cache.batch;
  batch.resize(total);
  std::mt19937_64 rng(jitter_seed);
  std::vector<double> s;
  for (std::size_t i = 0; i < nr; ++i) {
    if (cache.first_sample[i] < 0) continue;
    const Ray& r = rays[i];
    cache.ds[i] = sample_distances(r, quad, &rng, s);
    const int base = cache.first_sample[i];
    for (int k = 0; k < cache.sample_count[i]; ++k) {
      batch.set_point(base + k, box.to_unit(r.at(s[k])), times[i]);
    }
  }
  if (total > 0) fields.forward(batch, needs_for(integrand));

  const bool guided = fields.mode() == Composition::Guided;
  for (std::size_t i = 0; i < nr; ++i) {
    double sum = 0.0;
    const int base = cache.first_sample[i];
    for (int k = 0; k < cache.sample_count[i]; ++k) {
      sum += sample_value(batch, base + k, integrand, guided);
    }
    out[i] = sum * cache.ds[i];
  }
  cache.valid = true;
}

template <typename Real>
void render_backward(const FieldSet<Real>& fields, RenderCache<Real>& cache,
                     std::span<const double> dl_di, GradRefs<Real> dest, GradAccumulation mode) {
  if (!cache.valid) throw std::logic_error("render_backward: stale or missing render cache");
  if (cache.integrand != Integrand::MuC) {
    throw std::logic_error("render_backward: only full mu_c renderings are differentiable");
  }
  if (dl_di.size() != cache.first_sample.size()) {
    throw std::invalid_argument("render_backward: gradient count does not match ray count");
  }
  const int n = cache.batch.n;
  if (n == 0) return;
  std::vector<Real> dmu(n, Real(0));
  for (std::size_t i = 0; i < dl_di.size(); ++i) {
    const int base = cache.first_sample[i];
    if (base < 0) continue;
    const Real g = static_cast<Real>(dl_di[i] * cache.ds[i]);
    for (int k = 0; k < cache.sample_count[i]; ++k) dmu[base + k] = g;
  }
  fields.backward(cache.batch, dmu, dest, mode);
}

template <typename Real>
ProjectionImage render_image(const FieldSet<Real>& fields, const ScanGeometry& geom,
                             const FramePose& pose, double t, Integrand integrand,
                             const QuadratureConfig& quad, Exec exec, std::uint64_t jitter_seed) {
  ProjectionImage img(geom.det_cols, geom.det_rows);
  const int cols = geom.det_cols;
  auto row_kernel = [&](int row, RenderCache<Real>& cache) {
    std::vector<Ray> rays(cols);
    std::vector<double> times(cols, t), out(cols);
    for (int col = 0; col < cols; ++col) {
      const auto r = ray_for_pixel(geom, pose, col, row);
      if (r) {
        rays[col] = *r;
      } else {
        rays[col].s_near = rays[col].s_far = 0.0;
      }
    }
    render_forward<Real>(fields, geom.aabb, rays, times, quad, integrand,
                         jitter_seed + static_cast<std::uint64_t>(row), cache, out);
    for (int col = 0; col < cols; ++col) img.at(col, row) = static_cast<float>(out[col]);
  };
  if (exec == Exec::Serial) {
    RenderCache<Real> cache;
    for (int row = 0; row < geom.det_rows; ++row) row_kernel(row, cache);
  } else {
#pragma omp parallel
    {
      RenderCache<Real> cache;
#pragma omp for schedule(dynamic, 1)
      for (int row = 0; row < geom.det_rows; ++row) row_kernel(row, cache);
    }
  }
  return img;
}

#define DSA4D_RENDER_INSTANTIATE(Real)                                                          \
  template void render_forward<Real>(const FieldSet<Real>&, const Aabb&, std::span<const Ray>, \
                                     std::span<const double>, const QuadratureConfig&,          \
                                     Integrand, std::uint64_t, RenderCache<Real>&,              \
                                     std::span<double>);                                        \
  template void render_backward<Real>(const FieldSet<Real>&, RenderCache<Real>&,                \
                                      std::span<const double>, GradRefs<Real>,                  \
                                      GradAccumulation);                                        \
  template ProjectionImage render_image<Real>(const FieldSet<Real>&, const ScanGeometry&,       \
                                              const FramePose&, double, Integrand,              \
                                              const QuadratureConfig&, Exec, std::uint64_t);

DSA4D_RENDER_INSTANTIATE(float)
DSA4D_RENDER_INSTANTIATE(double)

}  // namespace dsa4d
