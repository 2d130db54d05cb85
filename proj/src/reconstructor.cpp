#include "dsa4d/reconstructor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dsa4d/errors.hpp"

namespace dsa4d {

Lattice Lattice::covering(const Aabb& box, int n) {
  if (n < 1) throw std::invalid_argument("lattice: resolution must be positive");
  const Vec3 ext = box.extent();
  Lattice l;
  l.voxel_mm = ext.maxCoeff() / n;
  int dims[3];
  for (int a = 0; a < 3; ++a) dims[a] = std::max(1, static_cast<int>(std::lround(ext[a] / l.voxel_mm)));
  l.nx = dims[0];
  l.ny = dims[1];
  l.nz = dims[2];
  const Vec3 half_span = 0.5 * l.voxel_mm * Vec3(l.nx - 1, l.ny - 1, l.nz - 1);
  l.origin = box.center() - half_span;
  return l;
}

bool time_dependent(VolumeKind kind) {
  return kind == VolumeKind::MuC || kind == VolumeKind::MuD || kind == VolumeKind::DynamicComponent;
}

std::string kind_name(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::MuC: return "mu_c";
    case VolumeKind::P: return "p";
    case VolumeKind::MuS: return "mu_s";
    case VolumeKind::MuD: return "mu_d";
    case VolumeKind::StaticComponent: return "static_component";
    case VolumeKind::DynamicComponent: return "dynamic_component";
  }
  return "unknown";
}

VolumeKind parse_kind(const std::string& name) {
  for (VolumeKind k : {VolumeKind::MuC, VolumeKind::P, VolumeKind::MuS, VolumeKind::MuD,
                       VolumeKind::StaticComponent, VolumeKind::DynamicComponent}) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown volume kind '" + name + "'");
}

namespace {

FieldNeeds needs_for(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::MuC: return {true, true, true};
    case VolumeKind::P: return {false, false, true};
    case VolumeKind::MuS: return {true, false, false};
    case VolumeKind::MuD: return {false, true, false};
    case VolumeKind::StaticComponent: return {true, false, true};
    case VolumeKind::DynamicComponent: return {false, true, true};
  }
  return {};
}

template <typename Real>
float value_of(const FieldBatch<Real>& b, int j, VolumeKind kind, bool guided) {
  switch (kind) {
    case VolumeKind::MuC: return static_cast<float>(b.mu_c[j]);
    case VolumeKind::P: return static_cast<float>(b.p[j]);
    case VolumeKind::MuS: return static_cast<float>(b.mu_s[j]);
    case VolumeKind::MuD: return static_cast<float>(b.mu_d[j]);
    case VolumeKind::StaticComponent:
      return static_cast<float>(guided ? (Real(1) - b.p[j]) * b.mu_s[j] : b.mu_s[j]);
    case VolumeKind::DynamicComponent:
      return static_cast<float>(guided ? b.p[j] * b.mu_d[j] : b.mu_d[j]);
  }
  return 0.0f;
}

}  // namespace

template <typename Real>
VolumeImage extract_volume(const FieldSet<Real>& fields, const Aabb& box, const Lattice& lattice,
                           VolumeKind kind, std::optional<double> t, Exec exec) {
  if (time_dependent(kind) && !t) {
    throw std::invalid_argument("extract_volume: kind " + kind_name(kind) + " needs a timestamp");
  }
  const double tq = t.value_or(0.0);
  VolumeImage vol(lattice, kind_name(kind), time_dependent(kind) ? tq : -1.0);
  const bool guided = fields.mode() == Composition::Guided;
  const int slice = lattice.nx * lattice.ny;
  auto slice_kernel = [&](int k, FieldBatch<Real>& b) {
    b.resize(slice);
    for (int j = 0; j < lattice.ny; ++j) {
      for (int i = 0; i < lattice.nx; ++i) {
        b.set_point(j * lattice.nx + i, box.to_unit(lattice.center(i, j, k)), tq);
      }
    }
    fields.forward(b, needs_for(kind));
    float* dst = vol.values.data() + static_cast<std::size_t>(k) * slice;
    for (int q = 0; q < slice; ++q) dst[q] = value_of(b, q, kind, guided);
  };
  if (exec == Exec::Serial) {
    FieldBatch<Real> b;
    for (int k = 0; k < lattice.nz; ++k) slice_kernel(k, b);
  } else {
#pragma omp parallel
    {
      FieldBatch<Real> b;
#pragma omp for schedule(dynamic, 1)
      for (int k = 0; k < lattice.nz; ++k) slice_kernel(k, b);
    }
  }
  return vol;
}

template <typename Real>
VolumeImage average_volume(const FieldSet<Real>& fields, const Aabb& box, const Lattice& lattice,
                           std::span<const double> timestamps, VolumeKind kind, Exec exec) {
  if (timestamps.empty()) throw std::invalid_argument("average_volume: no timestamps");
  std::vector<double> ts(timestamps.begin(), timestamps.end());
  std::sort(ts.begin(), ts.end());
  VolumeImage avg(lattice, "mean_" + kind_name(kind));
  const double inv = 1.0 / static_cast<double>(ts.size());
  if (!time_dependent(kind)) {
    VolumeImage v = extract_volume(fields, box, lattice, kind, std::nullopt, exec);
    avg.values = std::move(v.values);
    return avg;
  }
  // The static and probability fields do not depend on t: evaluate them once
  // per slice and re-run only the dynamic field per timestamp. Per-voxel values
  // match extract_volume bitwise because each slice is the same batch.
  const bool guided = fields.mode() == Composition::Guided;
  const int slice = lattice.nx * lattice.ny;
  auto slice_kernel = [&](int k, FieldBatch<Real>& b) {
    b.resize(slice);
    for (int j = 0; j < lattice.ny; ++j) {
      for (int i = 0; i < lattice.nx; ++i) {
        b.set_point(j * lattice.nx + i, box.to_unit(lattice.center(i, j, k)), ts.front());
      }
    }
    const bool need_static = kind == VolumeKind::MuC;
    const bool need_p = guided && kind != VolumeKind::MuD;
    fields.forward(b, FieldNeeds{need_static, false, need_p});
    const std::vector<Real> mu_s = b.mu_s;
    const std::vector<Real> p = b.p;
    std::vector<double> sum(slice, 0.0);
    for (double t : ts) {
      for (int q = 0; q < slice; ++q) b.xt[4 * static_cast<std::size_t>(q) + 3] = static_cast<Real>(std::clamp(t, 0.0, 1.0));
      fields.forward(b, FieldNeeds{false, true, false});
      for (int q = 0; q < slice; ++q) {
        const Real d = b.mu_d[q];
        Real v;
        if (kind == VolumeKind::MuC) {
          v = guided ? (Real(1) - p[q]) * mu_s[q] + p[q] * d : mu_s[q] + d;
        } else if (kind == VolumeKind::DynamicComponent) {
          v = guided ? p[q] * d : d;
        } else {
          v = d;
        }
        sum[q] += static_cast<float>(v);
      }
    }
    float* dst = avg.values.data() + static_cast<std::size_t>(k) * slice;
    for (int q = 0; q < slice; ++q) dst[q] = static_cast<float>(sum[q] * inv);
  };
  if (exec == Exec::Serial) {
    FieldBatch<Real> b;
    for (int k = 0; k < lattice.nz; ++k) slice_kernel(k, b);
  } else {
#pragma omp parallel
    {
      FieldBatch<Real> b;
#pragma omp for schedule(dynamic, 1)
      for (int k = 0; k < lattice.nz; ++k) slice_kernel(k, b);
    }
  }
  return avg;
}

double default_iso_level(const VolumeImage& volume, double fraction, double percentile) {
  if (volume.values.empty()) throw std::invalid_argument("default_iso_level: empty volume");
  std::vector<float> v = volume.values;
  const double pos = std::clamp(percentile / 100.0, 0.0, 1.0) * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(v.size() - 1, lo + 1);
  std::nth_element(v.begin(), v.begin() + lo, v.end());
  const double a = v[lo];
  const double b = hi == lo ? a : *std::min_element(v.begin() + lo + 1, v.end());
  return fraction * (a + (pos - lo) * (b - a));
}

template VolumeImage extract_volume<float>(const FieldSet<float>&, const Aabb&, const Lattice&,
                                           VolumeKind, std::optional<double>, Exec);
template VolumeImage extract_volume<double>(const FieldSet<double>&, const Aabb&, const Lattice&,
                                            VolumeKind, std::optional<double>, Exec);
template VolumeImage average_volume<float>(const FieldSet<float>&, const Aabb&, const Lattice&,
                                           std::span<const double>, VolumeKind, Exec);
template VolumeImage average_volume<double>(const FieldSet<double>&, const Aabb&, const Lattice&,
                                            std::span<const double>, VolumeKind, Exec);

}  // namespace dsa4d
