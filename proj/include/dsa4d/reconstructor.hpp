// Volume extraction from trained fields, timestamp averaging and vessel meshing.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsa4d/fields.hpp"
#include "dsa4d/mesh.hpp"
#include "dsa4d/parallel.hpp"
#include "dsa4d/volume.hpp"

namespace dsa4d {

enum class VolumeKind {
  MuC,               // contrast attenuation at t
  P,                 // vessel probability
  MuS,               // raw static field
  MuD,               // raw dynamic field at t
  StaticComponent,   // (1 - p) mu_s
  DynamicComponent,  // p mu_d at t
};

bool time_dependent(VolumeKind kind);
std::string kind_name(VolumeKind kind);
/// Accepts the names produced by kind_name; throws ConfigError otherwise.
VolumeKind parse_kind(const std::string& name);

/// Queries the fields at every voxel center. Time-dependent kinds need t.
/// Output is bitwise identical for every worker count.
template <typename Real>
VolumeImage extract_volume(const FieldSet<Real>& fields, const Aabb& box, const Lattice& lattice,
                           VolumeKind kind, std::optional<double> t = std::nullopt,
                           Exec exec = Exec::Parallel);

/// Mean of extract_volume(kind, t_i) over the timestamps, accumulated in
/// double in ascending timestamp order.
template <typename Real>
VolumeImage average_volume(const FieldSet<Real>& fields, const Aabb& box, const Lattice& lattice,
                           std::span<const double> timestamps, VolumeKind kind = VolumeKind::MuC,
                           Exec exec = Exec::Parallel);

/// fraction * (percentile-th percentile of the voxel values).
double default_iso_level(const VolumeImage& volume, double fraction = 0.5, double percentile = 99.9);

extern template VolumeImage extract_volume<float>(const FieldSet<float>&, const Aabb&, const Lattice&,
                                                  VolumeKind, std::optional<double>, Exec);
extern template VolumeImage extract_volume<double>(const FieldSet<double>&, const Aabb&,
                                                   const Lattice&, VolumeKind,
                                                   std::optional<double>, Exec);
extern template VolumeImage average_volume<float>(const FieldSet<float>&, const Aabb&, const Lattice&,
                                                  std::span<const double>, VolumeKind, Exec);
extern template VolumeImage average_volume<double>(const FieldSet<double>&, const Aabb&,
                                                   const Lattice&, std::span<const double>,
                                                   VolumeKind, Exec);

}  // namespace dsa4d
