// Scalar volumes sampled on a regular isotropic lattice.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dsa4d/geometry.hpp"

namespace dsa4d {

struct Lattice {
  int nx = 0;
  int ny = 0;
  int nz = 0;
  double voxel_mm = 1.0;
  Vec3 origin = Vec3::Zero();  // world position of the center of voxel (0,0,0)

  /// Lattice of n voxels along the longest box axis, covering the box.
  static Lattice covering(const Aabb& box, int n);

  std::size_t size() const { return static_cast<std::size_t>(nx) * ny * nz; }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * ny + j) * nx + i;
  }
  Vec3 center(int i, int j, int k) const { return origin + voxel_mm * Vec3(i, j, k); }
};

struct VolumeImage {
  Lattice lattice;
  std::vector<float> values;  // x fastest, then y, then z
  std::string kind;
  double t_norm = -1.0;  // negative when the volume is time-independent

  VolumeImage() = default;
  explicit VolumeImage(const Lattice& l, std::string k = {}, double t = -1.0)
      : lattice(l), values(l.size(), 0.0f), kind(std::move(k)), t_norm(t) {}

  float& at(int i, int j, int k) { return values[lattice.index(i, j, k)]; }
  float at(int i, int j, int k) const { return values[lattice.index(i, j, k)]; }
};

}  // namespace dsa4d
