// Triangle meshes and marching-cubes isosurface extraction.
#pragma once

#include <array>
#include <vector>

#include "dsa4d/geometry.hpp"
#include "dsa4d/parallel.hpp"
#include "dsa4d/volume.hpp"

namespace dsa4d {

struct TriMesh {
  std::vector<Vec3> vertices;                 // world mm
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  double area() const;
  double triangle_area(std::size_t i) const;
  /// Throws std::invalid_argument on out-of-range indices.
  void validate() const;
};

/// Drops triangles with area <= min_area and vertices no triangle uses.
void remove_degenerate(TriMesh& mesh, double min_area = 1e-12);

/// Standard 256-case marching cubes. The surface separates voxels with
/// value >= iso from those below it; a constant volume yields an empty mesh.
/// Vertices shared between cells (and between parallel z-slabs) are merged by
/// lattice edge, so the output is identical for every worker count.
TriMesh marching_cubes(const VolumeImage& volume, double iso, Exec exec = Exec::Parallel);

struct MeshTopology {
  std::size_t vertices = 0;
  std::size_t edges = 0;
  std::size_t faces = 0;
  std::size_t boundary_edges = 0;     // used by one triangle
  std::size_t nonmanifold_edges = 0;  // used by more than two
  long euler() const {
    return static_cast<long>(vertices) - static_cast<long>(edges) + static_cast<long>(faces);
  }
  bool closed() const { return boundary_edges == 0 && nonmanifold_edges == 0; }
};

MeshTopology mesh_topology(const TriMesh& mesh);

}  // namespace dsa4d
