#include <omp.h>

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <utility>

#include "dsa4d/mesh.hpp"

namespace dsa4d {

namespace {

#include "mc_tables.inc"

// Corner offsets and edge endpoints in the table's vertex order.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

struct VertexKey {
  std::uint64_t key;
  Vec3 pos;
};

}  // namespace

double TriMesh::triangle_area(std::size_t i) const {
  const auto& t = triangles[i];
  return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

double TriMesh::area() const {
  double a = 0.0;
  for (std::size_t i = 0; i < triangles.size(); ++i) a += triangle_area(i);
  return a;
}

void TriMesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& t : triangles) {
    for (int v : t) {
      if (v < 0 || v >= n) throw std::invalid_argument("mesh: triangle index out of range");
    }
  }
}

void remove_degenerate(TriMesh& mesh, double min_area) {
  std::vector<std::array<int, 3>> kept;
  kept.reserve(mesh.triangles.size());
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    if (mesh.triangle_area(i) <= min_area) continue;
    kept.push_back(t);
  }
  std::vector<int> remap(mesh.vertices.size(), -1);
  std::vector<Vec3> verts;
  for (auto& t : kept) {
    for (int& v : t) {
      if (remap[v] < 0) {
        remap[v] = static_cast<int>(verts.size());
        verts.push_back(mesh.vertices[v]);
      }
      v = remap[v];
    }
  }
  mesh.vertices = std::move(verts);
  mesh.triangles = std::move(kept);
}

TriMesh marching_cubes(const VolumeImage& volume, double iso, Exec exec) {
  const Lattice& L = volume.lattice;
  TriMesh mesh;
  if (L.nx < 2 || L.ny < 2 || L.nz < 2) return mesh;
  const auto [mn, mx] = std::minmax_element(volume.values.begin(), volume.values.end());
  if (!(iso > *mn && iso <= *mx)) return mesh;

  const std::uint64_t nodes = L.size();
  // Vertex keys: 3 * node + axis for an interior edge crossing, 3 * nodes + node
  // when the crossing lands exactly on a lattice node.
  auto crossing = [&](int i, int j, int k, int a, int b) -> VertexKey {
    int pa[3] = {i + kCorner[a][0], j + kCorner[a][1], k + kCorner[a][2]};
    int pb[3] = {i + kCorner[b][0], j + kCorner[b][1], k + kCorner[b][2]};
    if (pb[0] + pb[1] + pb[2] < pa[0] + pa[1] + pa[2]) std::swap(pa, pb);
    const int axis = pb[0] != pa[0] ? 0 : (pb[1] != pa[1] ? 1 : 2);
    const std::uint64_t na = L.index(pa[0], pa[1], pa[2]);
    const std::uint64_t nb = L.index(pb[0], pb[1], pb[2]);
    const double va = volume.values[na];
    const double vb = volume.values[nb];
    const double t = std::clamp((iso - va) / (vb - va), 0.0, 1.0);
    const Vec3 xa = L.center(pa[0], pa[1], pa[2]);
    const Vec3 xb = L.center(pb[0], pb[1], pb[2]);
    if (t == 0.0) return {3 * nodes + na, xa};
    if (t == 1.0) return {3 * nodes + nb, xb};
    return {3 * na + static_cast<std::uint64_t>(axis), xa + t * (xb - xa)};
  };

  const int slabs = L.nz - 1;
  std::vector<std::vector<std::array<VertexKey, 3>>> per_slab(slabs);
  auto slab_kernel = [&](int k) {
    auto& out = per_slab[k];
    for (int j = 0; j + 1 < L.ny; ++j) {
      for (int i = 0; i + 1 < L.nx; ++i) {
        int mask = 0;
        for (int c = 0; c < 8; ++c) {
          const double v = volume.values[L.index(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2])];
          if (v < iso) mask |= 1 << c;
        }
        if (mask == 0 || mask == 255) continue;
        const int* tri = kTriTable[mask];
        for (int e = 0; tri[e] >= 0; e += 3) {
          std::array<VertexKey, 3> t;
          for (int q = 0; q < 3; ++q) {
            const int edge = tri[e + q];
            t[q] = crossing(i, j, k, kEdge[edge][0], kEdge[edge][1]);
          }
          out.push_back(t);
        }
      }
    }
  };
  if (exec == Exec::Serial) {
    for (int k = 0; k < slabs; ++k) slab_kernel(k);
  } else {
#pragma omp parallel for schedule(dynamic, 1)
    for (int k = 0; k < slabs; ++k) slab_kernel(k);
  }

  std::vector<VertexKey> keys;
  for (const auto& s : per_slab) {
    for (const auto& t : s) keys.insert(keys.end(), t.begin(), t.end());
  }
  std::sort(keys.begin(), keys.end(), [](const VertexKey& a, const VertexKey& b) { return a.key < b.key; });
  keys.erase(std::unique(keys.begin(), keys.end(),
                         [](const VertexKey& a, const VertexKey& b) { return a.key == b.key; }),
             keys.end());
  mesh.vertices.reserve(keys.size());
  for (const VertexKey& v : keys) mesh.vertices.push_back(v.pos);
  auto lookup = [&](std::uint64_t key) {
    const auto it = std::lower_bound(keys.begin(), keys.end(), key,
                                     [](const VertexKey& a, std::uint64_t k) { return a.key < k; });
    return static_cast<int>(it - keys.begin());
  };
  for (const auto& s : per_slab) {
    for (const auto& t : s) mesh.triangles.push_back({lookup(t[0].key), lookup(t[1].key), lookup(t[2].key)});
  }
  remove_degenerate(mesh);
  return mesh;
}

MeshTopology mesh_topology(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> edge_use;
  std::vector<char> used(mesh.vertices.size(), 0);
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      const int a = t[e];
      const int b = t[(e + 1) % 3];
      ++edge_use[{std::min(a, b), std::max(a, b)}];
      used[a] = 1;
    }
  }
  MeshTopology topo;
  topo.vertices = static_cast<std::size_t>(std::count(used.begin(), used.end(), 1));
  topo.faces = mesh.triangles.size();
  topo.edges = edge_use.size();
  for (const auto& [_, n] : edge_use) {
    if (n == 1) ++topo.boundary_edges;
    if (n > 2) ++topo.nonmanifold_edges;
  }
  return topo;
}

}  // namespace dsa4d
