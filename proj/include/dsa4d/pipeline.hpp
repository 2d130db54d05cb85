// End-to-end helpers shared by the command-line tool and the acceptance suite.
#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dsa4d/dataset_io.hpp"
#include "dsa4d/fields.hpp"
#include "dsa4d/metrics.hpp"
#include "dsa4d/phantom.hpp"
#include "dsa4d/reconstructor.hpp"
#include "dsa4d/renderer.hpp"

namespace dsa4d {

/// Evenly spaced training views (1-based frame indices) and the complementary test frames.
std::pair<std::vector<int>, std::vector<int>> split_views(int num_frames, int views);

/// PSNR/SSIM of full renderings against every frame of a dataset. The data
/// range is max - min over all target pixels of the set (recorded in meta).
template <typename Real>
MetricReport evaluate_views(const FieldSet<Real>& fields, const Dataset& test_set,
                            const QuadratureConfig& quad, Exec exec = Exec::Parallel,
                            std::vector<ProjectionImage>* renders = nullptr);

struct VesselMesh {
  VolumeImage mean_mu_c;
  double iso = 0.0;
  TriMesh mesh;
};

/// Averaged reconstruction over the timestamps, iso level (explicit or the
/// default fraction of the 99.9th percentile) and its marching-cubes mesh.
template <typename Real>
VesselMesh vessel_mesh(const FieldSet<Real>& fields, const Aabb& box, const Lattice& lattice,
                       std::span<const double> timestamps, std::optional<double> iso = std::nullopt,
                       double iso_fraction = 0.5, Exec exec = Exec::Parallel);

/// Surface distance between a mesh and the analytic vessel surface of a scene.
SurfaceDistance phantom_surface_distance(const TriMesh& mesh, const PhantomScene& scene,
                                         std::size_t samples, std::uint64_t seed = 1);

}  // namespace dsa4d
