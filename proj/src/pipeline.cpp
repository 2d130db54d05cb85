#include "dsa4d/pipeline.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include "dsa4d/errors.hpp"

namespace dsa4d {

std::pair<std::vector<int>, std::vector<int>> split_views(int num_frames, int views) {
  if (num_frames < 1) throw ConfigError("split: num_frames must be positive");
  if (views < 1 || views > num_frames) throw ConfigError("split: views must be in [1, num_frames]");
  std::vector<char> is_train(num_frames + 1, 0);
  std::vector<int> train, test;
  for (int k = 0; k < views; ++k) {
    const int idx = 1 + static_cast<int>((static_cast<long>(k) * num_frames) / views);
    is_train[idx] = 1;
    train.push_back(idx);
  }
  for (int i = 1; i <= num_frames; ++i) {
    if (!is_train[i]) test.push_back(i);
  }
  return {train, test};
}

template <typename Real>
MetricReport evaluate_views(const FieldSet<Real>& fields, const Dataset& test_set,
                            const QuadratureConfig& quad, Exec exec,
                            std::vector<ProjectionImage>* renders) {
  if (test_set.images.empty()) throw DataError("evaluate: empty test set");
  float lo = std::numeric_limits<float>::infinity();
  float hi = -lo;
  for (const auto& img : test_set.images) {
    const auto [a, b] = std::minmax_element(img.values.begin(), img.values.end());
    lo = std::min(lo, *a);
    hi = std::max(hi, *b);
  }
  const double range = hi > lo ? static_cast<double>(hi) - lo : 1.0;
  MetricReport report;
  report.columns = {"psnr_db", "ssim"};
  report.meta["data_range"] = range;
  report.meta["data_range_rule"] = "max - min over all target pixels of the test set";
  report.meta["samples_per_ray"] = quad.samples_per_ray;
  report.meta["jitter"] = quad.jitter;
  report.meta["views"] = test_set.images.size();
  const ScanGeometry& g = test_set.manifest.geometry;
  for (std::size_t i = 0; i < test_set.images.size(); ++i) {
    const FrameRecord& f = test_set.manifest.frames[i];
    const FramePose pose = pose_for_frame(g, f.index);
    ProjectionImage pred = render_image(fields, g, pose, f.t_norm, Integrand::MuC, quad, exec);
    report.add("frame_" + std::to_string(f.index),
               {psnr(pred, test_set.images[i], range), ssim(pred, test_set.images[i], range)});
    if (renders) renders->push_back(std::move(pred));
  }
  return report;
}

template <typename Real>
VesselMesh vessel_mesh(const FieldSet<Real>& fields, const Aabb& box, const Lattice& lattice,
                       std::span<const double> timestamps, std::optional<double> iso,
                       double iso_fraction, Exec exec) {
  VesselMesh out;
  out.mean_mu_c = average_volume(fields, box, lattice, timestamps, VolumeKind::MuC, exec);
  out.iso = iso ? *iso : default_iso_level(out.mean_mu_c, iso_fraction);
  out.mesh = marching_cubes(out.mean_mu_c, out.iso, exec);
  return out;
}

SurfaceDistance phantom_surface_distance(const TriMesh& mesh, const PhantomScene& scene,
                                         std::size_t samples, std::uint64_t seed) {
  if (mesh.empty()) throw std::invalid_argument("phantom surface distance: empty mesh");
  const std::vector<Vec3> a = sample_surface(mesh, samples, seed);
  const std::vector<Vec3> b = sample_vessel_surface(scene, samples, seed);
  return point_set_distance(a, b);
}

template MetricReport evaluate_views<float>(const FieldSet<float>&, const Dataset&,
                                            const QuadratureConfig&, Exec,
                                            std::vector<ProjectionImage>*);
template MetricReport evaluate_views<double>(const FieldSet<double>&, const Dataset&,
                                             const QuadratureConfig&, Exec,
                                             std::vector<ProjectionImage>*);
template VesselMesh vessel_mesh<float>(const FieldSet<float>&, const Aabb&, const Lattice&,
                                       std::span<const double>, std::optional<double>, double, Exec);
template VesselMesh vessel_mesh<double>(const FieldSet<double>&, const Aabb&, const Lattice&,
                                        std::span<const double>, std::optional<double>, double,
                                        Exec);

}  // namespace dsa4d
