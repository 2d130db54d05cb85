// Image metrics (PSNR, SSIM) and surface metrics (Chamfer, Hausdorff).
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsa4d/dataset_io.hpp"
#include "dsa4d/mesh.hpp"

namespace dsa4d {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(range^2 / MSE), capped at kPsnrCap (also returned for MSE == 0).
double psnr(std::span<const float> pred, std::span<const float> target, double data_range);
double psnr(const ProjectionImage& pred, const ProjectionImage& target, double data_range);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Single-scale SSIM averaged over all fully contained windows.
double ssim(const ProjectionImage& pred, const ProjectionImage& target, double data_range,
            const SsimOptions& opts = {});

/// Area-weighted uniform points on the mesh surface.
std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t count, std::uint64_t seed);

/// Static 3-d tree for nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);
  /// Distance to the nearest stored point.
  double nearest_distance(const Vec3& q) const;
  std::size_t size() const { return pts_.size(); }

 private:
  struct Node {
    int lo, hi;  // range in pts_
    int left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
  };
  int build(int lo, int hi, int depth);
  void search(int node, const Vec3& q, double& best) const;

  std::vector<Vec3> pts_;
  std::vector<Node> nodes_;
};

/// Per-point distance from each a to the nearest point of b.
std::vector<double> directed_distances(std::span<const Vec3> a, std::span<const Vec3> b);

struct SurfaceDistance {
  double chamfer = 0.0;    // 0.5 * (mean a->b + mean b->a)
  double hausdorff = 0.0;  // max(max a->b, max b->a)
  double mean_ab = 0.0;
  double mean_ba = 0.0;
  double max_ab = 0.0;
  double max_ba = 0.0;
};

SurfaceDistance point_set_distance(std::span<const Vec3> a, std::span<const Vec3> b);

/// Both meshes are sampled with the same seed, so the result is symmetric in its arguments.
SurfaceDistance surface_distance(const TriMesh& a, const TriMesh& b, std::size_t samples_per_mesh,
                                 std::uint64_t seed = 1);
double chamfer(const TriMesh& a, const TriMesh& b, std::size_t samples_per_mesh = 100000,
               std::uint64_t seed = 1);
double hausdorff(const TriMesh& a, const TriMesh& b, std::size_t samples_per_mesh = 100000,
                 std::uint64_t seed = 1);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // N - 1 denominator; 0 for a single value
};
MeanStd mean_std(std::span<const double> values);

/// Per-item metric rows with mean and std per column.
struct MetricReport {
  std::vector<std::string> columns;
  std::vector<std::string> items;
  std::vector<std::vector<double>> values;  // values[item][column]
  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& item, std::vector<double> row);
  MeanStd summary(std::size_t column) const;
  void write_csv(const std::filesystem::path& path) const;
  /// Aligned text: one line per column, "name  mean±std".
  std::string table() const;
};

}  // namespace dsa4d
