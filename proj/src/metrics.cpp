#include "dsa4d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dsa4d/errors.hpp"

namespace dsa4d {

double psnr(std::span<const float> pred, std::span<const float> target, double data_range) {
  if (pred.size() != target.size()) throw std::invalid_argument("psnr: size mismatch");
  if (pred.empty()) throw std::invalid_argument("psnr: empty images");
  if (!(data_range > 0.0)) throw std::invalid_argument("psnr: data_range must be positive");
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(pred.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

double psnr(const ProjectionImage& pred, const ProjectionImage& target, double data_range) {
  if (pred.cols != target.cols || pred.rows != target.rows) {
    throw std::invalid_argument("psnr: image dimensions differ");
  }
  return psnr(pred.values, target.values, data_range);
}

double ssim(const ProjectionImage& x, const ProjectionImage& y, double data_range,
            const SsimOptions& o) {
  if (x.cols != y.cols || x.rows != y.rows) throw std::invalid_argument("ssim: image dimensions differ");
  if (x.cols < o.window || x.rows < o.window) {
    throw std::invalid_argument("ssim: image smaller than the window");
  }
  if (!(data_range > 0.0)) throw std::invalid_argument("ssim: data_range must be positive");
  const int w = o.window;
  const int half = w / 2;
  std::vector<double> g(w);
  for (int i = 0; i < w; ++i) g[i] = std::exp(-0.5 * (i - half) * (i - half) / (o.sigma * o.sigma));
  const double gs = std::accumulate(g.begin(), g.end(), 0.0);
  for (double& v : g) v /= gs;

  const int cols = x.cols;
  const int rows = x.rows;
  const int oc = cols - w + 1;
  // Separable filtering of x, y, x^2, y^2, xy: horizontal pass then vertical.
  std::vector<double> hx(static_cast<std::size_t>(rows) * oc), hy(hx.size()), hxx(hx.size()),
      hyy(hx.size()), hxy(hx.size());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < oc; ++c) {
      double a = 0, b = 0, aa = 0, bb = 0, ab = 0;
      for (int k = 0; k < w; ++k) {
        const double xv = x.at(c + k, r);
        const double yv = y.at(c + k, r);
        a += g[k] * xv;
        b += g[k] * yv;
        aa += g[k] * xv * xv;
        bb += g[k] * yv * yv;
        ab += g[k] * xv * yv;
      }
      const std::size_t q = static_cast<std::size_t>(r) * oc + c;
      hx[q] = a;
      hy[q] = b;
      hxx[q] = aa;
      hyy[q] = bb;
      hxy[q] = ab;
    }
  }
  const double c1 = (o.k1 * data_range) * (o.k1 * data_range);
  const double c2 = (o.k2 * data_range) * (o.k2 * data_range);
  double total = 0.0;
  const int orow = rows - w + 1;
  for (int r = 0; r < orow; ++r) {
    for (int c = 0; c < oc; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int k = 0; k < w; ++k) {
        const std::size_t q = static_cast<std::size_t>(r + k) * oc + c;
        mx += g[k] * hx[q];
        my += g[k] * hy[q];
        sxx += g[k] * hxx[q];
        syy += g[k] * hyy[q];
        sxy += g[k] * hxy[q];
      }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cxy = sxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  }
  return total / (static_cast<double>(orow) * oc);
}

std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t count, std::uint64_t seed) {
  if (mesh.empty()) throw std::invalid_argument("sample_surface: empty mesh");
  std::vector<double> cdf(mesh.triangles.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < cdf.size(); ++i) {
    acc += mesh.triangle_area(i);
    cdf[i] = acc;
  }
  if (!(acc > 0.0)) throw std::invalid_argument("sample_surface: mesh has zero area");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pts(count);
  for (Vec3& p : pts) {
    const double pick = u(rng) * acc;
    const std::size_t t = std::min<std::size_t>(
        cdf.size() - 1, std::upper_bound(cdf.begin(), cdf.end(), pick) - cdf.begin());
    const auto& tri = mesh.triangles[t];
    const double r1 = std::sqrt(u(rng));
    const double r2 = u(rng);
    p = (1 - r1) * mesh.vertices[tri[0]] + r1 * (1 - r2) * mesh.vertices[tri[1]] +
        r1 * r2 * mesh.vertices[tri[2]];
  }
  return pts;
}

KdTree::KdTree(std::vector<Vec3> points) : pts_(std::move(points)) {
  if (!pts_.empty()) {
    nodes_.reserve(2 * pts_.size() / 8 + 2);
    build(0, static_cast<int>(pts_.size()), 0);
  }
}

int KdTree::build(int lo, int hi, int depth) {
  constexpr int kLeaf = 8;
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({lo, hi});
  if (hi - lo <= kLeaf) return id;
  Vec3 mn = pts_[lo], mx = pts_[lo];
  for (int i = lo + 1; i < hi; ++i) {
    mn = mn.cwiseMin(pts_[i]);
    mx = mx.cwiseMax(pts_[i]);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const int mid = (lo + hi) / 2;
  std::nth_element(pts_.begin() + lo, pts_.begin() + mid, pts_.begin() + hi,
                   [axis](const Vec3& a, const Vec3& b) { return a[axis] < b[axis]; });
  nodes_[id].axis = axis;
  nodes_[id].split = pts_[mid][axis];
  (void)depth;
  const int l = build(lo, mid, depth + 1);
  const int r = build(mid, hi, depth + 1);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

void KdTree::search(int id, const Vec3& q, double& best) const {
  const Node& n = nodes_[id];
  if (n.left < 0) {
    for (int i = n.lo; i < n.hi; ++i) best = std::min(best, (pts_[i] - q).squaredNorm());
    return;
  }
  const double d = q[n.axis] - n.split;
  const int first = d < 0 ? n.left : n.right;
  const int second = d < 0 ? n.right : n.left;
  search(first, q, best);
  if (d * d < best) search(second, q, best);
}

double KdTree::nearest_distance(const Vec3& q) const {
  if (pts_.empty()) throw std::logic_error("kd-tree: empty");
  double best = std::numeric_limits<double>::infinity();
  search(0, q, best);
  return std::sqrt(best);
}

std::vector<double> directed_distances(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("directed_distances: empty point set");
  const KdTree tree(std::vector<Vec3>(b.begin(), b.end()));
  std::vector<double> d(a.size());
  const long n = static_cast<long>(a.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) d[i] = tree.nearest_distance(a[i]);
  return d;
}

SurfaceDistance point_set_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  const std::vector<double> ab = directed_distances(a, b);
  const std::vector<double> ba = directed_distances(b, a);
  SurfaceDistance s;
  s.mean_ab = std::accumulate(ab.begin(), ab.end(), 0.0) / static_cast<double>(ab.size());
  s.mean_ba = std::accumulate(ba.begin(), ba.end(), 0.0) / static_cast<double>(ba.size());
  s.max_ab = *std::max_element(ab.begin(), ab.end());
  s.max_ba = *std::max_element(ba.begin(), ba.end());
  s.chamfer = 0.5 * (s.mean_ab + s.mean_ba);
  s.hausdorff = std::max(s.max_ab, s.max_ba);
  return s;
}

SurfaceDistance surface_distance(const TriMesh& a, const TriMesh& b, std::size_t samples,
                                 std::uint64_t seed) {
  if (a.empty() || b.empty()) throw std::invalid_argument("surface distance: empty mesh");
  const auto pa = sample_surface(a, samples, seed);
  const auto pb = sample_surface(b, samples, seed);
  return point_set_distance(pa, pb);
}

double chamfer(const TriMesh& a, const TriMesh& b, std::size_t samples, std::uint64_t seed) {
  return surface_distance(a, b, samples, seed).chamfer;
}

double hausdorff(const TriMesh& a, const TriMesh& b, std::size_t samples, std::uint64_t seed) {
  return surface_distance(a, b, samples, seed).hausdorff;
}

MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  if (v.empty()) return r;
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

void MetricReport::add(const std::string& item, std::vector<double> row) {
  if (row.size() != columns.size()) throw std::invalid_argument("metric report: row width mismatch");
  items.push_back(item);
  values.push_back(std::move(row));
}

MeanStd MetricReport::summary(std::size_t column) const {
  std::vector<double> col;
  for (const auto& r : values) col.push_back(r.at(column));
  return mean_std(col);
}

void MetricReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(10) << "item";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < items.size(); ++i) {
    out << items[i];
    for (double v : values[i]) out << ',' << v;
    out << '\n';
  }
  out << "mean";
  for (std::size_t c = 0; c < columns.size(); ++c) out << ',' << summary(c).mean;
  out << "\nstd";
  for (std::size_t c = 0; c < columns.size(); ++c) out << ',' << summary(c).std;
  out << '\n';
}

std::string MetricReport::table() const {
  std::size_t width = 6;
  for (const auto& c : columns) width = std::max(width, c.size());
  std::ostringstream s;
  s << std::left << std::setw(static_cast<int>(width)) << "metric" << "  mean±std  (n=" << items.size()
    << ")\n";
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const MeanStd m = summary(c);
    s << std::left << std::setw(static_cast<int>(width)) << columns[c] << "  " << std::fixed
      << std::setprecision(4) << m.mean << "±" << m.std << '\n';
  }
  return s.str();
}

}  // namespace dsa4d
