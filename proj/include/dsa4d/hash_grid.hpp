// Multi-resolution hash-grid feature encoder for 3D (x) and 4D (x, t) inputs.
//
// Level l has resolution N_l = floor(N_min * b^l) along every axis, including
// time for the 4D variant. Coarse levels whose (N_l + 1)^dims vertices fit in
// the table are indexed densely (row-major, first axis fastest); finer levels
// use the XOR-of-primes spatial hash modulo the table size. Encoding a point
// interpolates the 2^dims surrounding vertex rows at each level and
// concatenates all L levels. Levels at or above active_levels() produce
// zeros and receive no gradient.
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dsa4d {

struct HashGridConfig {
  int dims = 3;
  int levels = 12;
  int feat_dim = 8;
  int log2_table_size = 19;
  int base_res = 8;
  double growth = 1.45;

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;
  std::uint32_t table_size() const { return std::uint32_t{1} << log2_table_size; }
  int output_dim() const { return levels * feat_dim; }

  static HashGridConfig spatial_default() { return {}; }
  static HashGridConfig temporal_default() { return {4, 12, 8, 19, 2, 1.4}; }
};

/// floor(base_res * growth^level).
int level_resolution(const HashGridConfig& cfg, int level);

struct ProgressiveSchedule {
  int initial_levels = 4;
  int unlock_every = 2500;
};

/// min(levels, initial + floor(iteration / unlock_every)).
int active_levels_at(int iteration, const ProgressiveSchedule& schedule, int levels);

inline constexpr std::array<std::uint32_t, 4> kHashPrimes = {1u, 2654435761u, 805459861u,
                                                             3674653429u};

/// How backward passes add into a shared gradient buffer.
///  PerWorker: caller passes a private buffer per worker and merges by sum
///             (bitwise deterministic for a fixed partition).
///  Atomic:    all workers add into one buffer with atomic adds; summation
///             order, and therefore the low bits, vary run to run.
enum class GradAccumulation { PerWorker, Atomic };

template <typename Real>
class HashGrid {
 public:
  HashGrid() = default;
  explicit HashGrid(const HashGridConfig& cfg);

  const HashGridConfig& config() const { return cfg_; }
  int output_dim() const { return cfg_.output_dim(); }
  int resolution(int level) const { return res_[level]; }
  bool is_dense(int level) const { return dense_[level]; }
  std::uint32_t level_entries(int level) const { return entries_[level]; }
  std::size_t level_offset(int level) const { return offset_[level]; }  // in entries
  std::size_t num_entries() const { return offset_.back(); }
  std::size_t num_params() const { return params_.size(); }

  int active_levels() const { return active_; }
  void set_active_levels(int n);
  /// Applies the progressive schedule for this iteration and returns the new count.
  int set_active_levels(int iteration, const ProgressiveSchedule& schedule);

  std::span<Real> params() { return params_; }
  std::span<const Real> params() const { return params_; }
  std::span<Real> grads() { return grads_; }
  std::span<const Real> grads() const { return grads_; }
  /// Feature row of entry `index` at `level`.
  std::span<Real> row(int level, std::uint32_t index);
  std::span<const Real> row(int level, std::uint32_t index) const;

  /// Uniform in [-scale, scale].
  void init_uniform(std::mt19937_64& rng, Real scale = Real(1e-4));

  /// Table index of an integer lattice vertex at a level.
  std::uint32_t cell_index(int level, std::span<const std::uint32_t> coords) const;

  /// Features for one point; u is clamped to [0,1]^dims. out has output_dim() entries.
  void encode(std::span<const Real> u, std::span<Real> out) const;
  /// Column-major batch: u is dims x n, out is output_dim() x n.
  void encode_batch(const Real* u, int n, Real* out) const;

  /// Adds dL/d(table) into grad_dest given dL/d(features) for one point.
  void backward(std::span<const Real> u, std::span<const Real> dfeat, std::span<Real> grad_dest,
                GradAccumulation mode = GradAccumulation::PerWorker) const;
  void backward_batch(const Real* u, int n, const Real* dfeat, std::span<Real> grad_dest,
                      GradAccumulation mode = GradAccumulation::PerWorker) const;

  struct Corner {
    std::size_t entry;  // global entry (level offset + table index)
    Real weight;
  };
  /// The 2^dims (entry, weight) pairs used at a level; exposed for tests.
  std::vector<Corner> corners(int level, std::span<const Real> u) const;

  void zero_grads();

 private:
  template <int D>
  void encode_impl(const Real* u, int n, Real* out) const;
  template <int D, bool Atomic>
  void backward_impl(const Real* u, int n, const Real* dfeat, Real* grad) const;

  HashGridConfig cfg_;
  std::vector<int> res_;
  std::vector<bool> dense_;
  std::vector<std::uint32_t> entries_;
  std::vector<std::size_t> offset_;
  int active_ = 0;
  std::vector<Real> params_;
  std::vector<Real> grads_;
};

extern template class HashGrid<float>;
extern template class HashGrid<double>;

}  // namespace dsa4d
