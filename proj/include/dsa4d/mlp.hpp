// Small fully-connected decoders with explicit forward/backward and Adam.
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace dsa4d {

enum class OutputActivation { ReLU, Sigmoid, Softplus };

/// num_layers counts weight matrices: 3 means in -> hidden -> hidden -> out.
struct MlpConfig {
  int in_dim = 96;
  int hidden_dim = 128;
  int out_dim = 1;
  int num_layers = 3;
  OutputActivation output = OutputActivation::ReLU;
  bool use_bias = true;  // false: bias vectors have length 0

  void validate() const;
};

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

/// Activations kept by a batched forward pass for the matching backward.
/// The caller fills `input` (in_dim x n, one column per sample) before forward.
template <typename Real>
struct MlpCache {
  Matrix<Real> input;
  std::vector<Matrix<Real>> hidden;  // post-activation outputs of hidden layers
  Matrix<Real> output;               // out_dim x n, after output activation
  bool valid = false;
};

template <typename Real>
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(const MlpConfig& cfg);

  const MlpConfig& config() const { return cfg_; }
  std::size_t num_params() const { return params_.size(); }
  std::span<Real> params() { return params_; }
  std::span<const Real> params() const { return params_; }
  std::span<Real> grads() { return grads_; }
  std::span<const Real> grads() const { return grads_; }

  int layer_in(int l) const { return shape_[l].first; }
  int layer_out(int l) const { return shape_[l].second; }
  /// Column-major views into the flat parameter vector.
  Eigen::Map<Matrix<Real>> weight(int l);
  Eigen::Map<const Matrix<Real>> weight(int l) const;
  Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>> bias(int l);
  Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> bias(int l) const;
  std::size_t weight_offset(int l) const { return woff_[l]; }
  std::size_t bias_offset(int l) const { return boff_[l]; }

  /// Kaiming-uniform (fan-in) weights, zero biases, final layer scaled by final_scale.
  void init_kaiming(std::mt19937_64& rng, Real final_scale = Real(0.1));

  /// Batched forward over cache.input; fills hidden/output and marks the cache valid.
  void forward(MlpCache<Real>& cache) const;
  /// Single-sample convenience wrapper.
  Real forward_one(std::span<const Real> features) const;

  /// Accumulates parameter gradients into grad_dest (size num_params()) given
  /// dL/d(output) (out_dim x n). Writes dL/d(input) into dinput when non-null.
  /// Throws std::logic_error if the cache was not produced by forward.
  void backward(const MlpCache<Real>& cache, const Matrix<Real>& doutput, std::span<Real> grad_dest,
                Matrix<Real>* dinput) const;

  void zero_grads();

 private:
  MlpConfig cfg_;
  std::vector<std::pair<int, int>> shape_;  // (fan_in, fan_out)
  std::vector<std::size_t> woff_, boff_;
  std::vector<Real> params_;
  std::vector<Real> grads_;
};

struct AdamConfig {
  double lr0 = 7.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay_factor = 0.9;
  int decay_every = 5000;

  /// lr0 * decay_factor^floor(iteration / decay_every).
  double lr(int iteration) const;
};

template <typename Real>
struct AdamState {
  std::vector<Real> m;
  std::vector<Real> v;

  explicit AdamState(std::size_t n = 0) : m(n, Real(0)), v(n, Real(0)) {}
};

/// One bias-corrected Adam update at 0-based `iteration`; zeroes grads afterwards.
template <typename Real>
void adam_step(std::span<Real> params, std::span<Real> grads, AdamState<Real>& state, int iteration,
               const AdamConfig& cfg);

extern template class Mlp<float>;
extern template class Mlp<double>;

}  // namespace dsa4d
