#include "dsa4d/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dsa4d {

void MlpConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("mlp: " + m); };
  if (in_dim < 1 || hidden_dim < 1 || out_dim < 1) fail("dimensions must be positive");
  if (num_layers < 2) fail("num_layers must be >= 2");
}

template <typename Real>
Mlp<Real>::Mlp(const MlpConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::size_t off = 0;
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const int fan_in = l == 0 ? cfg_.in_dim : cfg_.hidden_dim;
    const int fan_out = l == cfg_.num_layers - 1 ? cfg_.out_dim : cfg_.hidden_dim;
    shape_.emplace_back(fan_in, fan_out);
    woff_.push_back(off);
    off += static_cast<std::size_t>(fan_in) * fan_out;
    boff_.push_back(off);
    if (cfg_.use_bias) off += fan_out;
  }
  params_.assign(off, Real(0));
  grads_.assign(off, Real(0));
}

template <typename Real>
Eigen::Map<Matrix<Real>> Mlp<Real>::weight(int l) {
  return {params_.data() + woff_[l], shape_[l].second, shape_[l].first};
}

template <typename Real>
Eigen::Map<const Matrix<Real>> Mlp<Real>::weight(int l) const {
  return {params_.data() + woff_[l], shape_[l].second, shape_[l].first};
}

template <typename Real>
Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>> Mlp<Real>::bias(int l) {
  return {params_.data() + boff_[l], cfg_.use_bias ? shape_[l].second : 0};
}

template <typename Real>
Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> Mlp<Real>::bias(int l) const {
  return {params_.data() + boff_[l], cfg_.use_bias ? shape_[l].second : 0};
}

template <typename Real>
void Mlp<Real>::init_kaiming(std::mt19937_64& rng, Real final_scale) {
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const double bound = std::sqrt(6.0 / shape_[l].first);
    std::uniform_real_distribution<double> dist(-bound, bound);
    const double scale = l == cfg_.num_layers - 1 ? static_cast<double>(final_scale) : 1.0;
    auto w = weight(l);
    // Column-major fill keeps the draw order independent of Eigen internals.
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<Real>(scale * dist(rng));
    }
    bias(l).setZero();
  }
}

template <typename Real>
void Mlp<Real>::forward(MlpCache<Real>& cache) const {
  if (cache.input.rows() != cfg_.in_dim) {
    throw std::invalid_argument("mlp forward: expected " + std::to_string(cfg_.in_dim) +
                                " input features, got " + std::to_string(cache.input.rows()));
  }
  const Eigen::Index n = cache.input.cols();
  cache.hidden.resize(cfg_.num_layers - 1);
  const Matrix<Real>* prev = &cache.input;
  for (int l = 0; l < cfg_.num_layers - 1; ++l) {
    Matrix<Real>& h = cache.hidden[l];
    h.resize(shape_[l].second, n);
    h.noalias() = weight(l) * (*prev);
    if (cfg_.use_bias) h.colwise() += bias(l);
    h = h.cwiseMax(Real(0));
    prev = &h;
  }
  const int last = cfg_.num_layers - 1;
  cache.output.resize(cfg_.out_dim, n);
  cache.output.noalias() = weight(last) * (*prev);
  if (cfg_.use_bias) cache.output.colwise() += bias(last);
  if (cfg_.output == OutputActivation::ReLU) {
    cache.output = cache.output.cwiseMax(Real(0));
  } else if (cfg_.output == OutputActivation::Softplus) {
    cache.output = cache.output.unaryExpr([](Real z) {
      return z > Real(20) ? z : std::log1p(std::exp(z));
    });
  } else {
    cache.output = cache.output.unaryExpr([](Real z) { return Real(1) / (Real(1) + std::exp(-z)); });
  }
  cache.valid = true;
}

template <typename Real>
Real Mlp<Real>::forward_one(std::span<const Real> features) const {
  MlpCache<Real> cache;
  cache.input = Eigen::Map<const Matrix<Real>>(features.data(),
                                               static_cast<Eigen::Index>(features.size()), 1);
  forward(cache);
  return cache.output(0, 0);
}

template <typename Real>
void Mlp<Real>::backward(const MlpCache<Real>& cache, const Matrix<Real>& doutput,
                         std::span<Real> grad_dest, Matrix<Real>* dinput) const {
  if (!cache.valid) throw std::logic_error("mlp backward: no forward cache");
  const Eigen::Index n = cache.input.cols();
  if (doutput.rows() != cfg_.out_dim || doutput.cols() != n) {
    throw std::logic_error("mlp backward: upstream gradient does not match the cached batch");
  }
  if (grad_dest.size() != params_.size()) {
    throw std::invalid_argument("mlp backward: gradient buffer size mismatch");
  }
  Matrix<Real> delta;
  if (cfg_.output == OutputActivation::ReLU) {
    // Subgradient at 0 is 0.
    delta = doutput.cwiseProduct(
        cache.output.unaryExpr([](Real y) { return y > Real(0) ? Real(1) : Real(0); }));
  } else if (cfg_.output == OutputActivation::Softplus) {
    // d softplus / dz = 1 - exp(-y).
    delta = doutput.cwiseProduct(cache.output.unaryExpr([](Real y) { return -std::expm1(-y); }));
  } else {
    delta = doutput.cwiseProduct(
        cache.output.unaryExpr([](Real y) { return y * (Real(1) - y); }));
  }
  for (int l = cfg_.num_layers - 1; l >= 0; --l) {
    const Matrix<Real>& in = l == 0 ? cache.input : cache.hidden[l - 1];
    Eigen::Map<Matrix<Real>> gw(grad_dest.data() + woff_[l], shape_[l].second, shape_[l].first);
    Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>> gb(grad_dest.data() + boff_[l],
                                                          cfg_.use_bias ? shape_[l].second : 0);
    gw.noalias() += delta * in.transpose();
    if (cfg_.use_bias) gb += delta.rowwise().sum();
    if (l == 0) {
      if (dinput) dinput->noalias() = weight(0).transpose() * delta;
      break;
    }
    Matrix<Real> up = weight(l).transpose() * delta;
    delta = up.cwiseProduct(in.unaryExpr([](Real a) { return a > Real(0) ? Real(1) : Real(0); }));
  }
}

template <typename Real>
void Mlp<Real>::zero_grads() {
  std::fill(grads_.begin(), grads_.end(), Real(0));
}

double AdamConfig::lr(int iteration) const {
  const int steps = decay_every > 0 ? iteration / decay_every : 0;
  return lr0 * std::pow(decay_factor, steps);
}

template <typename Real>
void adam_step(std::span<Real> params, std::span<Real> grads, AdamState<Real>& state, int iteration,
               const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  const double t = static_cast<double>(iteration) + 1.0;
  const Real lr = static_cast<Real>(cfg.lr(iteration));
  const Real b1 = static_cast<Real>(cfg.beta1);
  const Real b2 = static_cast<Real>(cfg.beta2);
  const Real c1 = static_cast<Real>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const Real c2 = static_cast<Real>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const Real eps = static_cast<Real>(cfg.eps);
  Real* p = params.data();
  Real* g = grads.data();
  Real* m = state.m.data();
  Real* v = state.v.data();
  const std::size_t n = params.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const Real gi = g[i];
    m[i] = b1 * m[i] + (Real(1) - b1) * gi;
    v[i] = b2 * v[i] + (Real(1) - b2) * gi * gi;
    p[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    g[i] = Real(0);
  }
}

template class Mlp<float>;
template class Mlp<double>;
template void adam_step<float>(std::span<float>, std::span<float>, AdamState<float>&, int,
                               const AdamConfig&);
template void adam_step<double>(std::span<double>, std::span<double>, AdamState<double>&, int,
                                const AdamConfig&);

}  // namespace dsa4d
