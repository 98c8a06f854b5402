#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "plex/core/random.hpp"
#include "plex/tensor/ops.hpp"

namespace plex::nn {

using tensor::Shape;
using tensor::Tensor;

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// Handles alias the module's storage, so edits through the list reach the model.
template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// Values are drawn in double so float and double models built from one seed agree.
template <typename T>
Tensor<T> normal_param(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(tensor::numel_of(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(values), true);
}

template <typename T>
Tensor<T> zero_param(Shape shape) {
  return Tensor<T>::zeros(std::move(shape), true);
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, double init_std, Rng& rng, double bias_std = 0.0)
      : weight(normal_param<T>({in, out}, init_std, rng)),
        bias(bias_std > 0.0 ? normal_param<T>({out}, bias_std, rng) : zero_param<T>({out})) {}

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x) const { return tensor::linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  T eps = static_cast<T>(1e-5);

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width)
      : gamma(Tensor<T>::filled({width}, T{1}, true)), beta(zero_param<T>({width})) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return tensor::layer_norm(x, gamma, beta, eps); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

template <typename T>
std::size_t count_params(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace plex::nn
