#pragma once

#include <cmath>
#include <random>

#include "plex/model/plex_model.hpp"
#include "plex/model/random_trajectory.hpp"

namespace plex::testing {

using model::random_trajectory;

template <typename T>
double sum_abs_grad(const nn::ParamList<T>& params) {
  double total = 0;
  for (const auto& p : params) {
    for (T g : p.tensor.grad()) total += std::abs(static_cast<double>(g));
  }
  return total;
}

template <typename T>
void zero_grads(const nn::ParamList<T>& params) {
  for (auto p : params) p.tensor.zero_grad();
}

template <typename T>
std::vector<tensor::Tensor<T>> tensors_of(const nn::ParamList<T>& params) {
  std::vector<tensor::Tensor<T>> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

// Differentiates loss() once on a fresh tape.
template <typename T, typename F>
void run_backward(F&& loss) {
  tensor::Tape<T> tape;
  tensor::TapeScope<T> scope(tape);
  tape.backward(loss());
}

}  // namespace plex::testing
