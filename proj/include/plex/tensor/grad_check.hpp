#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "plex/tensor/tensor.hpp"

namespace plex::tensor {

struct GradCheckResult {
  double max_rel_error = 0.0;
  // location and values of the worst element
  std::size_t param = 0;
  std::size_t element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using ScalarFn = std::function<Tensor<double>()>;

// Compares `analytic` (one gradient vector per parameter) against central differences
// of `f`. Relative error is |analytic - numeric| / max(|numeric|, abs_floor).
inline GradCheckResult compare_gradients(const ScalarFn& f, std::vector<Tensor<double>>& params,
                                         const std::vector<std::vector<double>>& analytic, double eps = 1e-5,
                                         double abs_floor = 1e-4) {
  GradCheckResult worst;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / std::max(std::abs(numeric), abs_floor);
      if (rel > worst.max_rel_error || (p == 0 && i == 0)) {
        worst = {rel, p, i, a, numeric};
      }
    }
  }
  return worst;
}

// Gradients of f with respect to params via one recorded backward pass.
inline std::vector<std::vector<double>> autograd_gradients(const ScalarFn& f, std::vector<Tensor<double>>& params) {
  for (auto& p : params) p.zero_grad();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    Tensor<double> loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(p.grad());
  return grads;
}

// Worst relative error between autograd and central differences. f must be
// deterministic and read params by reference.
inline GradCheckResult grad_check(const ScalarFn& f, std::vector<Tensor<double>>& params, double eps = 1e-5,
                                  double abs_floor = 1e-4) {
  auto analytic = autograd_gradients(f, params);
  return compare_gradients(f, params, analytic, eps, abs_floor);
}

}  // namespace plex::tensor
