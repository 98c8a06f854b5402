#include "plex/train/optimizer.hpp"

#include <cmath>

namespace plex::train {

AdamWConfig AdamWConfig::from(const TrainConfig& cfg) {
  return {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay, cfg.warmup_steps, cfg.grad_clip};
}

template <typename T>
double AdamW<T>::current_lr() const {
  if (cfg_.warmup_steps == 0) return cfg_.learning_rate;
  const double ramp = static_cast<double>(steps_ + 1) / static_cast<double>(cfg_.warmup_steps);
  return cfg_.learning_rate * std::min(1.0, ramp);
}

template <typename T>
double AdamW<T>::step(const nn::ParamList<T>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p.tensor.grad_view()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in " + p.name + " at optimizer step " + std::to_string(steps_ + 1));
      }
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
  const double lr = current_lr();
  ++steps_;

  for (const auto& p : params) {
    auto grad = p.tensor.grad_view();
    if (grad.empty()) continue;
    Moments& st = state_[p.name];
    if (st.m.empty()) {
      st.m.assign(grad.size(), 0.0);
      st.v.assign(grad.size(), 0.0);
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
    const double decay = 1.0 - lr * cfg_.weight_decay;
    auto values = nn::Tensor<T>(p.tensor).mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = static_cast<double>(grad[i]) * clip;
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = st.m[i] / c1;
      const double vhat = st.v[i] / c2;
      const double x = static_cast<double>(values[i]) * decay - lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      values[i] = static_cast<T>(x);
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace plex::train
