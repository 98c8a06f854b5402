#pragma once

#include <map>
#include <string>
#include <vector>

#include "plex/nn/layers.hpp"
#include "plex/train/train_config.hpp"

namespace plex::train {

struct AdamWConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  // linear ramp from lr / warmup to lr; 0 disables
  std::size_t warmup_steps = 100;
  // global-norm clip; 0 disables
  double grad_clip = 1.0;

  static AdamWConfig from(const TrainConfig& cfg);
};

// Adam with decoupled weight decay. Parameters without a gradient (nothing reached them this
// batch) are skipped entirely, decay included, so frozen or unused tensors stay bitwise fixed.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  // Applies one update from the gradients currently held by params. Throws NumericError naming
  // the parameter when a gradient is NaN or infinite. Returns the global gradient norm before clipping.
  double step(const nn::ParamList<T>& params);

  std::size_t steps() const { return steps_; }
  // Learning rate the next step() will use.
  double current_lr() const;

 private:
  struct Moments {
    std::vector<double> m, v;
    std::size_t t = 0;
  };
  AdamWConfig cfg_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace plex::train
