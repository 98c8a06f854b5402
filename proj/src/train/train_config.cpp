#include "plex/train/train_config.hpp"

#include "plex/core/errors.hpp"

namespace plex::train {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size == 0 || !(weight_decay >= 0.0) || steps_per_epoch == 0 ||
      finetune_steps_per_epoch == 0) {
    throw ContractError("train config: learning rate, batch size and steps per epoch must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0) || grad_clip < 0.0) {
    throw ContractError("train config: betas must lie in [0, 1), eps > 0, grad_clip >= 0");
  }
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 20;
  return c;
}

TrainConfig TrainConfig::table6() {
  TrainConfig cfg;
  cfg.batch_size = 256;
  cfg.steps_per_epoch = 250;
  return cfg;
}

}  // namespace plex::train
