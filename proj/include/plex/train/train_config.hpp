#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace plex::train {

struct TrainConfig {
  double learning_rate = 5e-4;
  std::size_t batch_size = 32;
  double weight_decay = 1e-5;
  // pretraining stages
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 100;
  // finetuning
  std::size_t finetune_epochs = 10;
  std::size_t finetune_steps_per_epoch = 50;
  std::size_t warmup_steps = 100;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;

  // Batch 32, 20 x 100 steps per stage.
  static TrainConfig desk();
  // Batch 256, 10 x 250 steps per stage.
  static TrainConfig table6();
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, learning_rate, batch_size, weight_decay, epochs,
                                                steps_per_epoch, finetune_epochs, finetune_steps_per_epoch,
                                                warmup_steps, grad_clip, beta1, beta2, adam_eps, seed)

}  // namespace plex::train
