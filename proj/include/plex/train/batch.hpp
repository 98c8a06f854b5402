#pragma once

#include <vector>

#include "plex/core/random.hpp"
#include "plex/data/dataset.hpp"

namespace plex::train {

// One training window: steps [first_step, t_end] of a trajectory, left padded to K steps.
struct WindowSample {
  std::size_t trajectory = 0;
  std::size_t first_step = 1;
  std::size_t t_end = 1;
  std::size_t pad_steps = 0;

  std::size_t steps() const { return t_end + 1 - first_step; }
};

// Uniform trajectory, then a uniform end step in [1, T - end_margin]. Trajectories too short for
// the margin are never drawn; throws ContractError if none qualifies.
std::vector<WindowSample> sample_batch(const data::Dataset& dataset, std::size_t context_steps,
                                       std::size_t batch_size, Rng& rng, std::size_t end_margin = 0);

}  // namespace plex::train
