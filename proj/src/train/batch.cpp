#include "plex/train/batch.hpp"

#include <random>

namespace plex::train {

std::vector<WindowSample> sample_batch(const data::Dataset& dataset, std::size_t context_steps,
                                       std::size_t batch_size, Rng& rng, std::size_t end_margin) {
  if (context_steps == 0) {
    throw ContractError("sample_batch: context must hold at least one step");
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    if (dataset.trajectories[i].length > end_margin) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw ContractError("sample_batch: no trajectory longer than " + std::to_string(end_margin) + " steps");
  }
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  std::vector<WindowSample> out;
  out.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    WindowSample w;
    w.trajectory = eligible[pick(rng)];
    const std::size_t last = dataset.trajectories[w.trajectory].length - end_margin;
    w.t_end = std::uniform_int_distribution<std::size_t>(1, last)(rng);
    w.first_step = w.t_end >= context_steps ? w.t_end - context_steps + 1 : 1;
    w.pad_steps = context_steps - w.steps();
    out.push_back(w);
  }
  return out;
}

}  // namespace plex::train
