#pragma once

#include <cstdint>
#include <vector>

#include "plex/data/dataset.hpp"
#include "plex/sim/policy.hpp"
#include "plex/sim/world.hpp"

namespace plex::sim {

struct GenerationConfig {
  std::size_t mtvd_per_task = 100;
  std::size_t vmt_per_task = 75;
  std::size_t ttd_per_task = 10;
  // ttd demos are drawn without replacement from a pool of this many clean episodes per task
  std::size_t ttd_pool = 75;
  double vmt_noise_std = 0.5;
  Style style = Style::scripted;  // policy for mtvd and ttd episodes
  bool ttd_video_only = false;
  // fresh starts tried per demanded successful episode
  std::size_t retry_budget = 20;
};

// Observation layout of rendered episodes.
model::ObsSpec obs_spec(const WorldConfig& cfg);

struct Episode {
  bool success = false;
  model::Trajectory trajectory;  // every modality present
};

// One closed-loop episode of the scripted controller; noise_std > 0 perturbs (and records) the
// executed actions.
Episode run_scripted_episode(const TaskSpec& task, const WorldConfig& cfg, Style style, double noise_std,
                             std::uint64_t seed);

// mtvd draws from train tasks, vmt and ttd from target tasks (ContractError otherwise).
// Throws GenerationError if a task yields no success within the retry budget.
data::Dataset generate_dataset(data::DatasetKind kind, const std::vector<TaskSpec>& tasks, std::size_t n_per_task,
                               const WorldConfig& world, const GenerationConfig& gen, std::uint64_t seed);

// Returns-to-go from per-step rewards: R_T = 0, R_t = r_t + R_{t+1}.
std::vector<float> returns_to_go(const std::vector<float>& rewards);

}  // namespace plex::sim
