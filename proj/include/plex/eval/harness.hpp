#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "plex/eval/policies.hpp"
#include "plex/sim/world.hpp"

namespace plex::eval {

struct RolloutResult {
  bool success = false;
  std::size_t steps = 0;          // actions taken
  model::Trajectory trajectory;   // every modality present
};

// render -> act -> env_step until done or max_steps actions.
RolloutResult rollout(Policy& policy, const sim::TaskSpec& task, const sim::WorldConfig& world, std::uint64_t seed,
                      std::size_t max_steps);

// Seed of episode e of a task; independent of which other tasks are evaluated and in what order.
std::uint64_t episode_seed(std::uint64_t seed, const std::string& task, std::size_t episode);

// Success rate per task over n_episodes seeded episodes each.
std::vector<double> evaluate(Policy& policy, const std::vector<sim::TaskSpec>& tasks, std::size_t n_episodes,
                             const sim::WorldConfig& world, std::uint64_t seed);

double mean(const std::vector<double>& v);
double median(std::vector<double> v);

struct EvalReport {
  std::string experiment;
  std::vector<std::string> tasks;
  // row e: per-task rates after e training epochs (row 0 = before training)
  std::vector<std::vector<double>> epoch_task_rates;
  std::vector<double> curve;  // mean over tasks per row
  std::size_t best_epoch = 0;
  double best_rate = 0.0;
  std::vector<double> best_task_rates;
  std::vector<std::uint64_t> seeds;
  std::string config_fingerprint;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

// Evaluates before training, then after each of `epochs` calls to train_epoch(e). The best epoch
// is the maximum over epochs 1..E, or epoch 0 when E = 0 (pure zero-shot).
EvalReport eval_protocol(const std::function<void(std::size_t)>& train_epoch, std::size_t epochs,
                         const std::function<std::vector<double>()>& eval_fn,
                         const std::function<void(std::size_t, double)>& on_eval = {});

}  // namespace plex::eval
