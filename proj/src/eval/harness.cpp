#include "plex/eval/harness.hpp"

#include <algorithm>
#include <numeric>

#include "plex/sim/generate.hpp"

namespace plex::eval {

RolloutResult rollout(Policy& policy, const sim::TaskSpec& task, const sim::WorldConfig& world, std::uint64_t seed,
                      std::size_t max_steps) {
  Rng rng(seed);
  sim::WorldState s = sim::reset(task, world, rng);
  policy.reset(task, derive_seed(seed, {1}));

  RolloutResult out;
  model::Trajectory& t = out.trajectory;
  t.present = {true, true, true, true, true};
  t.task = task.name;
  t.goal = task.goal_image;
  std::vector<float> rewards;
  auto observe = [&](const sim::WorldState& st, const std::vector<float>& image) {
    t.images.insert(t.images.end(), image.begin(), image.end());
    t.proprio.push_back(static_cast<float>(st.agent.x));
    t.proprio.push_back(static_cast<float>(st.agent.y));
  };
  std::vector<float> image = sim::render(s, world);
  observe(s, image);
  while (out.steps < max_steps) {
    auto a = policy.act(s, image);
    for (auto& v : a) v = std::clamp(v, -1.0f, 1.0f);
    const sim::StepResult r = sim::env_step(s, a, world);
    policy.observe_reward(r.reward);
    t.actions.insert(t.actions.end(), a.begin(), a.end());
    rewards.push_back(r.reward);
    ++out.steps;
    s = r.state;
    image = sim::render(s, world);
    observe(s, image);
    if (r.success) out.success = true;
    if (r.done) break;
  }
  t.actions.insert(t.actions.end(), {0.0f, 0.0f});
  rewards.push_back(0.0f);
  t.length = rewards.size();
  t.returns = sim::returns_to_go(rewards);
  return out;
}

std::uint64_t episode_seed(std::uint64_t seed, const std::string& task, std::size_t episode) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : task) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  return derive_seed(seed, {h, episode});
}

std::vector<double> evaluate(Policy& policy, const std::vector<sim::TaskSpec>& tasks, std::size_t n_episodes,
                             const sim::WorldConfig& world, std::uint64_t seed) {
  if (n_episodes == 0) {
    throw ContractError("evaluate: need at least one episode per task");
  }
  std::vector<double> rates;
  for (const auto& task : tasks) {
    std::size_t wins = 0;
    for (std::size_t e = 0; e < n_episodes; ++e) {
      wins += rollout(policy, task, world, episode_seed(seed, task.name, e), world.horizon).success ? 1 : 0;
    }
    rates.push_back(static_cast<double>(wins) / static_cast<double>(n_episodes));
  }
  return rates;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["experiment"] = experiment;
  j["tasks"] = tasks;
  j["epoch_task_rates"] = epoch_task_rates;
  j["curve"] = curve;
  j["best_epoch"] = best_epoch;
  j["best_rate"] = best_rate;
  j["best_task_rates"] = best_task_rates;
  j["seeds"] = seeds;
  j["config_fingerprint"] = config_fingerprint;
  j["extra"] = extra;
  return j;
}

EvalReport eval_protocol(const std::function<void(std::size_t)>& train_epoch, std::size_t epochs,
                         const std::function<std::vector<double>()>& eval_fn,
                         const std::function<void(std::size_t, double)>& on_eval) {
  EvalReport report;
  for (std::size_t e = 0; e <= epochs; ++e) {
    if (e > 0) train_epoch(e);
    auto rates = eval_fn();
    report.curve.push_back(mean(rates));
    report.epoch_task_rates.push_back(std::move(rates));
    if (on_eval) on_eval(e, report.curve.back());
  }
  const std::size_t from = epochs == 0 ? 0 : 1;
  report.best_epoch = from;
  for (std::size_t e = from; e < report.curve.size(); ++e) {
    if (report.curve[e] > report.curve[report.best_epoch]) report.best_epoch = e;
  }
  report.best_rate = report.curve[report.best_epoch];
  report.best_task_rates = report.epoch_task_rates[report.best_epoch];
  return report;
}

}  // namespace plex::eval
