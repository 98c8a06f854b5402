#include "plex/sim/generate.hpp"

#include <algorithm>
#include <random>

namespace plex::sim {

model::ObsSpec obs_spec(const WorldConfig& cfg) { return {1, cfg.channels(), cfg.image_size, cfg.image_size, 2, 2}; }

std::vector<float> returns_to_go(const std::vector<float>& rewards) {
  std::vector<float> out(rewards.size(), 0.0f);
  float acc = 0.0f;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc += rewards[i];
    out[i] = acc;
  }
  return out;
}

Episode run_scripted_episode(const TaskSpec& task, const WorldConfig& cfg, Style style, double noise_std,
                             std::uint64_t seed) {
  Rng rng(seed);
  WorldState s = reset(task, cfg, rng);
  ScriptedPolicy policy(task, style, cfg, rng);
  std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);

  Episode ep;
  model::Trajectory& t = ep.trajectory;
  t.present = {true, true, true, true, true};
  t.task = task.name;
  t.goal = task.goal_image;
  std::vector<float> rewards;
  auto observe = [&](const WorldState& st) {
    const auto img = render(st, cfg);
    t.images.insert(t.images.end(), img.begin(), img.end());
    t.proprio.push_back(static_cast<float>(st.agent.x));
    t.proprio.push_back(static_cast<float>(st.agent.y));
  };
  observe(s);
  for (;;) {
    auto a = policy(s);
    if (noise_std > 0.0) {
      for (auto& v : a) v = std::clamp(static_cast<float>(v + noise(rng)), -1.0f, 1.0f);
    }
    const StepResult r = env_step(s, a, cfg);
    t.actions.push_back(a[0]);
    t.actions.push_back(a[1]);
    rewards.push_back(r.reward);
    s = r.state;
    observe(s);
    if (r.done) {
      ep.success = r.success;
      break;
    }
  }
  // the last observation has no action; pad with zeros
  t.actions.push_back(0.0f);
  t.actions.push_back(0.0f);
  rewards.push_back(0.0f);
  t.length = rewards.size();
  t.returns = returns_to_go(rewards);
  return ep;
}

namespace {

void strip(model::Trajectory& t, model::Modality m) {
  t.present.set(m, false);
  switch (m) {
    case model::Modality::task:
      t.goal.clear();
      break;
    case model::Modality::image:
      t.images.clear();
      break;
    case model::Modality::proprio:
      t.proprio.clear();
      break;
    case model::Modality::action:
      t.actions.clear();
      break;
    case model::Modality::ret:
      t.returns.clear();
      break;
  }
}

}  // namespace

data::Dataset generate_dataset(data::DatasetKind kind, const std::vector<TaskSpec>& tasks, std::size_t n_per_task,
                               const WorldConfig& world, const GenerationConfig& gen, std::uint64_t seed) {
  using data::DatasetKind;
  const Split want = kind == DatasetKind::mtvd ? Split::train : Split::target;
  for (const auto& task : tasks) {
    if (task.split != want) {
      throw ContractError(data::to_string(kind) + " data must come from " + to_string(want) + " tasks; '" +
                          task.name + "' is a " + to_string(task.split) + " task");
    }
  }
  data::Dataset ds;
  ds.kind = kind;
  ds.spec = obs_spec(world);
  ds.info.seed = seed;
  ds.info.noise_std = kind == DatasetKind::vmt ? gen.vmt_noise_std : 0.0;
  ds.info.style = to_string(kind == DatasetKind::vmt ? Style::scripted : gen.style);
  ds.info.video_only = kind == DatasetKind::mtvd || (kind == DatasetKind::ttd && gen.ttd_video_only);

  const auto kind_id = static_cast<std::uint64_t>(kind) + 1;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const TaskSpec& task = tasks[ti];
    ds.info.tasks.push_back(task.name);
    std::vector<model::Trajectory> episodes;
    if (kind == DatasetKind::vmt) {
      // exploratory play: kept whether or not it succeeds
      for (std::size_t e = 0; e < n_per_task; ++e) {
        auto ep = run_scripted_episode(task, world, Style::scripted, gen.vmt_noise_std,
                                       derive_seed(seed, {kind_id, ti, e}));
        strip(ep.trajectory, model::Modality::task);
        episodes.push_back(std::move(ep.trajectory));
      }
    } else {
      const std::size_t pool = kind == DatasetKind::ttd ? std::max(gen.ttd_pool, n_per_task) : n_per_task;
      std::size_t attempts = 0;
      for (std::size_t e = 0; episodes.size() < pool; ++e) {
        if (attempts++ >= pool * gen.retry_budget) {
          throw GenerationError("task '" + task.name + "': only " + std::to_string(episodes.size()) + " of " +
                                std::to_string(pool) + " demonstrations succeeded within the retry budget");
        }
        auto ep = run_scripted_episode(task, world, gen.style, 0.0, derive_seed(seed, {kind_id, ti, e}));
        if (ep.success) episodes.push_back(std::move(ep.trajectory));
      }
      if (kind == DatasetKind::ttd && pool > n_per_task) {
        Rng pick(derive_seed(seed, {kind_id, ti, 0xD0}));
        std::shuffle(episodes.begin(), episodes.end(), pick);
        episodes.resize(n_per_task);
      }
      if (ds.info.video_only) {
        for (auto& t : episodes) {
          strip(t, model::Modality::action);
          strip(t, model::Modality::proprio);
        }
      }
    }
    for (auto& t : episodes) ds.trajectories.push_back(std::move(t));
  }
  ds.validate();
  return ds;
}

}  // namespace plex::sim
