#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "json.hpp"
#include "plex/data/dataset.hpp"
#include "plex/sim/generate.hpp"

using namespace plex;
using namespace plex::sim;

namespace {

WorldState push_state(Vec2 agent, Vec2 object, Vec2 goal) { return {agent, object, goal, TaskKind::push, 0}; }

std::size_t lit(const std::vector<float>& img, std::size_t channel, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t i = channel * n * n; i < (channel + 1) * n * n; ++i) c += img[i] > 0.5f;
  return c;
}

}  // namespace

TEST(Env, ZeroActionKeepsPositionsAndCostsOne) {
  WorldConfig cfg;
  const auto s = push_state({0.2, 0.2}, {0.5, 0.5}, {0.8, 0.5});
  const auto r = env_step(s, {0.0f, 0.0f}, cfg);
  EXPECT_EQ(r.state.agent, s.agent);
  EXPECT_EQ(r.state.object, s.object);
  EXPECT_EQ(r.reward, -1.0f);
  EXPECT_FALSE(r.done);
  EXPECT_EQ(r.state.step_count, 1u);
}

TEST(Env, ClampsAtTheBoundary) {
  WorldConfig cfg;
  const auto r = env_step(push_state({1.0, 1.0}, {0.5, 0.5}, {0.8, 0.5}), {1.0f, 1.0f}, cfg);
  EXPECT_EQ(r.state.agent, (Vec2{1.0, 1.0}));
  const auto big = env_step(push_state({0.5, 0.5}, {0.1, 0.1}, {0.8, 0.5}), {7.0f, -3.0f}, cfg);
  EXPECT_DOUBLE_EQ(big.state.agent.x, 0.5 + cfg.step_size);  // actions clamp to [-1, 1]
  EXPECT_DOUBLE_EQ(big.state.agent.y, 0.5 - cfg.step_size);
}

TEST(Env, PushMovesObjectOnlyOnContact) {
  WorldConfig cfg;
  cfg.step_size = 0.05;
  cfg.push_drag = 1.0;
  // 0.1 apart: after a 0.05 step the agent is 0.05 from the object, inside the 0.08 contact radius
  const auto r = env_step(push_state({0.4, 0.5}, {0.5, 0.5}, {0.9, 0.9}), {1.0f, 0.0f}, cfg);
  EXPECT_NEAR(r.state.object.x, 0.45 + 0.08, 1e-12);
  EXPECT_NEAR(r.state.object.y, 0.5, 1e-12);
  // moving away never drags the object
  const auto away = env_step(push_state({0.4, 0.5}, {0.5, 0.5}, {0.9, 0.9}), {-1.0f, 0.0f}, cfg);
  EXPECT_EQ(away.state.object, (Vec2{0.5, 0.5}));
}

TEST(Env, PushingSlowsTheAgent) {
  WorldConfig cfg;
  cfg.step_size = 0.05;
  cfg.push_drag = 0.5;
  // a full step would end 0.05 from the object, inside contact, so the agent moves 0.025 instead
  const auto r = env_step(push_state({0.4, 0.5}, {0.5, 0.5}, {0.9, 0.9}), {1.0f, 0.0f}, cfg);
  EXPECT_NEAR(r.state.agent.x, 0.425, 1e-12);
  EXPECT_NEAR(r.state.object.x, 0.425 + 0.08, 1e-12);
  // far from the object the full step applies
  const auto free = env_step(push_state({0.1, 0.5}, {0.5, 0.5}, {0.9, 0.9}), {1.0f, 0.0f}, cfg);
  EXPECT_NEAR(free.state.agent.x, 0.15, 1e-12);
}

TEST(Env, StraightReachStepCountMatchesArithmetic) {
  WorldConfig cfg;
  TaskSpec task;
  task.kind = TaskKind::reach;
  task.goal = {0.5, 0.8};
  WorldState s{{0.5, 0.5}, {0.1, 0.1}, task.goal, TaskKind::reach, 0};
  Rng rng(0);
  ScriptedPolicy policy(task, Style::scripted, cfg, rng);
  std::size_t steps = 0;
  for (bool done = false; !done;) {
    const auto r = env_step(s, policy(s), cfg);
    s = r.state;
    done = r.done;
    ++steps;
    ASSERT_LE(steps, cfg.horizon);
  }
  EXPECT_TRUE(is_success(s, cfg));
  // success needs 0.8 - (0.5 + step k) < radius, i.e. k > (0.3 - radius) / step
  const double bound = (0.3 - cfg.success_radius) / cfg.step_size;
  EXPECT_EQ(steps, static_cast<std::size_t>(std::floor(bound)) + 1);
}

TEST(Env, SuccessRewardAndHorizon) {
  WorldConfig cfg;
  const auto win = env_step(push_state({0.3, 0.3}, {0.5, 0.5}, {0.5, 0.55}), {0.0f, 0.0f}, cfg);
  EXPECT_TRUE(win.success);
  EXPECT_TRUE(win.done);
  EXPECT_EQ(win.reward, 0.0f);
  auto s = push_state({0.3, 0.3}, {0.5, 0.5}, {0.9, 0.9});
  s.step_count = cfg.horizon - 1;
  const auto last = env_step(s, {0.0f, 0.0f}, cfg);
  EXPECT_TRUE(last.done);
  EXPECT_FALSE(last.success);
}

TEST(Render, DeterministicAndChannelSwapSymmetric) {
  WorldConfig cfg;
  const auto s = push_state({0.21, 0.33}, {0.62, 0.47}, {0.8, 0.5});
  EXPECT_EQ(render(s, cfg), render(s, cfg));
  const auto swapped = render(push_state(s.object, s.agent, s.goal), cfg);
  const auto img = render(s, cfg);
  const std::size_t plane = cfg.image_size * cfg.image_size;
  for (std::size_t i = 0; i < plane; ++i) {
    EXPECT_EQ(img[i], swapped[plane + i]);
    EXPECT_EQ(img[plane + i], swapped[i]);
    EXPECT_EQ(img[2 * plane + i], swapped[2 * plane + i]);
  }
}

TEST(Render, DiscPixelCountsMatchLatticeCount) {
  WorldConfig cfg;  // 24 px, agent radius 0.08 = 1.92 px
  // centered on a pixel center: lattice points with i^2 + j^2 <= 3.6864 -> (0,0), 4 axis, 4 diagonal
  const double c = 12.5 / 24.0;
  EXPECT_EQ(lit(render(push_state({c, c}, {0.1, 0.1}, {0.9, 0.9}), cfg), 0, 24), 9u);
  // centered on a pixel corner: half-integer offsets (+-0.5, +-0.5) and (+-1.5, +-0.5) qualify
  const double k = 12.0 / 24.0;
  EXPECT_EQ(lit(render(push_state({k, k}, {0.1, 0.1}, {0.9, 0.9}), cfg), 0, 24), 12u);
}

TEST(Render, AxesAreColumnsAndRows) {
  WorldConfig cfg;
  cfg.agent_radius = 0.01;  // a single pixel
  const auto img = render(push_state({(3 + 0.5) / 24.0, (17 + 0.5) / 24.0}, {0.9, 0.9}, {0.9, 0.1}), cfg);
  EXPECT_EQ(img[17 * 24 + 3], 1.0f);
  EXPECT_EQ(lit(img, 0, 24), 1u);
}

TEST(Tasks, SplitIsDisjointAndHeldOut) {
  WorldConfig cfg;
  const auto tasks = make_tasks(cfg);
  ASSERT_EQ(tasks.size(), 10u);
  const auto train = tasks_in(tasks, Split::train);
  const auto target = tasks_in(tasks, Split::target);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(target.size(), 2u);
  for (const auto& a : train) {
    for (const auto& b : target) {
      // goal regions (success discs) never overlap
      EXPECT_GT(distance(a.goal, b.goal), 2.0 * cfg.success_radius);
    }
  }
  for (const auto& t : tasks) EXPECT_EQ(t.goal_image.size(), cfg.image_floats());
}

TEST(Policy, ScriptedIsDeterministicAndAlwaysSucceedsOnTrainTasks) {
  WorldConfig cfg;
  const auto train = tasks_in(make_tasks(cfg), Split::train);
  for (std::size_t ti = 0; ti < train.size(); ++ti) {
    for (std::uint64_t e = 0; e < 25; ++e) {
      const auto ep = run_scripted_episode(train[ti], cfg, Style::scripted, 0.0, derive_seed(11, {ti, e}));
      EXPECT_TRUE(ep.success) << train[ti].name << " episode " << e;
    }
  }
  const auto a = run_scripted_episode(train[0], cfg, Style::scripted, 0.0, 5);
  const auto b = run_scripted_episode(train[0], cfg, Style::scripted, 0.0, 5);
  EXPECT_EQ(a.trajectory.images, b.trajectory.images);
  EXPECT_EQ(a.trajectory.actions, b.trajectory.actions);
}

TEST(Policy, HumanlikeLengthsDisperse) {
  WorldConfig cfg;
  const auto target = tasks_in(make_tasks(cfg), Split::target);
  std::vector<double> lengths;
  std::size_t wins = 0;
  for (std::uint64_t e = 0; e < 100; ++e) {
    const auto ep = run_scripted_episode(target[e % 2], cfg, Style::humanlike, 0.0, derive_seed(3, {e}));
    wins += ep.success;
    lengths.push_back(static_cast<double>(ep.trajectory.length));
  }
  const double m = std::accumulate(lengths.begin(), lengths.end(), 0.0) / lengths.size();
  double var = 0;
  for (double l : lengths) var += (l - m) * (l - m);
  const double sd = std::sqrt(var / lengths.size());
  EXPECT_GT(sd, 0.0);
  EXPECT_GT(sd / m, 0.1);
  EXPECT_EQ(wins, 100u);
}

TEST(Generate, DefaultRecipeSizesAndModalities) {
  WorldConfig world;
  GenerationConfig gen;
  const auto tasks = make_tasks(world);
  const auto mtvd = generate_dataset(data::DatasetKind::mtvd, tasks_in(tasks, Split::train), gen.mtvd_per_task, world, gen, 1);
  const auto vmt = generate_dataset(data::DatasetKind::vmt, tasks_in(tasks, Split::target), gen.vmt_per_task, world, gen, 1);
  const auto ttd = generate_dataset(data::DatasetKind::ttd, tasks_in(tasks, Split::target), gen.ttd_per_task, world, gen, 1);
  EXPECT_EQ(mtvd.trajectories.size(), 800u);
  EXPECT_EQ(vmt.trajectories.size(), 150u);
  EXPECT_EQ(ttd.trajectories.size(), 20u);
  EXPECT_LE(ttd.trajectories.size(), vmt.trajectories.size());
  EXPECT_LE(vmt.trajectories.size(), mtvd.trajectories.size());
  for (const auto& t : mtvd.trajectories) {
    EXPECT_FALSE(t.present.action);
    EXPECT_TRUE(t.present.task);
    // split hygiene
    EXPECT_EQ(find_task(tasks, t.task).split, Split::train);
  }
  for (const auto& t : vmt.trajectories) {
    EXPECT_TRUE(t.present.action);
    EXPECT_FALSE(t.present.task);
  }
  EXPECT_THROW(generate_dataset(data::DatasetKind::mtvd, tasks_in(tasks, Split::target), 1, world, gen, 1),
               ContractError);
  EXPECT_THROW(generate_dataset(data::DatasetKind::vmt, tasks_in(tasks, Split::train), 1, world, gen, 1),
               ContractError);
}

TEST(Generate, ReturnsToGoAreConsistent) {
  WorldConfig world;
  GenerationConfig gen;
  const auto tasks = tasks_in(make_tasks(world), Split::target);
  const auto vmt = generate_dataset(data::DatasetKind::vmt, tasks, 10, world, gen, 4);
  for (const auto& t : vmt.trajectories) {
    ASSERT_TRUE(t.present.ret);
    EXPECT_EQ(t.returns.back(), 0.0f);
    for (std::size_t s = 0; s + 1 < t.length; ++s) {
      // r_t is -1 except on the transition that reaches the goal
      const float r = t.returns[s] - t.returns[s + 1];
      EXPECT_TRUE(r == -1.0f || (r == 0.0f && s + 2 == t.length));
    }
  }
}

TEST(Generate, ExhaustedRetryBudgetRaises) {
  WorldConfig world;
  world.horizon = 1;
  GenerationConfig gen;
  gen.retry_budget = 2;
  const auto tasks = tasks_in(make_tasks(world), Split::train);
  EXPECT_THROW(generate_dataset(data::DatasetKind::mtvd, tasks, 3, world, gen, 1), GenerationError);
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// MLE of sigma for zero-mean normal noise observed through clamping to [-1, 1].
double censored_sigma(const std::vector<double>& residual, const std::vector<int>& side,
                      const std::vector<double>& bound) {
  auto nll = [&](double sigma) {
    double v = 0;
    for (std::size_t i = 0; i < residual.size(); ++i) {
      if (side[i] == 0) {
        v += std::log(sigma) + 0.5 * residual[i] * residual[i] / (sigma * sigma);
      } else {
        // clamped high: noise >= bound; clamped low: noise <= bound
        const double p = side[i] > 0 ? 1.0 - normal_cdf(bound[i] / sigma) : normal_cdf(bound[i] / sigma);
        v -= std::log(std::max(p, 1e-300));
      }
    }
    return v;
  };
  double lo = 0.05, hi = 3.0;
  for (int it = 0; it < 200; ++it) {
    const double a = lo + (hi - lo) / 3, b = hi - (hi - lo) / 3;
    (nll(a) < nll(b) ? hi : lo) = nll(a) < nll(b) ? b : a;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(Generate, VmtNoiseStdBeforeClampingIsHalf) {
  WorldConfig world;
  GenerationConfig gen;
  const auto tasks = tasks_in(make_tasks(world), Split::target);
  const auto vmt = generate_dataset(data::DatasetKind::vmt, tasks, 30, world, gen, 9);
  std::vector<double> residual, bound;
  std::vector<int> side;
  for (std::size_t i = 0; i < vmt.trajectories.size(); ++i) {
    const auto& t = vmt.trajectories[i];
    const TaskSpec& task = find_task(tasks, t.task);
    // replay the recorded actions through the dynamics and ask the clean controller at each state
    Rng rng(derive_seed(9, {static_cast<std::uint64_t>(data::DatasetKind::vmt) + 1, i / 30, i % 30}));
    WorldState s = reset(task, world, rng);
    ASSERT_FLOAT_EQ(static_cast<float>(s.agent.x), t.proprio[0]);
    Rng unused(0);
    ScriptedPolicy clean(task, Style::scripted, world, unused);
    for (std::size_t k = 0; k + 1 < t.length; ++k) {
      const auto want = clean(s);
      for (int d = 0; d < 2; ++d) {
        const double a = t.actions[k * 2 + d];
        if (a >= 1.0) {
          side.push_back(1);
          bound.push_back(1.0 - want[d]);
          residual.push_back(0);
        } else if (a <= -1.0) {
          side.push_back(-1);
          bound.push_back(-1.0 - want[d]);
          residual.push_back(0);
        } else {
          side.push_back(0);
          bound.push_back(0);
          residual.push_back(a - want[d]);
        }
      }
      s = env_step(s, {t.actions[k * 2], t.actions[k * 2 + 1]}, world).state;
    }
  }
  ASSERT_GE(residual.size(), 1000u);
  EXPECT_NEAR(censored_sigma(residual, side, bound), 0.5, 0.05);
}

namespace {

data::Dataset small_dataset() {
  WorldConfig world;
  GenerationConfig gen;
  gen.ttd_pool = 4;
  return generate_dataset(data::DatasetKind::ttd, tasks_in(make_tasks(world), Split::target), 2, world, gen, 2);
}

}  // namespace

TEST(DatasetIO, RoundTripIsByteIdentical) {
  const auto ds = small_dataset();
  const auto bytes = data::serialize_dataset(ds);
  const auto back = data::deserialize_dataset(bytes);
  EXPECT_EQ(data::serialize_dataset(back), bytes);
  ASSERT_EQ(back.trajectories.size(), ds.trajectories.size());
  EXPECT_EQ(back.info, ds.info);
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    EXPECT_EQ(back.trajectories[i].present, ds.trajectories[i].present);
    EXPECT_EQ(back.trajectories[i].images, ds.trajectories[i].images);
    EXPECT_EQ(back.trajectories[i].returns, ds.trajectories[i].returns);
  }
  const auto path = std::filesystem::temp_directory_path() / "plex_test_roundtrip.plxd";
  data::save_dataset(ds, path);
  EXPECT_EQ(data::serialize_dataset(data::load_dataset(path)), bytes);
  std::filesystem::remove(path);
}

TEST(DatasetIO, TruncationIsAFormatErrorWithOffset) {
  const auto bytes = data::serialize_dataset(small_dataset());
  for (std::size_t cut : {std::size_t{2}, std::size_t{7}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      data::deserialize_dataset(part);
      ADD_FAILURE() << "accepted a file cut at " << cut;
    } catch (const FormatError& e) {
      EXPECT_LE(e.offset(), cut);
    }
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(data::deserialize_dataset(extra), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(data::deserialize_dataset(bad_magic), FormatError);
}

TEST(DatasetIO, RejectsFlagsThatContradictArrays) {
  const auto ds = small_dataset();
  const auto bytes = data::serialize_dataset(ds);
  // rebuild the file with the first trajectory's action flag cleared but its array kept
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[5 + i]) << (8 * i);
  auto manifest = nlohmann::json::parse(std::string(bytes.begin() + 13, bytes.begin() + 13 + static_cast<std::ptrdiff_t>(len)));
  manifest["trajectories"][0]["present"]["a"] = false;
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> forged(bytes.begin(), bytes.begin() + 5);
  for (int i = 0; i < 8; ++i) forged.push_back(static_cast<std::uint8_t>(text.size() >> (8 * i)));
  forged.insert(forged.end(), text.begin(), text.end());
  forged.insert(forged.end(), bytes.begin() + 13 + static_cast<std::ptrdiff_t>(len), bytes.end());
  try {
    data::deserialize_dataset(forged);
    FAIL() << "accepted contradictory flags";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("contradicts"), std::string::npos) << e.what();
  }
}
