#include <gtest/gtest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "plex/tensor/grad_check.hpp"

using namespace plex;
using namespace plex::model;
using plex::testing::random_trajectory;

namespace {

PlexConfig tiny(std::size_t k = 3) {
  PlexConfig c = PlexConfig::tiny();
  c.planner.context_steps = k;
  c.executor.context_steps = k;
  return c;
}

std::vector<double> row_of(const Tensor<double>& t, std::size_t r) {
  const std::size_t d = t.dim(1);
  return std::vector<double>(t.data().begin() + r * d, t.data().begin() + (r + 1) * d);
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Eq. 1 by direct loop: sum over t = 1+L .. T+L of |I_min(t,T) - Ihat_t|^2, with Ihat_t at row t-L-1.
double eq1_oracle(const std::vector<std::vector<double>>& itilde, const std::vector<std::vector<double>>& ihat,
                  std::size_t lookahead) {
  const std::size_t T = itilde.size();
  double total = 0;
  for (std::size_t t = 1 + lookahead; t <= T + lookahead; ++t) {
    total += sq_dist(itilde[std::min(t, T) - 1], ihat[t - lookahead - 1]);
  }
  return total;
}

}  // namespace

TEST(Layout, PlannerWindowArithmetic) {
  auto one = planner_layout(1, 30, false);
  ASSERT_EQ(one.slots.size(), 2u);
  EXPECT_EQ(one.slots[0].role, TokenRole::task);
  EXPECT_EQ(one.slots[1].role, TokenRole::image);
  EXPECT_EQ(one.pad_tokens, 29u);
  auto w = planner_layout(40, 30, true);
  EXPECT_EQ(w.first_step, 11u);
  EXPECT_EQ(w.steps(), 30u);
  EXPECT_EQ(w.positions_of(TokenRole::image).size(), 30u);
  EXPECT_EQ(w.slots[1].role, TokenRole::ret);
  EXPECT_EQ(w.slots[2].role, TokenRole::image);
  EXPECT_FALSE(w.contains(TokenRole::proprio));
  EXPECT_FALSE(w.contains(TokenRole::prev_action));
  EXPECT_FALSE(w.contains(TokenRole::target));
}

TEST(Layout, ExecutorRouting) {
  auto e = executor_layout(5, 30);
  EXPECT_EQ(e.slots.size(), 20u);
  EXPECT_EQ(e.pad_tokens, 100u);
  EXPECT_FALSE(e.contains(TokenRole::task));
  EXPECT_FALSE(e.contains(TokenRole::ret));
  auto w = executor_layout(40, 30);
  EXPECT_EQ(w.first_step, 11u);
  EXPECT_EQ(w.slots.size(), 120u);
  EXPECT_THROW(executor_layout(0, 3), ContractError);
}

TEST(Context, PlaceholdersFillMissingModalities) {
  PlexConfig cfg = tiny();
  cfg.use_returns = true;
  PlexModel<double> m(cfg, 1);
  auto traj = random_trajectory(cfg, 3, 2, {true, true, true, true, false});
  auto emb = m.embed(traj, m.bc_request(traj, 3));
  auto ctx = m.planner_context(emb, 3);
  const auto ph = m.encoders().placeholder(Modality::ret);
  for (auto pos : ctx.layout.positions_of(TokenRole::ret)) {
    EXPECT_EQ(row_of(ctx.tokens, pos), std::vector<double>(ph.data().begin(), ph.data().end()));
  }
  auto targets = m.teacher_targets(m.embed(traj, m.executor_request(traj, 2)), 2, 3);
  auto ectx = m.executor_context(m.embed(traj, m.executor_request(traj, 2)), targets, 2);
  const auto pa = m.encoders().placeholder(Modality::action);
  EXPECT_EQ(row_of(ectx.tokens, 0), std::vector<double>(pa.data().begin(), pa.data().end()));
}

TEST(Plan, OneOutputPerImageTokenAndCausal) {
  PlexConfig cfg = tiny(4);
  PlexModel<double> m(cfg, 3);
  auto traj = random_trajectory(cfg, 4, 4);
  auto base = m.plan(m.planner_context(m.embed(traj, m.planner_request(traj)), 4));
  EXPECT_EQ(base.shape(), (tensor::Shape{4, 8}));
  auto changed = traj;
  for (std::size_t i = 2 * 192; i < 3 * 192; ++i) changed.images[i] = 1.0f - changed.images[i];  // step 3
  auto after = m.plan(m.planner_context(m.embed(changed, m.planner_request(changed)), 4));
  for (std::size_t i = 0; i < 2 * 8; ++i) EXPECT_EQ(after[i], base[i]);
  double diff = 0;
  for (std::size_t i = 2 * 8; i < 32; ++i) diff = std::max(diff, std::abs(after[i] - base[i]));
  EXPECT_GT(diff, 0.0);
  EXPECT_EQ(PlexConfig::desk().lookahead, 1u);
}

TEST(PlannerLoss, HandExampleAndOracle) {
  // T = 2, L = 1, h = 1: Itilde = [1, 2], Ihat = [0, 0] -> (2-0)^2 + (2-0)^2
  EXPECT_EQ(eq1_oracle({{1.0}, {2.0}}, {{0.0}, {0.0}}, 1), 8.0);
  EXPECT_EQ(eq1_oracle({{1.0}, {2.0}, {3.0}}, {{2.0}, {3.0}, {3.0}}, 1), 0.0);

  for (std::size_t T = 1; T <= 4; ++T) {
    for (std::size_t L : {1, 2}) {
      PlexConfig cfg = tiny(4);
      cfg.lookahead = L;
      PlexModel<double> m(cfg, 10 + T);
      auto traj = random_trajectory(cfg, T, 20 + T);
      auto emb = m.embed(traj, m.planner_request(traj));
      auto ihat = m.plan(m.planner_context(emb, T));
      std::vector<std::vector<double>> it, ih;
      for (std::size_t s = 0; s < T; ++s) {
        it.push_back(row_of(emb[Modality::image], s));
        ih.push_back(row_of(ihat, s));
      }
      EXPECT_NEAR(m.planner_loss(traj).item(), eq1_oracle(it, ih, L), 1e-6) << "T=" << T << " L=" << L;
    }
  }
}

TEST(PlannerLoss, WindowsTileLongTrajectories) {
  PlexConfig cfg = tiny(3);
  PlexModel<double> m(cfg, 5);
  auto traj = random_trajectory(cfg, 7, 6);
  auto emb = m.embed(traj, m.planner_request(traj));
  double expect = 0;
  for (std::size_t t_end : {7, 4, 1}) expect += m.planner_window_loss(emb, 7, t_end).item();
  EXPECT_NEAR(m.planner_loss(traj).item(), expect, 1e-12);
}

TEST(PlannerLoss, RequiresImages) {
  PlexConfig cfg = tiny();
  PlexModel<double> m(cfg, 7);
  auto traj = random_trajectory(cfg, 3, 8, {true, false, false, false, false});
  EXPECT_THROW(m.planner_loss(traj), ContractError);
}

TEST(ExecutorLoss, RangeAndOracle) {
  for (std::size_t T = 1; T <= 4; ++T) {
    PlexConfig cfg = tiny(4);
    PlexModel<double> m(cfg, 30 + T);
    auto traj = random_trajectory(cfg, T, 40 + T);
    double oracle = 0;
    for (std::size_t t = 1; t + 1 <= T; ++t) {
      auto emb = m.embed(traj, m.executor_request(traj, t));
      auto a = m.execute(m.executor_context(emb, m.teacher_targets(emb, t, T), t));
      auto last = row_of(a, a.dim(0) - 1);
      std::vector<double> truth(traj.actions.begin() + (t - 1) * 2, traj.actions.begin() + t * 2);
      oracle += sq_dist(last, truth);
    }
    EXPECT_NEAR(m.executor_loss(traj).item(), oracle, 1e-6) << "T=" << T;
  }
}

TEST(ExecutorLoss, ThreeStepsSumTwoTerms) {
  PlexConfig cfg = tiny(4);
  PlexModel<double> m(cfg, 50);
  auto traj = random_trajectory(cfg, 3, 51);
  // a_3 is padding; changing it must not move the loss
  auto changed = traj;
  changed.actions[4] = 0.9f;
  changed.actions[5] = -0.9f;
  EXPECT_EQ(m.executor_loss(traj).item(), m.executor_loss(changed).item());
  changed.actions[2] = 0.7f;  // a_2 counts
  EXPECT_NE(m.executor_loss(traj).item(), m.executor_loss(changed).item());
}

TEST(ExecutorLoss, RequiresActions) {
  PlexConfig cfg = tiny();
  PlexModel<double> m(cfg, 52);
  auto traj = random_trajectory(cfg, 3, 53, {true, true, false, false, false});
  EXPECT_THROW(m.executor_loss(traj), ContractError);
  EXPECT_THROW(m.bc_loss(traj), ContractError);
}

TEST(Execute, BoundedAndSensitiveToTarget) {
  PlexConfig cfg = tiny();
  PlexModel<double> m(cfg, 54);
  auto traj = random_trajectory(cfg, 1, 55);
  auto emb = m.embed(traj, m.executor_request(traj, 1));
  auto t1 = m.teacher_targets(emb, 1, 1);
  auto a1 = m.execute(m.executor_context(emb, t1, 1));
  auto t2 = t1.clone();
  for (auto& v : t2.mutable_data()) v += 1.0;
  auto a2 = m.execute(m.executor_context(emb, t2, 1));
  double diff = 0;
  for (std::size_t i = 0; i < a1.numel(); ++i) {
    EXPECT_LE(std::abs(a1[i]), 1.0);
    diff = std::max(diff, std::abs(a1[i] - a2[i]));
  }
  EXPECT_GT(diff, 0.0);
}

TEST(Stopgrad, PlannerLossNeverReachesVisualEncoders) {
  PlexConfig cfg = tiny();
  cfg.use_returns = true;
  PlexModel<double> m(cfg, 60);
  auto traj = random_trajectory(cfg, 4, 61);
  plex::testing::run_backward<double>([&] { return m.planner_loss(traj); });
  EXPECT_EQ(plex::testing::sum_abs_grad(m.visual_parameters()), 0.0);
  EXPECT_GT(plex::testing::sum_abs_grad(m.planner_parameters()), 0.0);

  plex::testing::zero_grads(m.parameters());
  plex::testing::run_backward<double>([&] { return m.executor_loss(traj); });
  EXPECT_GT(plex::testing::sum_abs_grad(m.visual_parameters()), 0.0);
  EXPECT_EQ(plex::testing::sum_abs_grad(m.planner_parameters()), 0.0);
}

TEST(Presence, AbsentRewardsNeverTouchReturnEncoder) {
  PlexConfig cfg = tiny();
  cfg.use_returns = true;
  PlexModel<double> m(cfg, 62);
  auto traj = random_trajectory(cfg, 3, 63, {true, true, true, true, false});
  plex::testing::run_backward<double>([&] { return m.bc_loss(traj); });
  for (const auto& p : m.parameters()) {
    if (p.name.rfind("enc.return", 0) == 0) {
      EXPECT_FALSE(p.tensor.has_grad()) << p.name;
    }
  }
  EXPECT_TRUE(m.encoders().placeholder(Modality::ret).has_grad());
}

TEST(BcLoss, MatchesExecutorLossWithPlannedTargetsAndReachesEverything) {
  PlexConfig cfg = tiny();
  PlexModel<double> m(cfg, 64);
  auto traj = random_trajectory(cfg, 3, 65);
  auto emb = m.embed(traj, m.bc_request(traj, 2));
  auto planned = m.plan(m.planner_context(emb, 2));
  EXPECT_EQ(m.bc_window_loss(emb, traj, 2).item(), m.executor_window_loss(emb, traj, planned, 2).item());

  plex::testing::run_backward<double>([&] { return m.bc_loss(traj); });
  EXPECT_GT(plex::testing::sum_abs_grad(m.planner_parameters()), 0.0);
  EXPECT_GT(plex::testing::sum_abs_grad(m.visual_parameters()), 0.0);
  EXPECT_GT(plex::testing::sum_abs_grad(m.executor_parameters()), 0.0);
}

TEST(GradCheck, AllThreeLossesAtTinyConfig) {
  PlexConfig cfg = tiny();
  cfg.use_returns = true;
  PlexModel<double> m(cfg, 70);
  auto traj = random_trajectory(cfg, 4, 71);
  auto check = [&](const nn::ParamList<double>& ps, auto f) {
    auto params = plex::testing::tensors_of(ps);
    auto r = tensor::grad_check(f, params);
    if (r.max_rel_error > 1e-4) {
      ADD_FAILURE() << ps[r.param].name << "[" << r.element << "] analytic " << r.analytic << " numeric " << r.numeric;
    }
    return r.max_rel_error;
  };
  nn::ParamList<double> non_visual;
  auto visual = m.visual_parameters();
  for (const auto& p : m.parameters()) {
    bool vis = std::any_of(visual.begin(), visual.end(), [&](const auto& v) { return v.name == p.name; });
    if (!vis) non_visual.push_back(p);
  }
  EXPECT_LE(check(non_visual, [&] { return m.planner_loss(traj); }), 1e-4);
  EXPECT_LE(check(m.parameters(), [&] { return m.executor_loss(traj); }), 1e-4);
  EXPECT_LE(check(m.parameters(), [&] { return m.bc_loss(traj); }), 1e-4);
}

TEST(Act, BoundedDeterministicAndDecomposes) {
  PlexConfig cfg = tiny();
  PlexModel<double> m(cfg, 80);
  auto traj = random_trajectory(cfg, 5, 81);
  const std::size_t t = 4, isz = 192;
  std::span<const float> images(traj.images.data(), t * isz), proprio(traj.proprio.data(), t * 2),
      actions(traj.actions.data(), (t - 1) * 2);
  auto a = m.act(traj.goal, images, proprio, actions);
  auto b = m.act(traj.goal, images, proprio, actions);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a, b);
  for (float v : a) EXPECT_LE(std::abs(v), 1.0f);

  auto emb = m.embed(traj, m.bc_request(traj, t));
  auto planned = m.plan(m.planner_context(emb, t));
  auto manual = m.execute(m.executor_context(emb, planned, t));
  EXPECT_EQ(static_cast<float>(manual[4]), a[0]);
  EXPECT_EQ(static_cast<float>(manual[5]), a[1]);

  // the future of the buffer is never read
  auto longer = m.act(traj.goal, std::span<const float>(traj.images.data(), 5 * isz),
                      std::span<const float>(traj.proprio.data(), 10), std::span<const float>(traj.actions.data(), 8));
  auto again = m.act(traj.goal, images, proprio, actions);
  EXPECT_EQ(a, again);
  EXPECT_EQ(longer.size(), 2u);
}

TEST(Act, GoalImageConditioningFillsEveryTarget) {
  PlexConfig cfg = tiny();
  PlexModel<double> m(cfg, 82);
  auto traj = random_trajectory(cfg, 3, 83);
  auto a = m.act(traj.goal, traj.images, traj.proprio, std::span<const float>(traj.actions.data(), 4), {},
                 Conditioning::goal_image);
  auto emb = m.embed(traj, m.bc_request(traj, 3));
  auto goal = m.encoders().encode_images(traj.goal, 1);
  auto targets = tensor::index_rows(goal, {0, 0, 0});
  auto manual = m.execute(m.executor_context(emb, targets, 3));
  EXPECT_EQ(static_cast<float>(manual[4]), a[0]);
  EXPECT_EQ(static_cast<float>(manual[5]), a[1]);
}

TEST(Config, ValidationRules) {
  PlexConfig c = PlexConfig::desk();
  c.lookahead = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = PlexConfig::desk();
  c.executor.context_steps = c.planner.context_steps + 1;
  EXPECT_THROW(c.validate(), ContractError);
  c = PlexConfig::desk();
  c.planner.hidden = 16;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Config, FloatAndDoubleModelsShareInitialValues) {
  PlexConfig cfg = tiny();
  PlexModel<float> f(cfg, 90);
  PlexModel<double> d(cfg, 90);
  auto pf = f.parameters();
  auto pd = d.parameters();
  ASSERT_EQ(pf.size(), pd.size());
  for (std::size_t i = 0; i < pf.size(); ++i) {
    ASSERT_EQ(pf[i].name, pd[i].name);
    for (std::size_t k = 0; k < pf[i].tensor.numel(); ++k) {
      ASSERT_EQ(pf[i].tensor[k], static_cast<float>(pd[i].tensor[k]));
    }
  }
}
