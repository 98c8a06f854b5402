// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero if any criterion fails.
//   acceptance [--only 1,2,...] [--seeds N]
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "plex/data/dataset.hpp"
#include "plex/eval/diagnostics.hpp"
#include "plex/eval/experiment.hpp"
#include "plex/model/random_trajectory.hpp"
#include "plex/tensor/ops.hpp"
#include "plex/train/checkpoint.hpp"

using namespace plex;
using model::Modality;
using model::PlexConfig;
using model::PlexModel;
using tensor::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double sum_abs_grad(const nn::ParamList<double>& ps) {
  double s = 0;
  for (const auto& p : ps) {
    for (double g : p.tensor.grad()) s += std::abs(g);
  }
  return s;
}

void backward(const std::function<Tensor<double>()>& f) {
  tensor::Tape<double> tape;
  tensor::TapeScope<double> scope(tape);
  tape.backward(f());
}

std::vector<double> row(const Tensor<double>& t, std::size_t r) {
  const std::size_t d = t.dim(1);
  return {t.data().begin() + r * d, t.data().begin() + (r + 1) * d};
}

double sq(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// ---- 1

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  auto lines = eval::op_gradient_checks(1);
  for (auto& l : eval::loss_gradient_checks(2)) lines.push_back(std::move(l));
  double worst = 0;
  std::string where;
  for (const auto& l : lines) {
    if (l.max_rel_error > worst) {
      worst = l.max_rel_error;
      where = l.name + " " + l.worst;
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst <= eval::kGradCheckTolerance && secs < 60.0;
  return {pass, std::to_string(lines.size()) + " checks, max rel err " + fmt("%.2e", worst) + " (" + where + "), " +
                    fmt("%.1f", secs) + " s"};
}

// ---- 2

Outcome stopgrad_exactness() {
  PlexConfig cfg = PlexConfig::tiny();
  cfg.use_returns = true;
  const PlexModel<double> m(cfg, 3);
  const auto traj = model::random_trajectory(cfg, 4, 4);
  backward([&] { return m.planner_loss(traj); });
  const double after_planner = sum_abs_grad(m.visual_parameters());
  for (auto p : m.parameters()) p.tensor.zero_grad();
  backward([&] { return m.executor_loss(traj); });
  const double after_executor = sum_abs_grad(m.visual_parameters());
  return {after_planner == 0.0 && after_executor > 0.0,
          "sum |grad| over visual encoders: planner loss " + fmt("%g", after_planner) + ", executor loss " +
              fmt("%.3g", after_executor)};
}

// ---- 3

Outcome loss_ranges() {
  double worst = 0;
  std::size_t cases = 0;
  for (std::size_t T = 1; T <= 4; ++T) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      PlexConfig cfg = PlexConfig::tiny();
      cfg.planner.context_steps = 4;
      cfg.executor.context_steps = 4;
      const PlexModel<double> m(cfg, 10 * T + seed);
      const auto traj = model::random_trajectory(cfg, T, 100 * T + seed);

      // planner: sum over t = 2 .. T + 1 of |Itilde_min(t, T) - Ihat_t|^2, Ihat_t from row t - 2
      const auto emb = m.embed(traj, m.planner_request(traj));
      const auto ihat = m.plan(m.planner_context(emb, T));
      double planner = 0;
      for (std::size_t t = 2; t <= T + 1; ++t) planner += sq(row(emb[Modality::image], std::min(t, T) - 1), row(ihat, t - 2));
      worst = std::max(worst, std::abs(m.planner_loss(traj).item() - planner));

      // executor: steps 1 .. T-1, each from its own window with teacher targets
      double executor = 0;
      for (std::size_t t = 1; t + 1 <= T; ++t) {
        const auto e = m.embed(traj, m.executor_request(traj, t));
        const auto a = m.execute(m.executor_context(e, m.teacher_targets(e, t, T), t));
        const std::vector<double> truth(traj.actions.begin() + (t - 1) * 2, traj.actions.begin() + t * 2);
        executor += sq(row(a, a.dim(0) - 1), truth);
      }
      worst = std::max(worst, std::abs(m.executor_loss(traj).item() - executor));
      cases += 2;
    }
  }
  return {worst <= 1e-6, std::to_string(cases) + " loss evaluations, max |loss - loop oracle| " + fmt("%.2e", worst)};
}

// ---- 4

Outcome positional_contracts() {
  const auto t0 = Clock::now();
  auto cfg_for = [](nn::PosMode mode) {
    nn::TransformerConfig c{2, 2, 8, 4, mode, 64, 0.0};
    return c;
  };
  auto positions = [](std::size_t n, std::size_t offset) {
    nn::TokenPositions p;
    for (std::size_t i = 0; i < n; ++i) p.timesteps.push_back(offset + i);
    return p;
  };
  Rng data(5);
  std::normal_distribution<double> normal;
  std::vector<double> v(6 * 8);
  for (auto& x : v) x = normal(data);
  const auto x = Tensor<double>::from({6, 8}, v);
  auto max_diff = [](const Tensor<double>& a, const Tensor<double>& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
  };
  Rng r1(6), r2(6);
  const nn::Transformer<double> rel(cfg_for(nn::PosMode::relative), 16, r1);
  const nn::Transformer<double> glob(cfg_for(nn::PosMode::global), 16, r2);
  const double rel_shift = max_diff(rel.forward(x, positions(6, 0)), rel.forward(x, positions(6, 23)));
  const double glob_shift = max_diff(glob.forward(x, positions(6, 0)), glob.forward(x, positions(6, 23)));

  bool causal = true;
  for (auto mode : {nn::PosMode::absolute, nn::PosMode::global, nn::PosMode::relative}) {
    Rng r(7);
    const nn::Transformer<double> tr(cfg_for(mode), 16, r);
    const auto base = tr.forward(x, positions(6, 3));
    for (std::size_t j = 0; j < 6; ++j) {
      auto xp = x.clone();
      for (std::size_t c = 0; c < 8; ++c) xp.mutable_data()[j * 8 + c] += 1.0;
      const auto y = tr.forward(xp, positions(6, 3));
      for (std::size_t i = 0; i < j * 8; ++i) causal = causal && y[i] == base[i];
    }
  }
  const double secs = seconds_since(t0);
  return {rel_shift == 0.0 && glob_shift > 0.0 && causal && secs < 60.0,
          "relative shift diff " + fmt("%g", rel_shift) + ", global shift diff " + fmt("%.3g", glob_shift) +
              ", causality " + (causal ? "exact" : "violated") + " in all modes, " + fmt("%.2f", secs) + " s"};
}

// ---- 5

data::Dataset random_dataset(data::DatasetKind kind, const PlexConfig& cfg, model::Presence present) {
  data::Dataset ds;
  ds.kind = kind;
  ds.spec = cfg.obs_spec();
  for (std::size_t i = 0; i < 4; ++i) ds.trajectories.push_back(model::random_trajectory(cfg, 5 + i, 50 + i, present));
  return ds;
}

Outcome stage_ordering() {
  const PlexConfig cfg = PlexConfig::tiny();
  const auto mtvd = random_dataset(data::DatasetKind::mtvd, cfg, {true, true, false, false, true});
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.steps_per_epoch = 2;
  tc.batch_size = 2;
  bool raised = false;
  std::string message;
  train::Model trainable(cfg, 1);
  try {
    train::pretrain_planner(trainable, mtvd, tc);
  } catch (const StageOrderError& e) {
    raised = true;
    message = e.what();
  }
  train::Model frozen(cfg, 1);
  frozen.stage().encoders_frozen = true;
  bool frozen_ok = true;
  try {
    train::pretrain_planner(frozen, mtvd, tc);
  } catch (const std::exception&) {
    frozen_ok = false;
  }
  return {raised && frozen_ok && frozen.stage().planner_pretrained,
          std::string("trainable encoders: ") + (raised ? "StageOrderError" : "no error") +
              "; frozen encoders: " + (frozen_ok ? "trained" : "failed")};
}

// ---- 6, 7: one pipeline per seed. The executor stage is shared: the executor-only baseline is
// evaluated on it before the planner is trained.

struct SeedRun {
  double random = 0, ex_only = 0, zero_shot = 0, video = 0;
  bool outside_unchanged = false;
};

std::map<std::string, std::vector<float>> snapshot(const nn::ParamList<float>& ps) {
  std::map<std::string, std::vector<float>> out;
  for (const auto& p : ps) out[p.name].assign(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

SeedRun run_seed(std::uint64_t seed) {
  eval::ExperimentConfig cfg;
  cfg.seed = seed;
  eval::Pipeline p(cfg);
  const auto targets = p.target_tasks();
  SeedRun r;
  eval::RandomPolicy random;
  r.random = eval::mean(eval::evaluate(random, targets, cfg.eval_episodes, cfg.world, derive_seed(seed, {0xE7A1})));
  p.pretrain_executor();
  r.ex_only = eval::mean(p.evaluate(model::Conditioning::goal_image, targets));
  p.pretrain_planner();
  r.zero_shot = eval::mean(p.evaluate(model::Conditioning::planner, targets));

  std::set<std::string> scope;
  for (const auto& q : train::scope_parameters(p.model(), train::FinetuneScope::planner_last_layer)) scope.insert(q.name);
  const auto before = snapshot(p.model().parameters());
  const auto report = p.finetune(train::FinetuneScope::planner_last_layer, p.ttd(true), targets, "video_finetune");
  r.video = report.best_rate;
  const auto after = snapshot(p.model().parameters());
  r.outside_unchanged = true;
  for (const auto& [name, values] : before) {
    if (!scope.count(name) && after.at(name) != values) r.outside_unchanged = false;
  }
  return r;
}

std::vector<SeedRun>& seed_runs(std::size_t n) {
  static std::vector<SeedRun> runs;
  while (runs.size() < n) runs.push_back(run_seed(runs.size() + 1));
  return runs;
}

std::string rates(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ",") + fmt("%.3f", x);
  return "[" + s + "]";
}

Outcome zero_shot(std::size_t n_seeds) {
  const auto t0 = Clock::now();
  const auto& runs = seed_runs(n_seeds);
  std::vector<double> rnd, ex, zs;
  for (const auto& r : runs) {
    rnd.push_back(r.random);
    ex.push_back(r.ex_only);
    zs.push_back(r.zero_shot);
  }
  const double m_rnd = eval::median(rnd), m_ex = eval::median(ex), m_zs = eval::median(zs);
  return {m_zs >= m_ex + 0.15 && m_ex > m_rnd,
          "median target success over " + std::to_string(runs.size()) + " seeds: zero-shot " + fmt("%.3f", m_zs) +
              " " + rates(zs) + ", executor-only " + fmt("%.3f", m_ex) + " " + rates(ex) + ", random " +
              fmt("%.3f", m_rnd) + " " + rates(rnd) + "; " + fmt("%.0f", seconds_since(t0)) + " s"};
}

Outcome video_finetune(std::size_t n_seeds) {
  const auto t0 = Clock::now();
  const auto& runs = seed_runs(n_seeds);
  std::vector<double> zs, ft;
  bool unchanged = true;
  for (const auto& r : runs) {
    zs.push_back(r.zero_shot);
    ft.push_back(r.video);
    unchanged = unchanged && r.outside_unchanged;
  }
  const double gain = eval::median(ft) - eval::median(zs);
  return {gain >= 0.10 && unchanged,
          "median after video finetuning " + fmt("%.3f", eval::median(ft)) + " " + rates(ft) + " vs zero-shot " +
              fmt("%.3f", eval::median(zs)) + " (gain " + fmt("%+.3f", gain) + "); parameters outside the planner's " +
              "last block " + (unchanged ? "bitwise unchanged" : "changed") + "; " + fmt("%.0f", seconds_since(t0)) +
              " s"};
}

// ---- 8

Outcome posenc_ablation() {
  const auto t0 = Clock::now();
  eval::ExperimentConfig cfg;
  cfg.seed = 8;
  cfg.posenc_sizes = {5, 25};
  const auto report = eval::run_experiment("posenc_ablation", cfg);
  const auto& table = report.extra.at("table");
  auto at = [&](const std::string& variant, std::size_t size) {
    return table.at(variant).at(std::to_string(size)).at("median").get<double>();
  };
  const double rel = at("relative", 5), abs = at("absolute", 5), glob = at("global", 5);
  std::string detail = "median success";
  for (std::size_t size : cfg.posenc_sizes) {
    detail += " |D|=" + std::to_string(size) + ":";
    for (const auto& v : eval::kPosencVariants) detail += " " + v + " " + fmt("%.3f", at(v, size));
  }
  return {rel >= abs && abs >= glob && rel - glob >= 0.10, detail + "; " + fmt("%.0f", seconds_since(t0)) + " s"};
}

// ---- 9

Outcome determinism_and_persistence() {
  eval::ExperimentConfig cfg;
  cfg.seed = 9;
  cfg.train.epochs = 1;
  cfg.train.steps_per_epoch = 4;
  cfg.train.batch_size = 8;
  cfg.generation.mtvd_per_task = 5;
  cfg.generation.vmt_per_task = 5;
  auto run = [&] {
    eval::Pipeline p(cfg);
    p.pretrain_executor();
    p.pretrain_planner();
    return std::pair{train::serialize_checkpoint(p.model()), data::serialize_dataset(p.vmt())};
  };
  const auto [ck1, ds1] = run();
  const auto [ck2, ds2] = run();
  const auto dir = fs::temp_directory_path() / "plex_acceptance";
  fs::create_directories(dir);
  const auto model = train::deserialize_checkpoint(ck1);
  train::save_checkpoint(model, dir / "model.plxc");
  const bool ck_round = train::serialize_checkpoint(train::load_checkpoint(dir / "model.plxc")) == ck1;
  data::save_dataset(data::deserialize_dataset(ds1), dir / "vmt.plxd");
  const bool ds_round = data::serialize_dataset(data::load_dataset(dir / "vmt.plxd")) == ds1;
  fs::remove_all(dir);
  const bool same = ck1 == ck2 && ds1 == ds2;
  return {same && ck_round && ds_round, std::string("repeat run ") + (same ? "bitwise identical" : "differs") +
                                            "; checkpoint round trip " + (ck_round ? "exact" : "differs") +
                                            "; dataset round trip " + (ds_round ? "exact" : "differs") + " (" +
                                            std::to_string(ck1.size()) + " checkpoint bytes)"};
}

// ---- 10

Outcome parameter_fraction() {
  const train::Model m(PlexConfig::table5(), 0);
  const double total = static_cast<double>(train::count_elements(m.parameters()));
  const double last =
      static_cast<double>(train::count_elements(train::scope_parameters(m, train::FinetuneScope::planner_last_layer)));
  const double f = last / total;
  return {f >= 0.03 && f <= 0.08, "planner last block " + fmt("%.0f", last) + " of " + fmt("%.0f", total) +
                                      " parameters = " + fmt("%.2f", 100.0 * f) + "%"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::size_t seeds = 5;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--seeds", seeds, "seeds for the zero-shot and finetuning criteria")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradient_oracle},  {2, stopgrad_exactness},          {3, loss_ranges},
      {4, positional_contracts}, {5, stage_ordering},
      {6, [&] { return zero_shot(seeds); }},
      {7, [&] { return video_finetune(seeds); }},
      {8, posenc_ablation},
      {9, determinism_and_persistence},
      {10, parameter_fraction},
  };
  const std::set<int> wanted(only.begin(), only.end());
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("raised: ") + e.what()};
    }
    std::printf("criterion %d: %s %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
