#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"
#include "plex/eval/diagnostics.hpp"
#include "plex/eval/experiment.hpp"
#include "plex/train/checkpoint.hpp"

using namespace plex;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Exit codes: 0 ok, 1 an invariant check failed, 2 usage, 3 the run raised an error.
constexpr int kInvariantFailed = 1;
constexpr int kRunError = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON); omitted keys keep their defaults")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--out", c.out, "output directory")->required();
}

eval::ExperimentConfig load_config(const Common& c) {
  eval::ExperimentConfig cfg;
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    cfg = eval::ExperimentConfig::from_json(json::parse(in));
  }
  if (c.seed) cfg.seed = *c.seed;
  fs::create_directories(c.out);
  if (cfg.metrics_path.empty()) cfg.metrics_path = (fs::path(c.out) / "metrics.jsonl").string();
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream(path) << j.dump(2) << "\n";
  std::cout << "wrote " << path.string() << "\n";
}

std::set<std::string> names_of(const nn::ParamList<float>& ps) {
  std::set<std::string> out;
  for (const auto& p : ps) out.insert(p.name);
  return out;
}

nn::ParamList<float> outside(const train::Model& m, const nn::ParamList<float>& in) {
  const auto keep = names_of(in);
  nn::ParamList<float> out;
  for (const auto& p : m.parameters()) {
    if (!keep.count(p.name)) out.push_back(p);
  }
  return out;
}

// Collects invariant failures; any failure turns the exit code to 1.
struct Checks {
  std::vector<std::string> failed;
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      failed.push_back(what);
      std::cerr << "invariant failed: " << what << "\n";
    }
  }
  int code() const { return failed.empty() ? 0 : kInvariantFailed; }
};

bool rates_in_unit_interval(const eval::EvalReport& r) {
  for (const auto& row : r.epoch_task_rates) {
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0)) return false;
    }
  }
  return true;
}

bool best_is_max(const eval::EvalReport& r) {
  if (r.curve.size() <= 1) return r.curve.empty() || r.best_rate == r.curve.front();
  return r.best_rate == *std::max_element(r.curve.begin() + 1, r.curve.end());
}

int gen_data(const Common& c) {
  auto cfg = load_config(c);
  eval::Pipeline p(cfg);
  const fs::path out(c.out);
  data::save_dataset(p.mtvd(), out / "mtvd.plxd");
  data::save_dataset(p.vmt(), out / "vmt.plxd");
  data::save_dataset(p.ttd(false), out / "ttd.plxd");
  data::save_dataset(p.ttd(true), out / "ttd_video.plxd");
  Checks checks;
  for (const auto& [name, ds] : {std::pair{"mtvd", &p.mtvd()}, {"vmt", &p.vmt()}, {"ttd", &p.ttd(false)}}) {
    std::cout << name << ": " << ds->trajectories.size() << " trajectories, " << ds->total_steps() << " steps\n";
  }
  checks.expect(p.ttd(false).trajectories.size() <= p.vmt().trajectories.size(), "|ttd| <= |vmt|");
  checks.expect(p.vmt().trajectories.size() <= p.mtvd().trajectories.size(), "|vmt| <= |mtvd|");
  checks.expect(!p.mtvd().all_have(model::Modality::action), "mtvd carries no actions");
  return checks.code();
}

int pretrain(const Common& c, const std::string& stage, const std::string& checkpoint) {
  auto cfg = load_config(c);
  eval::Pipeline p(cfg);
  if (!checkpoint.empty()) p.model() = train::load_checkpoint(checkpoint);
  Checks checks;
  auto& m = p.model();
  if (stage == "executor" || stage == "both") {
    const auto planner = train::checksum(m.planner_parameters());
    const auto r = p.pretrain_executor();
    std::cout << "executor loss " << r.epoch_loss.front() << " -> " << r.epoch_loss.back() << "\n";
    checks.expect(train::checksum(m.planner_parameters()) == planner, "executor stage leaves the planner unchanged");
  }
  if (stage == "planner" || stage == "both") {
    const auto frozen = outside(m, m.planner_parameters());
    const auto before = train::checksum(frozen);
    const auto r = p.pretrain_planner();
    std::cout << "planner loss " << r.epoch_loss.front() << " -> " << r.epoch_loss.back() << "\n";
    checks.expect(train::checksum(frozen) == before, "planner stage leaves encoders and executor unchanged");
  }
  train::save_checkpoint(m, fs::path(c.out) / "model.plxc");
  std::cout << "wrote " << (fs::path(c.out) / "model.plxc").string() << "\n";
  return checks.code();
}

int finetune(const Common& c, const std::string& scope_name, const std::string& checkpoint) {
  auto cfg = load_config(c);
  eval::Pipeline p(cfg);
  p.model() = train::load_checkpoint(checkpoint);
  const auto scope = train::parse_finetune_scope(scope_name);
  const bool video = scope == train::FinetuneScope::planner_last_layer;
  const auto rest = outside(p.model(), train::scope_parameters(p.model(), scope));
  const auto before = train::checksum(rest);
  auto report = p.finetune(scope, p.ttd(video), p.target_tasks(), "finetune:" + scope_name);
  Checks checks;
  checks.expect(train::checksum(rest) == before, "parameters outside the scope are bitwise unchanged");
  checks.expect(rates_in_unit_interval(report), "success rates lie in [0, 1]");
  checks.expect(best_is_max(report), "best-epoch rate is the curve maximum");
  train::save_checkpoint(p.model(), fs::path(c.out) / "model.plxc");
  write_json(fs::path(c.out) / "report.json", report.to_json());
  std::cout << "best epoch " << report.best_epoch << " rate " << report.best_rate << "\n";
  return checks.code();
}

int evaluate(const Common& c, const std::string& checkpoint, const std::string& policy_name, const std::string& mode,
             const std::string& split, std::optional<std::size_t> episodes) {
  auto cfg = load_config(c);
  if (episodes) cfg.eval_episodes = *episodes;
  eval::Pipeline p(cfg);
  std::vector<sim::TaskSpec> tasks = p.tasks();
  if (split != "all") tasks = sim::tasks_in(p.tasks(), split == "train" ? sim::Split::train : sim::Split::target);

  std::vector<double> rates;
  if (policy_name == "plex") {
    if (checkpoint.empty()) throw std::invalid_argument("--checkpoint is required for the plex policy");
    p.model() = train::load_checkpoint(checkpoint);
    rates = p.evaluate(mode == "goal_image" ? model::Conditioning::goal_image : model::Conditioning::planner, tasks);
  } else {
    std::unique_ptr<eval::Policy> policy;
    if (policy_name == "oracle") policy = std::make_unique<eval::OraclePolicy>(cfg.world);
    if (policy_name == "random") policy = std::make_unique<eval::RandomPolicy>();
    if (policy_name == "zero") policy = std::make_unique<eval::ZeroPolicy>();
    rates = eval::evaluate(*policy, tasks, cfg.eval_episodes, cfg.world, derive_seed(cfg.seed, {0xE7A1}));
  }
  auto report = eval::eval_protocol([](std::size_t) {}, 0, [&] { return rates; });
  report.experiment = "evaluate:" + policy_name;
  for (const auto& t : tasks) report.tasks.push_back(t.name);
  report.seeds = {cfg.seed};
  report.config_fingerprint = cfg.fingerprint();
  for (std::size_t i = 0; i < tasks.size(); ++i) std::cout << tasks[i].name << " " << rates[i] << "\n";
  std::cout << "mean " << eval::mean(rates) << "\n";
  write_json(fs::path(c.out) / "report.json", report.to_json());
  Checks checks;
  checks.expect(rates_in_unit_interval(report), "success rates lie in [0, 1]");
  return checks.code();
}

int experiment(const Common& c, const std::string& name) {
  const auto cfg = load_config(c);
  const auto report = eval::run_experiment(name, cfg);
  write_json(fs::path(c.out) / "report.json", report.to_json());
  std::cout << name << ": best epoch " << report.best_epoch << " rate " << report.best_rate << "\n";
  Checks checks;
  checks.expect(rates_in_unit_interval(report), "success rates lie in [0, 1]");
  checks.expect(best_is_max(report), "best-epoch rate is the curve maximum");
  return checks.code();
}

int gradcheck(const Common& c) {
  const auto cfg = load_config(c);
  json lines = json::array();
  Checks checks;
  auto all = eval::op_gradient_checks(cfg.seed);
  for (auto& l : eval::loss_gradient_checks(cfg.seed)) all.push_back(std::move(l));
  for (const auto& l : all) {
    const bool ok = l.max_rel_error <= eval::kGradCheckTolerance;
    std::printf("%-18s %.3e %s%s\n", l.name.c_str(), l.max_rel_error, ok ? "ok" : "FAIL at ", ok ? "" : l.worst.c_str());
    lines.push_back({{"name", l.name}, {"max_rel_error", l.max_rel_error}, {"worst", l.worst}, {"ok", ok}});
    checks.expect(ok, l.name + " gradient within tolerance");
  }
  write_json(fs::path(c.out) / "gradcheck.json", {{"tolerance", eval::kGradCheckTolerance}, {"checks", lines}});
  return checks.code();
}

int inspect_dataset(const Common& c, const std::string& path) {
  fs::create_directories(c.out);
  const auto ds = data::load_dataset(path);  // validates
  std::size_t shortest = SIZE_MAX, longest = 0;
  std::map<std::string, std::size_t> per_task;
  for (const auto& t : ds.trajectories) {
    shortest = std::min(shortest, t.length);
    longest = std::max(longest, t.length);
    ++per_task[t.task];
  }
  json present = json::object();
  for (auto m : nn::kAllModalities) present[nn::to_string(m)] = ds.all_have(m);
  const json summary = {{"kind", data::to_string(ds.kind)},
                        {"trajectories", ds.trajectories.size()},
                        {"steps", ds.total_steps()},
                        {"shortest", ds.trajectories.empty() ? 0 : shortest},
                        {"longest", longest},
                        {"per_task", per_task},
                        {"all_present", present},
                        {"generation_seed", ds.info.seed},
                        {"noise_std", ds.info.noise_std},
                        {"style", ds.info.style},
                        {"video_only", ds.info.video_only}};
  std::cout << summary.dump(2) << "\n";
  write_json(fs::path(c.out) / "summary.json", summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Staged planner/executor training on a synthetic push benchmark"};
  app.require_subcommand(1);

  Common c;
  auto* gen = app.add_subcommand("gen-data", "generate mtvd, vmt and ttd datasets");
  add_common(gen, c);

  std::string stage = "both", checkpoint, scope = "planner_last_layer";
  auto* pre = app.add_subcommand("pretrain", "executor then planner pretraining");
  add_common(pre, c);
  pre->add_option("--stage", stage)->check(CLI::IsMember({"executor", "planner", "both"}));
  pre->add_option("--checkpoint", checkpoint, "start from this model")->check(CLI::ExistingFile);

  auto* fine = app.add_subcommand("finetune", "finetune a pretrained model on target-task demos");
  add_common(fine, c);
  fine->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  fine->add_option("--scope", scope)->check(CLI::IsMember({"planner_last_layer", "planner_executor_last", "full_bc"}));

  std::string policy = "plex", mode = "planner", split = "target";
  std::optional<std::size_t> episodes;
  auto* ev = app.add_subcommand("evaluate", "closed-loop success rates");
  add_common(ev, c);
  ev->add_option("--checkpoint", checkpoint)->check(CLI::ExistingFile);
  ev->add_option("--policy", policy)->check(CLI::IsMember({"plex", "oracle", "random", "zero"}));
  ev->add_option("--mode", mode)->check(CLI::IsMember({"planner", "goal_image"}));
  ev->add_option("--split", split)->check(CLI::IsMember({"target", "train", "all"}));
  ev->add_option("--episodes", episodes, "episodes per task (default from config)");

  std::string name;
  auto* ex = app.add_subcommand("experiment", "run a named experiment end to end");
  add_common(ex, c);
  ex->add_option("--name", name)->required()->check(CLI::IsMember(eval::kExperiments));

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every op and loss");
  add_common(gc, c);

  std::string dataset;
  auto* insp = app.add_subcommand("inspect-dataset", "validate and summarize a dataset file");
  add_common(insp, c);
  insp->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(c);
    if (*pre) return pretrain(c, stage, checkpoint);
    if (*fine) return finetune(c, scope, checkpoint);
    if (*ev) return evaluate(c, checkpoint, policy, mode, split, episodes);
    if (*ex) return experiment(c, name);
    if (*gc) return gradcheck(c);
    if (*insp) return inspect_dataset(c, dataset);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRunError;
  }
  return kRunError;
}
