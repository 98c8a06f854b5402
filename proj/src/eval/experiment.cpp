#include "plex/eval/experiment.hpp"

#include <algorithm>

#include "plex/io/config_json.hpp"

namespace plex::sim {

inline void to_json(nlohmann::json& j, Style s) { j = to_string(s); }
inline void from_json(const nlohmann::json& j, Style& s) { s = parse_style(j.get<std::string>()); }
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Vec2, x, y)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(WorldConfig, step_size, contact_radius, push_drag, success_radius, horizon,
                                                image_size, agent_radius, object_radius, goal_radius, center,
                                                goal_distance, n_tasks, target_tasks, object_jitter, start_margin,
                                                start_clearance)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenerationConfig, mtvd_per_task, vmt_per_task, ttd_per_task, ttd_pool,
                                                vmt_noise_std, style, ttd_video_only, retry_budget)

}  // namespace plex::sim

namespace plex::eval {

using nlohmann::json;
using model::Conditioning;

json ExperimentConfig::to_json() const {
  json j;
  j["model"] = model;
  j["train"] = train;
  j["world"] = world;
  j["generation"] = generation;
  j["eval_episodes"] = eval_episodes;
  j["seed"] = seed;
  j["mtvd_path"] = mtvd_path;
  j["vmt_path"] = vmt_path;
  j["ttd_path"] = ttd_path;
  j["posenc_sizes"] = posenc_sizes;
  j["posenc_seeds"] = posenc_seeds;
  j["posenc_task"] = posenc_task;
  j["metrics_path"] = metrics_path;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  // start from the defaults so a partial file only overrides what it names
  json merged = c.to_json();
  merged.merge_patch(j);
  c.model = merged.at("model").get<model::PlexConfig>();
  c.train = merged.at("train").get<train::TrainConfig>();
  c.world = merged.at("world").get<sim::WorldConfig>();
  c.generation = merged.at("generation").get<sim::GenerationConfig>();
  c.eval_episodes = merged.at("eval_episodes").get<std::size_t>();
  c.seed = merged.at("seed").get<std::uint64_t>();
  c.mtvd_path = merged.at("mtvd_path").get<std::string>();
  c.vmt_path = merged.at("vmt_path").get<std::string>();
  c.ttd_path = merged.at("ttd_path").get<std::string>();
  c.posenc_sizes = merged.at("posenc_sizes").get<std::vector<std::size_t>>();
  c.posenc_seeds = merged.at("posenc_seeds").get<std::size_t>();
  c.posenc_task = merged.at("posenc_task").get<std::string>();
  c.metrics_path = merged.at("metrics_path").get<std::string>();
  // merge_patch accepts keys the structs do not know; check them against a re-serialization
  io::require_known_keys(j, c.to_json(), "config");
  c.model.validate();
  c.train.validate();
  return c;
}

std::string ExperimentConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : to_json().dump()) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Pipeline::Pipeline(ExperimentConfig cfg)
    : cfg_(std::move(cfg)), tasks_(sim::make_tasks(cfg_.world)), model_(cfg_.model, cfg_.seed) {
  if (cfg_.model.obs_spec() != sim::obs_spec(cfg_.world)) {
    throw ContractError("model observation layout does not match the rendered world");
  }
  if (!cfg_.metrics_path.empty()) metrics_ = train::MetricsLog(cfg_.metrics_path);
}

void Pipeline::log(const std::string& stage, std::size_t epoch, std::optional<double> loss,
                   std::optional<double> rate) {
  metrics_.write({"seed-" + std::to_string(cfg_.seed), stage, epoch, loss, rate});
}

const data::Dataset& Pipeline::obtain(std::optional<data::Dataset>& slot, const std::string& path,
                                      data::DatasetKind kind, bool video_only) {
  if (slot) return *slot;
  const std::string label = data::to_string(kind) + (kind == data::DatasetKind::ttd && video_only ? " (video-only)" : "");
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) {
      throw std::runtime_error(label + " dataset not found at '" + path + "'");
    }
    slot = data::load_dataset(path);
    if (slot->kind != kind) {
      throw ContractError("'" + path + "' holds a " + data::to_string(slot->kind) + " dataset, expected " +
                          data::to_string(kind));
    }
  } else {
    const sim::Split split = kind == data::DatasetKind::mtvd ? sim::Split::train : sim::Split::target;
    sim::GenerationConfig gen = cfg_.generation;
    gen.ttd_video_only = video_only;
    const auto& g = cfg_.generation;
    const std::size_t n = kind == data::DatasetKind::mtvd  ? g.mtvd_per_task
                          : kind == data::DatasetKind::vmt ? g.vmt_per_task
                                                           : g.ttd_per_task;
    slot = sim::generate_dataset(kind, sim::tasks_in(tasks_, split), n, cfg_.world, gen,
                                 derive_seed(cfg_.seed, {0xDA7A, static_cast<std::uint64_t>(kind)}));
  }
  used_.push_back(label);
  return *slot;
}

const data::Dataset& Pipeline::mtvd() { return obtain(mtvd_, cfg_.mtvd_path, data::DatasetKind::mtvd, true); }
const data::Dataset& Pipeline::vmt() { return obtain(vmt_, cfg_.vmt_path, data::DatasetKind::vmt, false); }

const data::Dataset& Pipeline::ttd(bool video_only) {
  if (video_only && !cfg_.ttd_path.empty()) {
    // a full-modality file serves video-only use too
    const auto& full = obtain(ttd_full_, cfg_.ttd_path, data::DatasetKind::ttd, false);
    if (!ttd_video_) {
      data::Dataset v = full;
      for (auto& t : v.trajectories) {
        t.present.action = t.present.proprio = false;
        t.actions.clear();
        t.proprio.clear();
      }
      v.info.video_only = true;
      ttd_video_ = std::move(v);
    }
    return *ttd_video_;
  }
  return video_only ? obtain(ttd_video_, "", data::DatasetKind::ttd, true)
                    : obtain(ttd_full_, cfg_.ttd_path, data::DatasetKind::ttd, false);
}

namespace {

train::TrainConfig seeded(const ExperimentConfig& cfg) {
  train::TrainConfig t = cfg.train;
  t.seed = derive_seed(cfg.seed, {cfg.train.seed});
  return t;
}

}  // namespace

train::StageReport Pipeline::pretrain_executor() {
  return train::pretrain_executor(model_, vmt(), seeded(cfg_), [this](const train::EpochRecord& r) {
    log(train::to_string(r.stage), r.epoch, r.loss, std::nullopt);
  });
}

train::StageReport Pipeline::pretrain_planner() {
  return train::pretrain_planner(model_, mtvd(), seeded(cfg_), [this](const train::EpochRecord& r) {
    log(train::to_string(r.stage), r.epoch, r.loss, std::nullopt);
  });
}

std::vector<double> Pipeline::evaluate(Conditioning mode, const std::vector<sim::TaskSpec>& tasks) {
  PlexAgent agent(model_, mode, target_return_);
  return eval::evaluate(agent, tasks, cfg_.eval_episodes, cfg_.world, derive_seed(cfg_.seed, {0xE7A1}));
}

EvalReport Pipeline::finetune(train::FinetuneScope scope, const data::Dataset& data,
                              const std::vector<sim::TaskSpec>& tasks, const std::string& run_name) {
  train::StageTrainer trainer(model_, data, seeded(cfg_), train::Stage::finetune, scope);
  const std::string stage = "finetune:" + train::to_string(scope);
  double last_loss = 0.0;
  EvalReport report = eval_protocol(
      [&](std::size_t) { last_loss = trainer.run_epoch(); },
      trainer.planned_epochs(), [&] { return evaluate(Conditioning::planner, tasks); },
      [&](std::size_t epoch, double rate) {
        log(stage, epoch, epoch == 0 ? std::nullopt : std::optional<double>(last_loss), rate);
      });
  report.experiment = run_name;
  for (const auto& t : tasks) report.tasks.push_back(t.name);
  report.seeds = {cfg_.seed};
  report.config_fingerprint = cfg_.fingerprint();
  report.extra["trainable_fraction"] = trainer.trainable_fraction();
  return report;
}

model::PlexConfig posenc_variant(model::PlexConfig base, const std::string& variant) {
  const bool returns = variant == "global+returns";
  const model::PosMode mode = returns ? model::PosMode::global : nn::parse_pos_mode(variant);
  base.planner.pos_mode = mode;
  base.executor.pos_mode = mode;
  base.use_returns = returns;
  base.validate();
  return base;
}

namespace {

EvalReport single_eval(Pipeline& p, Conditioning mode, const std::string& name) {
  const auto targets = p.target_tasks();
  EvalReport r = eval_protocol([](std::size_t) {}, 0, [&] { return p.evaluate(mode, targets); });
  r.experiment = name;
  for (const auto& t : targets) r.tasks.push_back(t.name);
  r.seeds = {p.config().seed};
  r.config_fingerprint = p.config().fingerprint();
  return r;
}

EvalReport posenc_ablation(const ExperimentConfig& cfg) {
  const auto tasks = sim::make_tasks(cfg.world);
  const sim::TaskSpec& task = sim::find_task(tasks, cfg.posenc_task);
  if (task.split != sim::Split::target) {
    throw ContractError("posenc_ablation runs on a target task; '" + task.name + "' is a train task");
  }
  json table = json::object();
  for (const auto& variant : kPosencVariants) {
    for (std::size_t size : cfg.posenc_sizes) {
      std::vector<double> runs;
      for (std::size_t s = 0; s < cfg.posenc_seeds; ++s) {
        ExperimentConfig sub = cfg;
        sub.seed = derive_seed(cfg.seed, {0xAB1A, s});
        sub.model = posenc_variant(cfg.model, variant);
        // demos depend on the seed and size only, so every encoding sees the same data
        data::Dataset demos;
        if (!cfg.ttd_path.empty()) {
          if (!std::filesystem::exists(cfg.ttd_path)) {
            throw std::runtime_error("ttd dataset not found at '" + cfg.ttd_path + "'");
          }
          demos = data::load_dataset(cfg.ttd_path);
          std::erase_if(demos.trajectories, [&](const auto& t) { return t.task != task.name; });
          if (demos.trajectories.size() < size) {
            throw ContractError("'" + cfg.ttd_path + "' has " + std::to_string(demos.trajectories.size()) +
                                " demos of " + task.name + ", ablation needs " + std::to_string(size));
          }
          demos.trajectories.resize(size);
        } else {
          sim::GenerationConfig gen = cfg.generation;
          gen.style = sim::Style::humanlike;
          gen.ttd_video_only = false;
          demos = sim::generate_dataset(data::DatasetKind::ttd, {task}, size, cfg.world, gen,
                                        derive_seed(cfg.seed, {0xDE30, s}));
        }
        Pipeline p(sub);
        if (sub.model.use_returns) {
          double r1 = 0.0;
          for (const auto& t : demos.trajectories) r1 += t.returns.front();
          p.set_target_return(static_cast<float>(r1 / static_cast<double>(demos.trajectories.size())));
        }
        const EvalReport r = p.finetune(train::FinetuneScope::full_bc, demos, {task},
                                        "posenc:" + variant + ":" + std::to_string(size));
        runs.push_back(r.best_rate);
      }
      table[variant][std::to_string(size)] = {{"median", median(runs)}, {"runs", runs}};
    }
  }
  EvalReport report;
  report.experiment = "posenc_ablation";
  report.tasks = {task.name};
  report.seeds = {cfg.seed};
  report.config_fingerprint = cfg.fingerprint();
  report.extra["table"] = table;
  return report;
}

}  // namespace

EvalReport run_experiment(const std::string& name, const ExperimentConfig& cfg) {
  if (std::find(kExperiments.begin(), kExperiments.end(), name) == kExperiments.end()) {
    throw ContractError("unknown experiment '" + name + "'");
  }
  if (name == "posenc_ablation") return posenc_ablation(cfg);

  Pipeline p(cfg);
  if (name == "ex_only_baseline") {
    p.pretrain_executor();
    auto r = single_eval(p, Conditioning::goal_image, name);
    r.extra["datasets"] = p.datasets_used();
    return r;
  }
  p.pretrain_executor();
  p.pretrain_planner();
  if (name == "zeroshot") {
    auto r = single_eval(p, Conditioning::planner, name);
    r.extra["datasets"] = p.datasets_used();
    return r;
  }
  const bool video = name == "video_finetune";
  const auto scope = video ? train::FinetuneScope::planner_last_layer : train::FinetuneScope::planner_executor_last;
  auto r = p.finetune(scope, p.ttd(video), p.target_tasks(), name);
  r.extra["zero_shot_rate"] = r.curve.front();
  r.extra["datasets"] = p.datasets_used();
  return r;
}

}  // namespace plex::eval
