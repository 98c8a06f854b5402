#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "plex/data/dataset.hpp"
#include "plex/eval/harness.hpp"
#include "plex/sim/generate.hpp"
#include "plex/train/metrics.hpp"
#include "plex/train/trainer.hpp"

namespace plex::eval {

struct ExperimentConfig {
  model::PlexConfig model = model::PlexConfig::desk();
  train::TrainConfig train = train::TrainConfig::desk();
  sim::WorldConfig world;
  sim::GenerationConfig generation;
  std::size_t eval_episodes = 50;
  std::uint64_t seed = 0;
  // dataset files; empty means generate from (world, generation, seed)
  std::string mtvd_path;
  std::string vmt_path;
  std::string ttd_path;
  // positional-encoding ablation grid
  std::vector<std::size_t> posenc_sizes = {5, 10, 25};
  std::size_t posenc_seeds = 3;
  std::string posenc_task = "push-2";
  // line-delimited metrics; empty disables
  std::string metrics_path;

  // Every field as JSON; also the basis of the report's config fingerprint.
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  std::string fingerprint() const;
};

inline const std::vector<std::string> kExperiments = {"zeroshot", "ex_only_baseline", "video_finetune", "full_finetune",
                                                      "posenc_ablation"};

// One seeded run of the staged recipe. Datasets are loaded or generated on first use, and each
// dataset is routed only to the stages that consume it.
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const std::vector<sim::TaskSpec>& tasks() const { return tasks_; }
  std::vector<sim::TaskSpec> target_tasks() const { return sim::tasks_in(tasks_, sim::Split::target); }
  train::Model& model() { return model_; }

  const data::Dataset& mtvd();
  const data::Dataset& vmt();
  // target demos: full modalities, or video-only
  const data::Dataset& ttd(bool video_only);

  train::StageReport pretrain_executor();
  train::StageReport pretrain_planner();

  std::vector<double> evaluate(model::Conditioning mode, const std::vector<sim::TaskSpec>& tasks);
  // eval_protocol over finetuning epochs; row 0 is the model as it stands.
  EvalReport finetune(train::FinetuneScope scope, const data::Dataset& data, const std::vector<sim::TaskSpec>& tasks,
                      const std::string& run_name);

  std::vector<std::string> datasets_used() const { return used_; }
  // R_1 fed to return-conditioned agents
  void set_target_return(float r) { target_return_ = r; }

 private:
  const data::Dataset& obtain(std::optional<data::Dataset>& slot, const std::string& path, data::DatasetKind kind,
                              bool video_only);
  void log(const std::string& stage, std::size_t epoch, std::optional<double> loss, std::optional<double> rate);

  ExperimentConfig cfg_;
  std::vector<sim::TaskSpec> tasks_;
  train::Model model_;
  std::optional<data::Dataset> mtvd_, vmt_, ttd_full_, ttd_video_;
  std::vector<std::string> used_;
  train::MetricsLog metrics_;
  float target_return_ = 0.0f;
};

// zeroshot: pretrain both stages, evaluate on target tasks. ex_only_baseline: executor stage only,
// goal-image conditioning. video_finetune / full_finetune: zeroshot, then finetune the planner's last
// block on video-only demos / the wider scope on full demos. posenc_ablation: single-task BC on
// humanlike demos for each positional encoding and dataset size.
// Throws std::runtime_error for a dataset path that does not exist.
EvalReport run_experiment(const std::string& name, const ExperimentConfig& cfg);

// The ablation's encodings: relative, absolute, global, global+returns.
inline const std::vector<std::string> kPosencVariants = {"relative", "absolute", "global", "global+returns"};
model::PlexConfig posenc_variant(model::PlexConfig base, const std::string& variant);

}  // namespace plex::eval
