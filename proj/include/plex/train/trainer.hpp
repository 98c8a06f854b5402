#pragma once

#include <functional>
#include <string>
#include <vector>

#include "plex/data/dataset.hpp"
#include "plex/model/plex_model.hpp"
#include "plex/train/batch.hpp"
#include "plex/train/optimizer.hpp"
#include "plex/train/train_config.hpp"

namespace plex::train {

using Model = model::PlexModel<float>;

enum class Stage { executor_pretrain, planner_pretrain, finetune };
// planner_last_layer: final planner block on the planner loss (video-only data suffices).
// planner_executor_last: adds the executor's final block and the action head, trained on both losses.
// full_bc: every parameter on the end-to-end behavior-cloning loss.
enum class FinetuneScope { planner_last_layer, planner_executor_last, full_bc };

std::string to_string(Stage stage);
std::string to_string(FinetuneScope scope);
FinetuneScope parse_finetune_scope(const std::string& name);

// Parameters a finetuning scope may change.
nn::ParamList<float> scope_parameters(const Model& model, FinetuneScope scope);
std::size_t count_elements(const nn::ParamList<float>& params);

struct EpochRecord {
  Stage stage;
  std::size_t epoch;  // 1-based
  double loss;        // mean batch loss over the epoch
};
using EpochHook = std::function<void(const EpochRecord&)>;

// Owns the optimizer for one stage and steps the model an epoch at a time. The constructor checks
// the stage-ordering and data contracts; nothing is modified until run_epoch().
class StageTrainer {
 public:
  StageTrainer(Model& model, const data::Dataset& data, const TrainConfig& cfg, Stage stage,
               FinetuneScope scope = FinetuneScope::planner_last_layer);

  double run_epoch();
  std::size_t epochs_done() const { return epoch_; }
  // cfg.epochs for pretraining stages, cfg.finetune_epochs for finetuning
  std::size_t planned_epochs() const;

  Stage stage() const { return stage_; }
  const nn::ParamList<float>& trainable() const { return trainable_; }
  // trainable elements / all model elements
  double trainable_fraction() const;

 private:
  struct CachedVisual {
    tensor::Tensor<float> images;  // [T x h]
    tensor::Tensor<float> task;    // [1 x h], undefined without a task
  };

  bool uses_planner_loss() const;
  bool uses_executor_loss() const;
  tensor::Tensor<float> window_loss(const WindowSample& w, Rng& rng) const;
  model::StepEmbeddings<float> cached_planner_embeddings(std::size_t index) const;

  Model* model_;
  const data::Dataset* data_;
  TrainConfig cfg_;
  Stage stage_;
  FinetuneScope scope_;
  nn::ParamList<float> trainable_;
  AdamW<float> opt_;
  std::vector<CachedVisual> cache_;
  std::size_t epoch_ = 0;
};

struct StageReport {
  Stage stage = Stage::executor_pretrain;
  std::vector<double> epoch_loss;
  double trainable_fraction = 0.0;
};

StageReport pretrain_executor(Model& model, const data::Dataset& vmt, const TrainConfig& cfg,
                              const EpochHook& hook = {});
// Throws StageOrderError when the executor has not been pretrained and encoders are trainable.
StageReport pretrain_planner(Model& model, const data::Dataset& mtvd, const TrainConfig& cfg,
                             const EpochHook& hook = {});
StageReport finetune(Model& model, const data::Dataset& ttd, const TrainConfig& cfg, FinetuneScope scope,
                     const EpochHook& hook = {});

}  // namespace plex::train
