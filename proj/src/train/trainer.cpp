#include "plex/train/trainer.hpp"

#include <cmath>
#include <set>

#include "plex/tensor/ops.hpp"

namespace plex::train {

namespace ops = plex::tensor;
using model::Modality;

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::executor_pretrain:
      return "executor_pretrain";
    case Stage::planner_pretrain:
      return "planner_pretrain";
    case Stage::finetune:
      return "finetune";
  }
  return "?";
}

std::string to_string(FinetuneScope scope) {
  switch (scope) {
    case FinetuneScope::planner_last_layer:
      return "planner_last_layer";
    case FinetuneScope::planner_executor_last:
      return "planner_executor_last";
    case FinetuneScope::full_bc:
      return "full_bc";
  }
  return "?";
}

FinetuneScope parse_finetune_scope(const std::string& name) {
  for (auto s : {FinetuneScope::planner_last_layer, FinetuneScope::planner_executor_last, FinetuneScope::full_bc}) {
    if (to_string(s) == name) return s;
  }
  throw ContractError("unknown finetune scope '" + name +
                      "' (expected planner_last_layer, planner_executor_last or full_bc)");
}

nn::ParamList<float> scope_parameters(const Model& model, FinetuneScope scope) {
  switch (scope) {
    case FinetuneScope::planner_last_layer:
      return model.planner_last_block();
    case FinetuneScope::planner_executor_last: {
      auto out = model.planner_last_block();
      for (auto& p : model.executor_last_block()) out.push_back(p);
      for (auto& p : model.action_head_parameters()) out.push_back(p);
      return out;
    }
    case FinetuneScope::full_bc:
      return model.parameters();
  }
  return {};
}

std::size_t count_elements(const nn::ParamList<float>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

namespace {

// all \ minus, by name
nn::ParamList<float> without(const nn::ParamList<float>& all, std::initializer_list<nn::ParamList<float>> minus) {
  std::set<std::string> drop;
  for (const auto& list : minus) {
    for (const auto& p : list) drop.insert(p.name);
  }
  nn::ParamList<float> out;
  for (const auto& p : all) {
    if (!drop.count(p.name)) out.push_back(p);
  }
  return out;
}

void require(const data::Dataset& data, Modality m, const std::string& who) {
  if (!data.all_have(m)) {
    throw ContractError(who + " needs " + nn::to_string(m) + " in every trajectory of the " +
                        data::to_string(data.kind) + " dataset");
  }
}

}  // namespace

StageTrainer::StageTrainer(Model& model, const data::Dataset& data, const TrainConfig& cfg, Stage stage,
                           FinetuneScope scope)
    : model_(&model), data_(&data), cfg_(cfg), stage_(stage), scope_(scope), opt_(AdamWConfig::from(cfg)) {
  cfg_.validate();
  if (data.spec != model.config().obs_spec()) {
    throw ContractError("dataset observation layout does not match the model");
  }
  const std::string who = stage == Stage::finetune ? "finetune(" + to_string(scope) + ")" : to_string(stage);
  require(data, Modality::image, who);
  const auto& st = model.stage();
  const auto all = model.parameters();
  switch (stage) {
    case Stage::executor_pretrain:
      require(data, Modality::action, who);
      trainable_ = st.encoders_frozen ? without(all, {model.planner_parameters(), model.visual_parameters()})
                                      : without(all, {model.planner_parameters()});
      break;
    case Stage::planner_pretrain:
      require(data, Modality::task, who);
      if (!st.executor_pretrained && !st.encoders_frozen) {
        throw StageOrderError(
            "planner pretraining needs a pretrained executor while encoders are trainable: the planner's "
            "targets are image embeddings, and executor training would move them afterwards. Pretrain the "
            "executor first or freeze the encoders.");
      }
      trainable_ = without(all, {model.executor_parameters(), model.visual_parameters()});
      break;
    case Stage::finetune:
      if (scope != FinetuneScope::full_bc && !(st.executor_pretrained && st.planner_pretrained)) {
        throw StageOrderError(who + " needs a model with both pretraining stages done");
      }
      if (uses_planner_loss()) require(data, Modality::task, who);
      if (uses_executor_loss()) require(data, Modality::action, who);
      trainable_ = scope_parameters(model, scope);
      break;
  }

  // Visual rows are constant during planner-only work (stopgrad, frozen encoders), so embed once.
  const bool cache = stage == Stage::planner_pretrain ||
                     (stage == Stage::finetune && scope != FinetuneScope::full_bc);
  if (cache) {
    for (const auto& t : data.trajectories) {
      CachedVisual c;
      c.images = model.encoders().encode_images(t.images, t.length);
      if (t.present.task) c.task = model.encoders().encode_task(t.goal);
      cache_.push_back(std::move(c));
    }
  }
}

std::size_t StageTrainer::planned_epochs() const {
  return stage_ == Stage::finetune ? cfg_.finetune_epochs : cfg_.epochs;
}

double StageTrainer::trainable_fraction() const {
  return static_cast<double>(count_elements(trainable_)) / static_cast<double>(count_elements(model_->parameters()));
}

bool StageTrainer::uses_planner_loss() const {
  return stage_ == Stage::planner_pretrain ||
         (stage_ == Stage::finetune && scope_ != FinetuneScope::full_bc);
}

bool StageTrainer::uses_executor_loss() const {
  return stage_ == Stage::executor_pretrain ||
         (stage_ == Stage::finetune && scope_ != FinetuneScope::planner_last_layer);
}

model::StepEmbeddings<float> StageTrainer::cached_planner_embeddings(std::size_t index) const {
  const auto& traj = data_->trajectories[index];
  model::StepEmbeddings<float> emb;
  if (model_->config().use_returns && traj.present.ret) {
    model::EmbedRequest req;
    req.ret = {1, traj.length};
    emb = model_->embed(traj, req);
  }
  emb[Modality::image] = cache_[index].images;
  emb.first_of(Modality::image) = 1;
  emb[Modality::task] = cache_[index].task;
  return emb;
}

tensor::Tensor<float> StageTrainer::window_loss(const WindowSample& w, Rng& rng) const {
  const auto& traj = data_->trajectories[w.trajectory];
  const Model& m = *model_;
  if (stage_ == Stage::finetune && scope_ == FinetuneScope::full_bc) {
    auto req = m.bc_request(traj, w.t_end);
    req.crop_rng = &rng;
    return m.bc_window_loss(m.embed(traj, req), traj, w.t_end, &rng);
  }
  tensor::Tensor<float> loss;
  if (uses_planner_loss()) {
    loss = m.planner_window_loss(cached_planner_embeddings(w.trajectory), traj.length, w.t_end, &rng);
  }
  if (uses_executor_loss()) {
    auto req = m.executor_request(traj, w.t_end);
    req.crop_rng = &rng;
    const auto emb = m.embed(traj, req);
    const auto ex = m.executor_window_loss(emb, traj, m.teacher_targets(emb, w.t_end, traj.length), w.t_end, &rng);
    loss = loss.defined() ? ops::add(loss, ex) : ex;
  }
  return loss;
}

double StageTrainer::run_epoch() {
  const auto all = model_->parameters();
  std::set<std::string> in_scope;
  for (const auto& p : trainable_) in_scope.insert(p.name);
  for (auto p : all) p.tensor.set_requires_grad(in_scope.count(p.name) > 0);

  const std::size_t epoch = ++epoch_;
  const std::size_t steps = stage_ == Stage::finetune ? cfg_.finetune_steps_per_epoch : cfg_.steps_per_epoch;
  const std::size_t k = uses_planner_loss() && !uses_executor_loss() ? model_->config().planner.context_steps
                                                                       : model_->config().executor.context_steps;
  // the executor sums steps 1..T-1, so its windows end before T
  const std::size_t margin = uses_executor_loss() ? 1 : 0;
  const auto stage_id = static_cast<std::uint64_t>(stage_) + 1;

  double total = 0.0;
  for (std::size_t step = 1; step <= steps; ++step) {
    Rng batch_rng(derive_seed(cfg_.seed, {stage_id, epoch, step}));
    const auto batch = sample_batch(*data_, k, cfg_.batch_size, batch_rng, margin);
    for (auto p : all) p.tensor.zero_grad();
    tensor::Tape<float> tape;
    double value = 0.0;
    {
      tensor::TapeScope<float> scope(tape);
      tensor::Tensor<float> sum;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng rng(derive_seed(cfg_.seed, {stage_id, epoch, step, i + 1}));
        const auto w = window_loss(batch[i], rng);
        sum = sum.defined() ? ops::add(sum, w) : w;
      }
      const auto loss = ops::scale(sum, 1.0f / static_cast<float>(batch.size()));
      value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError(to_string(stage_) + ": loss diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
      tape.backward(loss);
    }
    opt_.step(trainable_);
    total += value;
  }
  for (auto p : all) {
    p.tensor.zero_grad();
    p.tensor.set_requires_grad(true);
  }

  auto& st = model_->stage();
  if (stage_ == Stage::executor_pretrain) st.executor_pretrained = true;
  if (stage_ == Stage::planner_pretrain) st.planner_pretrained = true;
  return total / static_cast<double>(steps);
}

namespace {

StageReport run_stage(StageTrainer& trainer, const EpochHook& hook) {
  StageReport report;
  report.stage = trainer.stage();
  report.trainable_fraction = trainer.trainable_fraction();
  for (std::size_t e = 0; e < trainer.planned_epochs(); ++e) {
    const double loss = trainer.run_epoch();
    report.epoch_loss.push_back(loss);
    if (hook) hook({trainer.stage(), trainer.epochs_done(), loss});
  }
  return report;
}

}  // namespace

StageReport pretrain_executor(Model& model, const data::Dataset& vmt, const TrainConfig& cfg, const EpochHook& hook) {
  StageTrainer trainer(model, vmt, cfg, Stage::executor_pretrain);
  return run_stage(trainer, hook);
}

StageReport pretrain_planner(Model& model, const data::Dataset& mtvd, const TrainConfig& cfg, const EpochHook& hook) {
  StageTrainer trainer(model, mtvd, cfg, Stage::planner_pretrain);
  return run_stage(trainer, hook);
}

StageReport finetune(Model& model, const data::Dataset& ttd, const TrainConfig& cfg, FinetuneScope scope,
                     const EpochHook& hook) {
  StageTrainer trainer(model, ttd, cfg, Stage::finetune, scope);
  return run_stage(trainer, hook);
}

}  // namespace plex::train
