#include "plex/eval/policies.hpp"

#include <random>

#include "plex/tensor/ops.hpp"

namespace plex::eval {

namespace ops = plex::tensor;
using model::Modality;

void OraclePolicy::reset(const sim::TaskSpec& task, std::uint64_t seed) {
  Rng rng(seed);
  inner_.emplace(task, sim::Style::scripted, world_, rng);
}

std::array<float, 2> OraclePolicy::act(const sim::WorldState& state, std::span<const float>) {
  return (*inner_)(state);
}

std::array<float, 2> RandomPolicy::act(const sim::WorldState&, std::span<const float>) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  const float x = u(rng_);
  return {x, u(rng_)};
}

PlexAgent::PlexAgent(const model::PlexModel<float>& model, model::Conditioning mode, float target_return)
    : model_(&model), mode_(mode), target_return_(target_return) {}

std::string PlexAgent::name() const { return mode_ == model::Conditioning::planner ? "plex" : "executor_only"; }

void PlexAgent::reset(const sim::TaskSpec& task, std::uint64_t) {
  const auto& enc = model_->encoders();
  task_row_ = enc.encode_task(task.goal_image);
  goal_row_ = mode_ == model::Conditioning::goal_image ? enc.encode_images(task.goal_image, 1) : Row();
  images_.clear();
  proprio_.clear();
  actions_.clear();
  returns_.clear();
  current_return_ = target_return_;
}

PlexAgent::Row PlexAgent::rows_for(const std::vector<Row>& cache, std::size_t first, std::size_t last) const {
  if (first == last) return cache[first - 1];
  std::vector<Row> parts(cache.begin() + static_cast<std::ptrdiff_t>(first - 1),
                         cache.begin() + static_cast<std::ptrdiff_t>(last));
  return ops::concat_rows(parts);
}

std::array<float, 2> PlexAgent::act(const sim::WorldState& state, std::span<const float> image) {
  const auto& cfg = model_->config();
  const auto& enc = model_->encoders();
  images_.push_back(enc.encode_images(image, 1));
  const std::array<float, 2> p{static_cast<float>(state.agent.x), static_cast<float>(state.agent.y)};
  proprio_.push_back(enc.encode_lowdim(p, 1, Modality::proprio));
  if (cfg.use_returns) {
    const float scaled[1] = {static_cast<float>(current_return_ * cfg.return_scale)};
    returns_.push_back(enc.encode_lowdim(scaled, 1, Modality::ret));
  }
  const std::size_t t = images_.size();

  // mirror PlexModel::bc_request
  const auto pl = model::planner_layout(t, cfg.planner.context_steps, cfg.use_returns);
  const auto el = model::executor_layout(t, cfg.executor.context_steps);
  model::StepEmbeddings<float> emb;
  emb[Modality::task] = task_row_;
  emb[Modality::image] = rows_for(images_, pl.first_step, t);
  emb.first_of(Modality::image) = pl.first_step;
  if (!cfg.mask_proprio) {
    emb[Modality::proprio] = rows_for(proprio_, el.first_step, t);
    emb.first_of(Modality::proprio) = el.first_step;
  }
  if (t > 1) {
    const std::size_t first = std::max<std::size_t>(1, el.first_step - 1);
    emb[Modality::action] = rows_for(actions_, first, t - 1);
    emb.first_of(Modality::action) = first;
  }
  if (cfg.use_returns) {
    emb[Modality::ret] = rows_for(returns_, pl.first_step, t);
    emb.first_of(Modality::ret) = pl.first_step;
  }
  const auto out = model_->act_embedded(emb, t, mode_, goal_row_);
  const std::array<float, 2> a{out[0], out[1]};
  actions_.push_back(enc.encode_lowdim(a, 1, Modality::action));
  return a;
}

void PlexAgent::observe_reward(float reward) { current_return_ -= reward; }

}  // namespace plex::eval
