#include "plex/model/plex_model.hpp"

#include <algorithm>

namespace plex::model {

namespace ops = plex::tensor;

ObsSpec PlexConfig::obs_spec() const {
  const auto& im = encoder.image;
  return {im.cameras, im.channels, im.height, im.width, encoder.proprio_dim, encoder.action_dim};
}

void PlexConfig::validate() const {
  encoder.image.validate();
  planner.validate();
  executor.validate();
  if (planner.hidden != encoder.hidden || executor.hidden != encoder.hidden) {
    throw ContractError("plex: planner, executor and encoders must share one hidden size");
  }
  if (lookahead == 0) {
    throw ContractError("plex: lookahead must be at least 1");
  }
  if (planner.context_steps < executor.context_steps) {
    throw ContractError("plex: planner context must cover the executor context");
  }
  if (encoder.proprio_dim == 0 || encoder.action_dim == 0) {
    throw ContractError("plex: proprio and action dimensions must be positive");
  }
}

PlexConfig PlexConfig::desk() {
  PlexConfig cfg;
  cfg.encoder.hidden = 32;
  cfg.planner = {2, 2, 32, 10, PosMode::relative, 128, 0.1};
  cfg.executor = {2, 2, 32, 4, PosMode::relative, 128, 0.1};
  return cfg;
}

PlexConfig PlexConfig::tiny() {
  PlexConfig cfg;
  cfg.encoder.hidden = 8;
  cfg.encoder.image.height = 8;
  cfg.encoder.image.width = 8;
  cfg.encoder.image.crop_ratio = 0.75;
  cfg.encoder.image.conv = {{4, 3, 2, 1}, {4, 3, 2, 1}};
  cfg.planner = {1, 1, 8, 3, PosMode::relative, 16, 0.0};
  cfg.executor = {1, 1, 8, 3, PosMode::relative, 16, 0.0};
  return cfg;
}

PlexConfig PlexConfig::table5() {
  PlexConfig cfg;
  cfg.encoder.hidden = 256;
  cfg.encoder.image = nn::ImageEncoderConfig::resnet18_scale();
  cfg.planner = {3, 4, 256, 30, PosMode::relative, 500, 0.1};
  cfg.executor = {3, 4, 256, 30, PosMode::relative, 500, 0.1};
  return cfg;
}

std::string to_string(TokenRole role) {
  switch (role) {
    case TokenRole::task:
      return "task";
    case TokenRole::ret:
      return "return";
    case TokenRole::image:
      return "image";
    case TokenRole::proprio:
      return "proprio";
    case TokenRole::target:
      return "target";
    case TokenRole::prev_action:
      return "prev_action";
  }
  return "?";
}

bool ContextLayout::contains(TokenRole role) const {
  return std::any_of(slots.begin(), slots.end(), [role](const TokenSlot& s) { return s.role == role; });
}

std::vector<std::size_t> ContextLayout::positions_of(TokenRole role) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].role == role) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ContextLayout::timesteps() const {
  std::vector<std::size_t> out;
  out.reserve(slots.size());
  for (const auto& s : slots) out.push_back(s.step - 1);
  return out;
}

std::size_t planner_tokens_per_step(bool use_returns) { return use_returns ? 2 : 1; }

namespace {

ContextLayout window_frame(std::size_t t_end, std::size_t context_steps, std::size_t tokens_per_step) {
  if (t_end == 0) {
    throw ContractError("context window must end at step >= 1");
  }
  ContextLayout layout;
  layout.last_step = t_end;
  layout.first_step = t_end >= context_steps ? t_end - context_steps + 1 : 1;
  layout.pad_tokens = (context_steps - layout.steps()) * tokens_per_step;
  return layout;
}

}  // namespace

ContextLayout planner_layout(std::size_t t_end, std::size_t context_steps, bool use_returns) {
  ContextLayout layout = window_frame(t_end, context_steps, planner_tokens_per_step(use_returns));
  layout.slots.push_back({TokenRole::task, layout.first_step});
  for (std::size_t s = layout.first_step; s <= t_end; ++s) {
    if (use_returns) layout.slots.push_back({TokenRole::ret, s});
    layout.slots.push_back({TokenRole::image, s});
  }
  return layout;
}

ContextLayout executor_layout(std::size_t t_end, std::size_t context_steps) {
  ContextLayout layout = window_frame(t_end, context_steps, kExecutorTokensPerStep);
  for (std::size_t s = layout.first_step; s <= t_end; ++s) {
    layout.slots.push_back({TokenRole::prev_action, s});
    layout.slots.push_back({TokenRole::image, s});
    layout.slots.push_back({TokenRole::proprio, s});
    layout.slots.push_back({TokenRole::target, s});
  }
  return layout;
}

template <typename T>
PlexModel<T>::PlexModel(const PlexConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, {0x1D1E}));
  const std::size_t h = cfg_.hidden();
  encoders_ = nn::Encoders<T>(cfg_.encoder, rng);
  planner_ = nn::Transformer<T>(
      cfg_.planner, 1 + cfg_.planner.context_steps * planner_tokens_per_step(cfg_.use_returns), rng);
  plan_head_ = nn::Linear<T>(h, h, 0.02, rng);
  executor_ = nn::Transformer<T>(cfg_.executor, cfg_.executor.context_steps * kExecutorTokensPerStep, rng);
  action_head_ = nn::Linear<T>(h, cfg_.encoder.action_dim, 0.02, rng);
}

template <typename T>
StepEmbeddings<T> PlexModel<T>::embed(const Trajectory& traj, const EmbedRequest& req) const {
  const ObsSpec spec = cfg_.obs_spec();
  StepEmbeddings<T> emb;
  auto check = [&](const StepRange& r, const char* what) {
    if (!r.empty() && (r.first == 0 || r.last > traj.length)) {
      throw ContractError(std::string("embed: ") + what + " steps [" + std::to_string(r.first) + ", " +
                          std::to_string(r.last) + "] outside trajectory of length " + std::to_string(traj.length));
    }
  };
  check(req.image, "image");
  check(req.proprio, "proprio");
  check(req.action, "action");
  check(req.ret, "return");

  if (!req.image.empty() && traj.present.image) {
    const std::size_t n = req.image.last - req.image.first + 1;
    const std::size_t sz = spec.image_size();
    emb[Modality::image] = encoders_.encode_images(
        std::span<const float>(traj.images).subspan((req.image.first - 1) * sz, n * sz), n, req.crop_rng);
    emb.first_of(Modality::image) = req.image.first;
  }
  if (req.task && traj.present.task) {
    emb[Modality::task] = encoders_.encode_task(traj.goal);
  }
  auto lowdim = [&](const StepRange& r, Modality m, const std::vector<float>& values) {
    if (r.empty() || !traj.present.has(m)) return;
    const std::size_t d = encoders_.lowdim_size(m);
    const std::size_t n = r.last - r.first + 1;
    auto rows = std::span<const float>(values).subspan((r.first - 1) * d, n * d);
    if (m == Modality::ret) {
      std::vector<float> scaled(rows.begin(), rows.end());
      for (auto& v : scaled) v = static_cast<float>(v * cfg_.return_scale);
      emb[m] = encoders_.encode_lowdim(scaled, n, m);
    } else {
      emb[m] = encoders_.encode_lowdim(rows, n, m);
    }
    emb.first_of(m) = r.first;
  };
  if (!cfg_.mask_proprio) lowdim(req.proprio, Modality::proprio, traj.proprio);
  lowdim(req.action, Modality::action, traj.actions);
  lowdim(req.ret, Modality::ret, traj.returns);
  return emb;
}

template <typename T>
StepEmbeddings<T> PlexModel<T>::detach_visual(StepEmbeddings<T> emb) {
  for (auto m : {Modality::image, Modality::task}) {
    if (emb[m].defined()) emb[m] = ops::stop_gradient(emb[m]);
  }
  return emb;
}

template <typename T>
Tensor<T> PlexModel<T>::assemble(const StepEmbeddings<T>& emb, const ContextLayout& layout,
                                 const Tensor<T>* targets) const {
  // Gather every token from one stacked table: [defined embedding rows..., targets, placeholders].
  std::vector<Tensor<T>> parts;
  std::array<std::size_t, 5> offset{};
  std::array<std::size_t, 5> count{};
  std::size_t rows = 0;
  for (auto m : nn::kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (emb.rows[i].defined() && !(m == Modality::proprio && cfg_.mask_proprio)) {
      offset[i] = rows;
      count[i] = emb.rows[i].numel() / cfg_.hidden();
      rows += count[i];
      parts.push_back(emb.rows[i]);
    }
  }
  std::size_t target_offset = rows;
  if (targets != nullptr) {
    if (targets->rank() != 2 || targets->dim(0) != layout.steps() || targets->dim(1) != cfg_.hidden()) {
      throw DimensionError("executor context: targets must be [" + std::to_string(layout.steps()) + " x " +
                           std::to_string(cfg_.hidden()) + "], got " + tensor::shape_string(targets->shape()));
    }
    parts.push_back(*targets);
    rows += layout.steps();
  }
  std::array<std::size_t, 5> placeholder_row{};
  for (auto m : nn::kAllModalities) {
    placeholder_row[static_cast<std::size_t>(m)] = rows++;
    parts.push_back(encoders_.placeholder(m));
  }

  auto row_for = [&](Modality m, std::size_t step) -> std::size_t {
    const auto i = static_cast<std::size_t>(m);
    if (count[i] == 0) {
      if (m == Modality::image) {
        throw ContractError("context needs image embeddings for step " + std::to_string(step));
      }
      return placeholder_row[i];
    }
    if (m == Modality::task) return offset[i];
    const std::size_t first = emb.first[i];
    if (step < first || step - first >= count[i]) {
      throw ContractError("context needs " + nn::to_string(m) + " embedding for step " + std::to_string(step) +
                          " which was not computed");
    }
    return offset[i] + step - first;
  };

  std::vector<std::size_t> index;
  index.reserve(layout.slots.size());
  for (const auto& slot : layout.slots) {
    switch (slot.role) {
      case TokenRole::task:
        index.push_back(row_for(Modality::task, slot.step));
        break;
      case TokenRole::ret:
        index.push_back(row_for(Modality::ret, slot.step));
        break;
      case TokenRole::image:
        index.push_back(row_for(Modality::image, slot.step));
        break;
      case TokenRole::proprio:
        index.push_back(row_for(Modality::proprio, slot.step));
        break;
      case TokenRole::prev_action:
        index.push_back(slot.step == 1 ? placeholder_row[static_cast<std::size_t>(Modality::action)]
                                       : row_for(Modality::action, slot.step - 1));
        break;
      case TokenRole::target:
        index.push_back(target_offset + slot.step - layout.first_step);
        break;
    }
  }
  return ops::index_rows(ops::concat_rows(parts), index);
}

template <typename T>
ContextWindow<T> PlexModel<T>::planner_context(const StepEmbeddings<T>& emb, std::size_t t_end) const {
  ContextWindow<T> ctx;
  ctx.layout = planner_layout(t_end, cfg_.planner.context_steps, cfg_.use_returns);
  ctx.tokens = assemble(emb, ctx.layout, nullptr);
  return ctx;
}

template <typename T>
ContextWindow<T> PlexModel<T>::executor_context(const StepEmbeddings<T>& emb, const Tensor<T>& targets,
                                                std::size_t t_end) const {
  ContextWindow<T> ctx;
  ctx.layout = executor_layout(t_end, cfg_.executor.context_steps);
  ctx.tokens = assemble(emb, ctx.layout, &targets);
  return ctx;
}

template <typename T>
Tensor<T> PlexModel<T>::plan(const ContextWindow<T>& ctx, Rng* dropout_rng) const {
  const nn::TokenPositions pos{ctx.layout.pad_tokens, ctx.layout.timesteps()};
  const Tensor<T> out = planner_.forward(ctx.tokens, pos, dropout_rng);
  const auto rows = ctx.layout.positions_of(TokenRole::image);
  const Tensor<T> head = plan_head_(ops::index_rows(out, rows));
  return cfg_.residual_plan ? ops::add(head, ops::index_rows(ctx.tokens, rows)) : head;
}

template <typename T>
Tensor<T> PlexModel<T>::execute(const ContextWindow<T>& ctx, Rng* dropout_rng) const {
  const nn::TokenPositions pos{ctx.layout.pad_tokens, ctx.layout.timesteps()};
  const Tensor<T> out = executor_.forward(ctx.tokens, pos, dropout_rng);
  return ops::tanh(action_head_(ops::index_rows(out, ctx.layout.positions_of(TokenRole::target))));
}

template <typename T>
Tensor<T> PlexModel<T>::teacher_targets(const StepEmbeddings<T>& emb, std::size_t t_end, std::size_t length) const {
  const ContextLayout layout = executor_layout(t_end, cfg_.executor.context_steps);
  const Tensor<T>& images = emb[Modality::image];
  if (!images.defined()) {
    throw ContractError("teacher targets need image embeddings");
  }
  const std::size_t first = emb.first_of(Modality::image);
  std::vector<std::size_t> idx;
  for (std::size_t s = layout.first_step; s <= layout.last_step; ++s) {
    const std::size_t target = std::min(s + cfg_.lookahead, length);
    if (target < first || target - first >= images.dim(0)) {
      throw ContractError("teacher targets need the image embedding of step " + std::to_string(target));
    }
    idx.push_back(target - first);
  }
  return ops::index_rows(images, idx);
}

template <typename T>
Tensor<T> PlexModel<T>::planner_window_loss(const StepEmbeddings<T>& emb, std::size_t length, std::size_t t_end,
                                            Rng* dropout_rng) const {
  const ContextWindow<T> ctx = planner_context(emb, t_end);
  const Tensor<T> predicted = plan(ctx, dropout_rng);
  const Tensor<T>& images = emb[Modality::image];
  const std::size_t first = emb.first_of(Modality::image);
  std::vector<std::size_t> idx;
  for (std::size_t s = ctx.layout.first_step; s <= t_end; ++s) {
    // Eq. 1 target padding: Itilde_t = Itilde_T beyond the end
    const std::size_t target = std::min(s + cfg_.lookahead, length);
    if (target < first || target - first >= images.dim(0)) {
      throw ContractError("planner loss needs the image embedding of step " + std::to_string(target));
    }
    idx.push_back(target - first);
  }
  return ops::sum_sq_error(predicted, ops::index_rows(ops::stop_gradient(images), idx));
}

template <typename T>
Tensor<T> PlexModel<T>::executor_window_loss(const StepEmbeddings<T>& emb, const Trajectory& traj,
                                             const Tensor<T>& targets, std::size_t t_end, Rng* dropout_rng) const {
  if (!traj.present.action) {
    throw ContractError("executor loss needs actions; trajectory '" + traj.task + "' has none");
  }
  const ContextWindow<T> ctx = executor_context(emb, targets, t_end);
  const std::size_t first = ctx.layout.first_step;
  // Eq. 2 sums t = 1 .. T-1; a_T is padding
  const std::size_t last = std::min(t_end, traj.length - 1);
  if (last < first) {
    return Tensor<T>::scalar(T{0});
  }
  const std::size_t n = last - first + 1;
  Tensor<T> predicted = execute(ctx, dropout_rng);
  if (n < predicted.dim(0)) predicted = ops::slice_rows(predicted, 0, n);
  const std::size_t d = cfg_.encoder.action_dim;
  auto rows = std::span<const float>(traj.actions).subspan((first - 1) * d, n * d);
  return ops::sum_sq_error(predicted, Tensor<T>::from({n, d}, std::vector<T>(rows.begin(), rows.end())));
}

template <typename T>
Tensor<T> PlexModel<T>::bc_window_loss(const StepEmbeddings<T>& emb, const Trajectory& traj, std::size_t t_end,
                                       Rng* dropout_rng) const {
  const ContextWindow<T> pctx = planner_context(emb, t_end);
  const Tensor<T> planned = plan(pctx, dropout_rng);
  const ContextLayout elayout = executor_layout(t_end, cfg_.executor.context_steps);
  const std::size_t skip = elayout.first_step - pctx.layout.first_step;
  const Tensor<T> targets = skip == 0 ? planned : ops::slice_rows(planned, skip, planned.dim(0));
  return executor_window_loss(emb, traj, targets, t_end, dropout_rng);
}

template <typename T>
EmbedRequest PlexModel<T>::planner_request(const Trajectory& traj) const {
  EmbedRequest req;
  req.image = {1, traj.length};
  req.task = true;
  if (cfg_.use_returns) req.ret = {1, traj.length};
  return req;
}

template <typename T>
EmbedRequest PlexModel<T>::executor_request(const Trajectory& traj, std::size_t t_end) const {
  const ContextLayout layout = executor_layout(t_end, cfg_.executor.context_steps);
  EmbedRequest req;
  req.image = {layout.first_step, std::min(t_end + cfg_.lookahead, traj.length)};
  req.proprio = {layout.first_step, t_end};
  req.action = {std::max<std::size_t>(1, layout.first_step - 1), t_end - 1};
  return req;
}

template <typename T>
EmbedRequest PlexModel<T>::bc_request(const Trajectory&, std::size_t t_end) const {
  const ContextLayout pl = planner_layout(t_end, cfg_.planner.context_steps, cfg_.use_returns);
  const ContextLayout el = executor_layout(t_end, cfg_.executor.context_steps);
  EmbedRequest req;
  req.image = {pl.first_step, t_end};
  req.task = true;
  if (cfg_.use_returns) req.ret = {pl.first_step, t_end};
  req.proprio = {el.first_step, t_end};
  req.action = {std::max<std::size_t>(1, el.first_step - 1), t_end - 1};
  return req;
}

template <typename T>
Tensor<T> PlexModel<T>::planner_loss(const Trajectory& traj) const {
  if (!traj.present.image) {
    throw ContractError("planner loss needs images; trajectory '" + traj.task + "' has none");
  }
  const StepEmbeddings<T> emb = detach_visual(embed(traj, planner_request(traj)));
  const std::size_t k = cfg_.planner.context_steps;
  Tensor<T> total;
  for (std::size_t t_end = traj.length;; t_end -= k) {
    const Tensor<T> w = planner_window_loss(emb, traj.length, t_end);
    total = total.defined() ? ops::add(total, w) : w;
    if (t_end <= k) break;
  }
  return total;
}

template <typename T>
Tensor<T> PlexModel<T>::executor_loss(const Trajectory& traj) const {
  if (!traj.present.action || !traj.present.image) {
    throw ContractError("executor loss needs images and actions; trajectory '" + traj.task + "' lacks them");
  }
  if (traj.length < 2) return Tensor<T>::scalar(T{0});
  const std::size_t k = cfg_.executor.context_steps;
  Tensor<T> total;
  for (std::size_t t_end = traj.length - 1;; t_end -= k) {
    const StepEmbeddings<T> emb = embed(traj, executor_request(traj, t_end));
    const Tensor<T> w = executor_window_loss(emb, traj, teacher_targets(emb, t_end, traj.length), t_end);
    total = total.defined() ? ops::add(total, w) : w;
    if (t_end <= k) break;
  }
  return total;
}

template <typename T>
Tensor<T> PlexModel<T>::bc_loss(const Trajectory& traj) const {
  if (!traj.present.action || !traj.present.image) {
    throw ContractError("BC loss needs images and actions; trajectory '" + traj.task + "' lacks them");
  }
  if (traj.length < 2) return Tensor<T>::scalar(T{0});
  const std::size_t k = cfg_.executor.context_steps;
  Tensor<T> total;
  for (std::size_t t_end = traj.length - 1;; t_end -= k) {
    const StepEmbeddings<T> emb = embed(traj, bc_request(traj, t_end));
    const Tensor<T> w = bc_window_loss(emb, traj, t_end);
    total = total.defined() ? ops::add(total, w) : w;
    if (t_end <= k) break;
  }
  return total;
}

template <typename T>
std::vector<float> PlexModel<T>::act(std::span<const float> goal_image, std::span<const float> images,
                                     std::span<const float> proprio, std::span<const float> actions,
                                     std::span<const float> returns, Conditioning mode) const {
  const ObsSpec spec = cfg_.obs_spec();
  if (images.empty() || images.size() % spec.image_size() != 0) {
    throw DimensionError("act: need at least one whole observation");
  }
  const std::size_t t = images.size() / spec.image_size();
  if (proprio.size() != t * spec.proprio_dim || actions.size() != (t - 1) * spec.action_dim) {
    throw DimensionError("act: history lengths disagree (" + std::to_string(t) + " observations)");
  }
  Trajectory hist;
  hist.length = t;
  hist.present = {true, true, true, true, !returns.empty()};
  hist.goal.assign(goal_image.begin(), goal_image.end());
  hist.images.assign(images.begin(), images.end());
  hist.proprio.assign(proprio.begin(), proprio.end());
  hist.actions.assign(actions.begin(), actions.end());
  hist.actions.resize(t * spec.action_dim, 0.0f);
  hist.returns.assign(returns.begin(), returns.end());
  if (hist.present.ret && hist.returns.size() != t) {
    throw DimensionError("act: need one return-to-go per observation");
  }

  const StepEmbeddings<T> emb = embed(hist, bc_request(hist, t));
  const Tensor<T> goal = mode == Conditioning::goal_image ? encoders_.encode_images(goal_image, 1) : Tensor<T>();
  return act_embedded(emb, t, mode, goal);
}

template <typename T>
std::vector<float> PlexModel<T>::act_embedded(const StepEmbeddings<T>& emb, std::size_t t, Conditioning mode,
                                              const Tensor<T>& goal_row) const {
  Tensor<T> targets;
  const ContextLayout el = executor_layout(t, cfg_.executor.context_steps);
  if (mode == Conditioning::planner) {
    const ContextWindow<T> pctx = planner_context(emb, t);
    const Tensor<T> planned = plan(pctx);
    targets = ops::slice_rows(planned, el.first_step - pctx.layout.first_step, planned.dim(0));
  } else {
    if (!goal_row.defined()) {
      throw ContractError("act: goal-image conditioning needs the goal embedding");
    }
    targets = ops::index_rows(goal_row, std::vector<std::size_t>(el.steps(), 0));
  }
  const Tensor<T> out = execute(executor_context(emb, targets, t));
  const std::size_t d = cfg_.encoder.action_dim;
  auto last = out.data().subspan((out.dim(0) - 1) * d, d);
  return std::vector<float>(last.begin(), last.end());
}

template <typename T>
ParamList<T> PlexModel<T>::parameters() const {
  ParamList<T> out;
  encoders_.collect("enc", out);
  planner_.collect("planner", out);
  plan_head_.collect("plan_head", out);
  executor_.collect("executor", out);
  action_head_.collect("action_head", out);
  return out;
}

template <typename T>
ParamList<T> PlexModel<T>::visual_parameters() const {
  ParamList<T> out;
  encoders_.collect_visual("enc", out);
  return out;
}

template <typename T>
ParamList<T> PlexModel<T>::planner_parameters() const {
  ParamList<T> out;
  planner_.collect("planner", out);
  plan_head_.collect("plan_head", out);
  return out;
}

template <typename T>
ParamList<T> PlexModel<T>::executor_parameters() const {
  ParamList<T> out;
  executor_.collect("executor", out);
  action_head_.collect("action_head", out);
  return out;
}

template <typename T>
ParamList<T> PlexModel<T>::planner_last_block() const {
  ParamList<T> out;
  planner_.collect_block(planner_.n_layers() - 1, "planner", out);
  return out;
}

template <typename T>
ParamList<T> PlexModel<T>::executor_last_block() const {
  ParamList<T> out;
  executor_.collect_block(executor_.n_layers() - 1, "executor", out);
  return out;
}

template <typename T>
ParamList<T> PlexModel<T>::action_head_parameters() const {
  ParamList<T> out;
  action_head_.collect("action_head", out);
  return out;
}

template class PlexModel<float>;
template class PlexModel<double>;

}  // namespace plex::model
