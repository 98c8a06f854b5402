#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "plex/model/trajectory.hpp"
#include "plex/nn/encoders.hpp"
#include "plex/nn/transformer.hpp"

namespace plex::model {

using nn::ParamList;
using nn::PosMode;
using tensor::Tensor;

struct PlexConfig {
  nn::EncoderConfig encoder;
  nn::TransformerConfig planner;
  nn::TransformerConfig executor;
  std::size_t lookahead = 1;
  // planner reads a return-to-go token before each image token
  bool use_returns = false;
  // executor always reads the proprio placeholder
  bool mask_proprio = false;
  // returns-to-go are multiplied by this before embedding
  double return_scale = 0.01;
  // planner head predicts the change from the current image embedding
  bool residual_plan = false;

  std::size_t hidden() const { return encoder.hidden; }
  ObsSpec obs_spec() const;
  void validate() const;

  // Small model used by the synthetic benchmark.
  static PlexConfig desk();
  // Smallest config exercising every path; used by gradient checks.
  static PlexConfig tiny();
  // 3 layers, h = 256, 4 heads, K = 30 with a ResNet-18-sized image backbone.
  static PlexConfig table5();
};

enum class TokenRole { task, ret, image, proprio, target, prev_action };

std::string to_string(TokenRole role);

struct TokenSlot {
  TokenRole role;
  std::size_t step;  // 1-based; the task prefix carries the window's first step
};

// Token layout of one context window over steps [first_step, last_step]. Shorter-than-K windows
// are left padded; padding tokens are elided and only their count is kept.
struct ContextLayout {
  std::size_t first_step = 1;
  std::size_t last_step = 0;
  std::size_t pad_tokens = 0;
  std::vector<TokenSlot> slots;

  std::size_t steps() const { return last_step + 1 - first_step; }
  bool contains(TokenRole role) const;
  std::vector<std::size_t> positions_of(TokenRole role) const;
  // 0-based absolute timestep per token
  std::vector<std::size_t> timesteps() const;
};

// Planner: [g] then per step (R if use_returns, I).
ContextLayout planner_layout(std::size_t t_end, std::size_t context_steps, bool use_returns);
// Executor: per step (a_{t-1}, I_t, p_t, Ihat_{t+L}); the action is read at the Ihat token.
ContextLayout executor_layout(std::size_t t_end, std::size_t context_steps);

// Embedded rows per modality. rows[m] covers steps first[m] .. first[m] + rows - 1;
// an undefined tensor means "read the placeholder".
template <typename T>
struct StepEmbeddings {
  std::array<Tensor<T>, 5> rows;
  std::array<std::size_t, 5> first{1, 1, 1, 1, 1};

  Tensor<T>& operator[](Modality m) { return rows[static_cast<std::size_t>(m)]; }
  const Tensor<T>& operator[](Modality m) const { return rows[static_cast<std::size_t>(m)]; }
  std::size_t& first_of(Modality m) { return first[static_cast<std::size_t>(m)]; }
  std::size_t first_of(Modality m) const { return first[static_cast<std::size_t>(m)]; }
};

template <typename T>
struct ContextWindow {
  ContextLayout layout;
  Tensor<T> tokens;  // [slots x h]
};

struct StepRange {
  std::size_t first = 1;
  std::size_t last = 0;
  bool empty() const { return last < first; }
};

// Which steps of which modality to embed.
struct EmbedRequest {
  StepRange image, proprio, action, ret;
  bool task = false;
  // random crops for images when set
  Rng* crop_rng = nullptr;
};

// Which pretraining stages have run, and whether the visual encoders may change. Planner pretraining
// with trainable encoders requires the executor stage first: the planner's targets live in the
// embedding space the executor shapes.
struct StageState {
  bool executor_pretrained = false;
  bool planner_pretrained = false;
  bool encoders_frozen = false;

  bool operator==(const StageState&) const = default;
};

// Which Ihat feeds the executor.
enum class Conditioning { planner, goal_image };

template <typename T>
class PlexModel {
 public:
  PlexModel() = default;
  PlexModel(const PlexConfig& cfg, std::uint64_t seed);

  const PlexConfig& config() const { return cfg_; }
  const nn::Encoders<T>& encoders() const { return encoders_; }
  const nn::Transformer<T>& planner() const { return planner_; }
  const nn::Transformer<T>& executor() const { return executor_; }
  StageState& stage() { return stage_; }
  const StageState& stage() const { return stage_; }

  // ---- embedding and context assembly

  StepEmbeddings<T> embed(const Trajectory& traj, const EmbedRequest& req) const;
  // Same embeddings with the visual rows (I, g) cut from the graph.
  static StepEmbeddings<T> detach_visual(StepEmbeddings<T> emb);

  ContextWindow<T> planner_context(const StepEmbeddings<T>& emb, std::size_t t_end) const;
  // targets: one Ihat row per executor step, aligned to executor_layout(t_end).
  ContextWindow<T> executor_context(const StepEmbeddings<T>& emb, const Tensor<T>& targets,
                                    std::size_t t_end) const;

  // Ihat_{s+L} for every step s of the window: [steps x h].
  Tensor<T> plan(const ContextWindow<T>& ctx, Rng* dropout_rng = nullptr) const;
  // ahat_s for every step s of the window: [steps x action_dim], tanh-squashed.
  Tensor<T> execute(const ContextWindow<T>& ctx, Rng* dropout_rng = nullptr) const;

  // Ground-truth future embeddings Itilde_{min(s+L, T)} for the executor window ending at t_end.
  Tensor<T> teacher_targets(const StepEmbeddings<T>& emb, std::size_t t_end, std::size_t length) const;

  // ---- losses on one window (sum of squares over the window's valid steps)

  // emb must hold image rows for steps 1..T and the task row.
  Tensor<T> planner_window_loss(const StepEmbeddings<T>& emb, std::size_t length, std::size_t t_end,
                                Rng* dropout_rng = nullptr) const;
  Tensor<T> executor_window_loss(const StepEmbeddings<T>& emb, const Trajectory& traj, const Tensor<T>& targets,
                                 std::size_t t_end, Rng* dropout_rng = nullptr) const;
  Tensor<T> bc_window_loss(const StepEmbeddings<T>& emb, const Trajectory& traj, std::size_t t_end,
                           Rng* dropout_rng = nullptr) const;

  // Requests covering what each window loss reads.
  EmbedRequest planner_request(const Trajectory& traj) const;
  EmbedRequest executor_request(const Trajectory& traj, std::size_t t_end) const;
  EmbedRequest bc_request(const Trajectory& traj, std::size_t t_end) const;

  // ---- full-trajectory losses (windows tiled back from the end)

  Tensor<T> planner_loss(const Trajectory& traj) const;
  Tensor<T> executor_loss(const Trajectory& traj) const;
  Tensor<T> bc_loss(const Trajectory& traj) const;

  // Closed-loop action for the latest step of a history. images: t image tuples; proprio: t rows;
  // actions: t-1 rows; returns: t rows when use_returns (empty otherwise).
  std::vector<float> act(std::span<const float> goal_image, std::span<const float> images,
                         std::span<const float> proprio, std::span<const float> actions,
                         std::span<const float> returns = {}, Conditioning mode = Conditioning::planner) const;

  // The decision part of act(): emb must cover bc_request(history, t). goal_row is phi_I(goal) [1 x h],
  // read only in goal_image mode.
  std::vector<float> act_embedded(const StepEmbeddings<T>& emb, std::size_t t, Conditioning mode,
                                  const Tensor<T>& goal_row = {}) const;

  // ---- parameters

  ParamList<T> parameters() const;
  ParamList<T> visual_parameters() const;
  ParamList<T> planner_parameters() const;  // transformer + head
  ParamList<T> executor_parameters() const;
  ParamList<T> planner_last_block() const;
  ParamList<T> executor_last_block() const;
  ParamList<T> action_head_parameters() const;

 private:
  Tensor<T> assemble(const StepEmbeddings<T>& emb, const ContextLayout& layout, const Tensor<T>* targets) const;
  std::size_t history_steps(std::size_t t) const;

  PlexConfig cfg_;
  nn::Encoders<T> encoders_;
  nn::Transformer<T> planner_;
  nn::Linear<T> plan_head_;
  nn::Transformer<T> executor_;
  nn::Linear<T> action_head_;
  StageState stage_;
};

std::size_t planner_tokens_per_step(bool use_returns);
inline constexpr std::size_t kExecutorTokensPerStep = 4;

}  // namespace plex::model
