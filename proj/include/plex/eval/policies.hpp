#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "plex/model/plex_model.hpp"
#include "plex/sim/policy.hpp"

namespace plex::eval {

// Closed-loop controller driven by rollout(): reset once per episode, then one act() per step.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual void reset(const sim::TaskSpec& task, std::uint64_t seed) = 0;
  // image is the rendered observation of state
  virtual std::array<float, 2> act(const sim::WorldState& state, std::span<const float> image) = 0;
  // reward of the action just taken
  virtual void observe_reward(float) {}
};

// Clean scripted controller with privileged state access; an upper bound.
class OraclePolicy : public Policy {
 public:
  explicit OraclePolicy(const sim::WorldConfig& world) : world_(world) {}
  std::string name() const override { return "oracle"; }
  void reset(const sim::TaskSpec& task, std::uint64_t seed) override;
  std::array<float, 2> act(const sim::WorldState& state, std::span<const float> image) override;

 private:
  sim::WorldConfig world_;
  std::optional<sim::ScriptedPolicy> inner_;
};

class ZeroPolicy : public Policy {
 public:
  std::string name() const override { return "zero"; }
  void reset(const sim::TaskSpec&, std::uint64_t) override {}
  std::array<float, 2> act(const sim::WorldState&, std::span<const float>) override { return {0.0f, 0.0f}; }
};

// Uniform actions in [-1, 1]^2.
class RandomPolicy : public Policy {
 public:
  std::string name() const override { return "random"; }
  void reset(const sim::TaskSpec&, std::uint64_t seed) override { rng_.seed(seed); }
  std::array<float, 2> act(const sim::WorldState&, std::span<const float>) override;

 private:
  Rng rng_;
};

// PLEX in the loop. Embeds each observation, action and return once and reassembles the context
// windows from the cached rows; matches PlexModel::act on the same history bit for bit.
class PlexAgent : public Policy {
 public:
  // goal_image conditioning feeds phi_I(goal) to every executor target slot (the executor-only baseline).
  PlexAgent(const model::PlexModel<float>& model, model::Conditioning mode, float target_return = 0.0f);

  std::string name() const override;
  void reset(const sim::TaskSpec& task, std::uint64_t seed) override;
  std::array<float, 2> act(const sim::WorldState& state, std::span<const float> image) override;
  void observe_reward(float reward) override;

 private:
  using Row = tensor::Tensor<float>;
  Row rows_for(const std::vector<Row>& cache, std::size_t first, std::size_t last) const;

  const model::PlexModel<float>* model_;
  model::Conditioning mode_;
  float target_return_;
  Row task_row_;
  Row goal_row_;
  std::vector<Row> images_, proprio_, actions_, returns_;
  float current_return_ = 0.0f;
};

}  // namespace plex::eval
