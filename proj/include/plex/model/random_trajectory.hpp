#pragma once

#include <random>

#include "plex/model/plex_model.hpp"

namespace plex::model {

// Random trajectory matching cfg's observation layout. Returns-to-go follow -1 per step.
inline Trajectory random_trajectory(const PlexConfig& cfg, std::size_t length, std::uint64_t seed,
                            Presence present = {true, true, true, true, true}) {
  const ObsSpec spec = cfg.obs_spec();
  Rng rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f), sym(-1.0f, 1.0f);
  Trajectory t;
  t.length = length;
  t.present = present;
  t.task = "random";
  auto fill = [&](std::vector<float>& v, std::size_t n, auto& dist) {
    v.resize(n);
    for (auto& x : v) x = dist(rng);
  };
  if (present.task) fill(t.goal, spec.image_size(), unit);
  if (present.image) fill(t.images, length * spec.image_size(), unit);
  if (present.proprio) fill(t.proprio, length * spec.proprio_dim, unit);
  if (present.action) {
    fill(t.actions, length * spec.action_dim, sym);
    for (std::size_t i = (length - 1) * spec.action_dim; i < t.actions.size(); ++i) t.actions[i] = 0.0f;
  }
  if (present.ret) {
    t.returns.resize(length);
    for (std::size_t s = 0; s < length; ++s) t.returns[s] = -static_cast<float>(length - 1 - s);
  }
  return t;
}

}  // namespace plex::model
