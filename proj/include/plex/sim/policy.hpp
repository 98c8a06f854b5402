#pragma once

#include <array>
#include <optional>
#include <string>

#include "plex/sim/world.hpp"

namespace plex::sim {

enum class Style { scripted, humanlike };

std::string to_string(Style style);
Style parse_style(const std::string& name);

// Waypoint controller. Push: circle the object at a safe radius to the pre-push point behind it,
// then push toward the goal. Reach: go straight to the goal. The humanlike style draws a per-episode
// speed factor in [0.4, 1] and a jittered via-point (+-0.1 per axis) visited before the pre-push point.
class ScriptedPolicy {
 public:
  ScriptedPolicy(const TaskSpec& task, Style style, const WorldConfig& cfg, Rng& rng);

  std::array<float, 2> operator()(const WorldState& s);

  double speed() const { return speed_; }

 private:
  Vec2 approach(const WorldState& s, Vec2 target) const;
  std::array<float, 2> move_toward(Vec2 from, Vec2 to) const;

  WorldConfig cfg_;
  double speed_ = 1.0;
  std::optional<Vec2> via_offset_;
  bool via_done_ = false;
};

// Controller constants.
inline constexpr double kPrePushStandoff = 0.11;  // pre-push point distance behind the object
inline constexpr double kOrbitRadius = 0.13;      // keep-out circle while moving around the object
inline constexpr double kPushAim = 0.04;          // aim point depth behind the object while pushing

}  // namespace plex::sim
