#include "plex/sim/policy.hpp"

#include <algorithm>
#include <numbers>
#include <random>

#include "plex/core/errors.hpp"

namespace plex::sim {

std::string to_string(Style style) { return style == Style::scripted ? "scripted" : "humanlike"; }

Style parse_style(const std::string& name) {
  if (name == "scripted") return Style::scripted;
  if (name == "humanlike") return Style::humanlike;
  throw ContractError("unknown policy style '" + name + "' (expected scripted or humanlike)");
}

namespace {

// distance from p to segment [a, b]
double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return distance(p, a + ab * t);
}

Vec2 polar(double angle, double r) { return {r * std::cos(angle), r * std::sin(angle)}; }

}  // namespace

ScriptedPolicy::ScriptedPolicy(const TaskSpec& task, Style style, const WorldConfig& cfg, Rng& rng) : cfg_(cfg) {
  (void)task;
  if (style == Style::humanlike) {
    std::uniform_real_distribution<double> speed(0.4, 1.0), jitter(-0.1, 0.1);
    speed_ = speed(rng);
    via_offset_ = Vec2{jitter(rng), jitter(rng)};
  }
}

std::array<float, 2> ScriptedPolicy::move_toward(Vec2 from, Vec2 to) const {
  Vec2 a = (to - from) * (1.0 / cfg_.step_size);
  if (a.norm() > speed_) a = unit(a) * speed_;
  return {static_cast<float>(std::clamp(a.x, -1.0, 1.0)), static_cast<float>(std::clamp(a.y, -1.0, 1.0))};
}

// Next waypoint toward target that keeps the agent outside the orbit circle around the object.
Vec2 ScriptedPolicy::approach(const WorldState& s, Vec2 target) const {
  if (segment_distance(s.object, s.agent, target) >= kPrePushStandoff - 0.01) return target;
  const Vec2 rel = s.agent - s.object;
  const double here = std::atan2(rel.y, rel.x);
  const Vec2 trel = target - s.object;
  double delta = std::atan2(trel.y, trel.x) - here;
  while (delta > std::numbers::pi) delta -= 2.0 * std::numbers::pi;
  while (delta < -std::numbers::pi) delta += 2.0 * std::numbers::pi;
  const double max_turn = 40.0 * std::numbers::pi / 180.0;
  const double turn = std::clamp(delta, -max_turn, max_turn);
  return s.object + polar(here + turn, kOrbitRadius);
}

std::array<float, 2> ScriptedPolicy::operator()(const WorldState& s) {
  if (s.kind == TaskKind::reach) {
    return move_toward(s.agent, s.goal);
  }
  const Vec2 u = unit(s.goal - s.object);
  const Vec2 pre = s.object - u * kPrePushStandoff;
  if (via_offset_ && !via_done_) {
    Vec2 via = pre + *via_offset_;
    if (distance(via, s.object) < kOrbitRadius) via = s.object + unit(via - s.object) * kOrbitRadius;
    if (distance(s.agent, via) < 0.02) {
      via_done_ = true;
    } else {
      return move_toward(s.agent, approach(s, via));
    }
  }
  const Vec2 to_object = s.object - s.agent;
  const bool behind = to_object.norm() < kOrbitRadius + 0.01 && unit(to_object).dot(u) > std::cos(std::numbers::pi / 6.0);
  if (behind) {
    return move_toward(s.agent, s.object - u * kPushAim);
  }
  return move_toward(s.agent, approach(s, pre));
}

}  // namespace plex::sim
