#include "plex/sim/world.hpp"

#include <algorithm>
#include <numbers>
#include <random>

#include "plex/core/errors.hpp"

namespace plex::sim {

Vec2 unit(Vec2 v) {
  const double n = v.norm();
  return n > 0.0 ? v * (1.0 / n) : Vec2{};
}

double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

std::string to_string(TaskKind kind) { return kind == TaskKind::reach ? "reach" : "push"; }
std::string to_string(Split split) { return split == Split::train ? "train" : "target"; }

namespace {

Vec2 clamp_unit(Vec2 p) { return {std::clamp(p.x, 0.0, 1.0), std::clamp(p.y, 0.0, 1.0)}; }

}  // namespace

bool is_success(const WorldState& s, const WorldConfig& cfg) {
  const Vec2 tracked = s.kind == TaskKind::push ? s.object : s.agent;
  return distance(tracked, s.goal) < cfg.success_radius;
}

StepResult env_step(const WorldState& s, std::array<float, 2> action, const WorldConfig& cfg) {
  StepResult out;
  out.state = s;
  WorldState& n = out.state;
  const Vec2 a{std::clamp(static_cast<double>(action[0]), -1.0, 1.0),
               std::clamp(static_cast<double>(action[1]), -1.0, 1.0)};
  n.agent = clamp_unit(s.agent + a * cfg.step_size);
  if (n.kind == TaskKind::push && distance(n.agent, s.object) < cfg.contact_radius) {
    n.agent = clamp_unit(s.agent + a * (cfg.step_size * cfg.push_drag));
  }
  if (n.kind == TaskKind::push) {
    const Vec2 gap = n.object - n.agent;
    if (gap.norm() < cfg.contact_radius) {
      // coincident centers: push along the motion
      const Vec2 dir = gap.norm() > 0.0 ? unit(gap) : unit(a);
      n.object = clamp_unit(n.agent + dir * cfg.contact_radius);
    }
  }
  ++n.step_count;
  out.success = is_success(n, cfg);
  out.reward = out.success ? 0.0f : -1.0f;
  out.done = out.success || n.step_count >= cfg.horizon;
  return out;
}

std::vector<float> render(const WorldState& s, const WorldConfig& cfg) {
  const std::size_t n = cfg.image_size;
  std::vector<float> img(cfg.image_floats(), 0.0f);
  auto disc = [&](std::size_t channel, Vec2 c, double r) {
    const double r2 = r * r;
    for (std::size_t row = 0; row < n; ++row) {
      const double y = (static_cast<double>(row) + 0.5) / static_cast<double>(n);
      for (std::size_t col = 0; col < n; ++col) {
        const double x = (static_cast<double>(col) + 0.5) / static_cast<double>(n);
        const double dx = x - c.x, dy = y - c.y;
        if (dx * dx + dy * dy <= r2) img[(channel * n + row) * n + col] = 1.0f;
      }
    }
  };
  disc(0, s.agent, cfg.agent_radius);
  if (s.kind == TaskKind::push) disc(1, s.object, cfg.object_radius);
  disc(2, s.goal, cfg.goal_radius);
  return img;
}

std::vector<TaskSpec> make_tasks(const WorldConfig& cfg) {
  std::vector<TaskSpec> tasks;
  for (std::size_t i = 0; i < cfg.n_tasks; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(cfg.n_tasks);
    const Vec2 dir{std::cos(angle), std::sin(angle)};
    TaskSpec t;
    t.name = "push-" + std::to_string(i);
    t.kind = TaskKind::push;
    t.object_start = cfg.center;
    t.goal = cfg.center + dir * cfg.goal_distance;
    const bool held_out = std::find(cfg.target_tasks.begin(), cfg.target_tasks.end(), i) != cfg.target_tasks.end();
    t.split = held_out ? Split::target : Split::train;
    // terminal frame: object on the goal, agent just behind it along the push direction
    WorldState done{t.goal - dir * cfg.contact_radius, t.goal, t.goal, t.kind, 0};
    t.goal_image = render(done, cfg);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

std::vector<TaskSpec> tasks_in(const std::vector<TaskSpec>& tasks, Split split) {
  std::vector<TaskSpec> out;
  std::copy_if(tasks.begin(), tasks.end(), std::back_inserter(out), [split](const TaskSpec& t) { return t.split == split; });
  return out;
}

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, const std::string& name) {
  for (const auto& t : tasks) {
    if (t.name == name) return t;
  }
  throw ContractError("unknown task '" + name + "'");
}

WorldState reset(const TaskSpec& task, const WorldConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> jitter(-cfg.object_jitter, cfg.object_jitter);
  std::uniform_real_distribution<double> box(cfg.start_margin, 1.0 - cfg.start_margin);
  WorldState s;
  s.kind = task.kind;
  s.goal = task.goal;
  s.object = task.kind == TaskKind::push ? task.object_start + Vec2{jitter(rng), jitter(rng)} : task.object_start;
  for (;;) {
    s.agent = {box(rng), box(rng)};
    const bool clear = distance(s.agent, s.object) >= cfg.start_clearance &&
                       distance(s.agent, s.goal) >= cfg.success_radius + cfg.agent_radius;
    if (clear) break;
  }
  return s;
}

}  // namespace plex::sim
