#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "plex/core/random.hpp"

namespace plex::sim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  bool operator==(const Vec2&) const = default;
};

// Unit vector, or zero for a zero input.
Vec2 unit(Vec2 v);
double distance(Vec2 a, Vec2 b);

// Every constant of the synthetic world in one place.
struct WorldConfig {
  double step_size = 0.07;       // agent displacement per unit action
  double contact_radius = 0.08;  // agent-object distance below which the object is pushed
  double push_drag = 0.3;        // agent speed factor while pushing
  double success_radius = 0.06;
  std::size_t horizon = 100;     // actions per episode
  std::size_t image_size = 24;
  double agent_radius = 0.08;  // rendered disc radii
  double object_radius = 0.08;
  double goal_radius = 0.06;
  // benchmark layout: n_tasks push goals on a circle around the object's start
  Vec2 center{0.5, 0.5};
  double goal_distance = 0.2;
  std::size_t n_tasks = 10;
  std::vector<std::size_t> target_tasks = {2, 7};
  double object_jitter = 0.02;  // uniform start offset per axis
  double start_margin = 0.15;   // agent starts in [margin, 1 - margin]^2
  double start_clearance = 0.2; // ... at least this far from the object

  std::size_t channels() const { return 3; }
  std::size_t image_floats() const { return channels() * image_size * image_size; }
};

enum class TaskKind { reach, push };
enum class Split { train, target };

std::string to_string(TaskKind kind);
std::string to_string(Split split);

struct WorldState {
  Vec2 agent;
  Vec2 object;
  Vec2 goal;
  TaskKind kind = TaskKind::push;
  std::size_t step_count = 0;
};

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::push;
  Vec2 goal;
  Vec2 object_start;
  Split split = Split::train;
  std::vector<float> goal_image;  // rendered canonical terminal frame
};

struct StepResult {
  WorldState state;
  float reward = -1.0f;
  bool done = false;
  bool success = false;
};

bool is_success(const WorldState& s, const WorldConfig& cfg);

// Moves the agent by step_size * clamp(action), pushes the object on contact, and scores the new state:
// reward 0 on success, -1 otherwise; done on success or once horizon actions have been taken.
StepResult env_step(const WorldState& s, std::array<float, 2> action, const WorldConfig& cfg);

// [3 x S x S] channel-major raster: 0 agent, 1 object (push tasks), 2 goal. A pixel is lit when its
// center lies within the disc; x runs along columns and y along rows.
std::vector<float> render(const WorldState& s, const WorldConfig& cfg);

// The benchmark: cfg.n_tasks push tasks, goals at angle i * 360 / n around the center;
// cfg.target_tasks are held out.
std::vector<TaskSpec> make_tasks(const WorldConfig& cfg);
std::vector<TaskSpec> tasks_in(const std::vector<TaskSpec>& tasks, Split split);
const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, const std::string& name);

// Random start: object near its start, agent uniform in the margin box, clear of object and goal.
WorldState reset(const TaskSpec& task, const WorldConfig& cfg, Rng& rng);

}  // namespace plex::sim
