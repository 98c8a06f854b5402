#include "plex/model/trajectory.hpp"

#include <cmath>

namespace plex::model {

bool Presence::has(Modality m) const {
  switch (m) {
    case Modality::task:
      return task;
    case Modality::image:
      return image;
    case Modality::proprio:
      return proprio;
    case Modality::action:
      return action;
    case Modality::ret:
      return ret;
  }
  return false;
}

void Presence::set(Modality m, bool on) {
  switch (m) {
    case Modality::task:
      task = on;
      break;
    case Modality::image:
      image = on;
      break;
    case Modality::proprio:
      proprio = on;
      break;
    case Modality::action:
      action = on;
      break;
    case Modality::ret:
      ret = on;
      break;
  }
}

namespace {

void expect_size(const std::vector<float>& v, bool present, std::size_t n, const char* what) {
  const std::size_t want = present ? n : 0;
  if (v.size() != want) {
    throw ContractError(std::string("trajectory: ") + what + " holds " + std::to_string(v.size()) +
                        " values, expected " + std::to_string(want));
  }
}

}  // namespace

void Trajectory::validate(const ObsSpec& spec) const {
  if (length == 0) {
    throw ContractError("trajectory: empty");
  }
  expect_size(goal, present.task, spec.image_size(), "goal");
  expect_size(images, present.image, length * spec.image_size(), "images");
  expect_size(proprio, present.proprio, length * spec.proprio_dim, "proprio");
  expect_size(actions, present.action, length * spec.action_dim, "actions");
  expect_size(returns, present.ret, length, "returns");
  for (float a : actions) {
    if (!(a >= -1.0f && a <= 1.0f)) {
      throw ContractError("trajectory: action outside [-1, 1]");
    }
  }
}

}  // namespace plex::model
