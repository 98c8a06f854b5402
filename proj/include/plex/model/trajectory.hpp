#pragma once

#include <string>
#include <vector>

#include "plex/nn/encoders.hpp"

namespace plex::model {

using nn::Modality;

// Raw observation layout shared by a dataset and the model that consumes it.
struct ObsSpec {
  std::size_t cameras = 1;
  std::size_t channels = 3;
  std::size_t height = 24;
  std::size_t width = 24;
  std::size_t proprio_dim = 2;
  std::size_t action_dim = 2;

  std::size_t image_size() const { return cameras * channels * height * width; }
  bool operator==(const ObsSpec&) const = default;
};

struct Presence {
  bool task = false;
  bool image = false;
  bool proprio = false;
  bool action = false;
  bool ret = false;

  bool has(Modality m) const;
  void set(Modality m, bool on);
  bool operator==(const Presence&) const = default;
};

// One episode. Steps are 1-based in the API; row s-1 of each array holds step s.
struct Trajectory {
  std::size_t length = 0;
  Presence present;
  std::string task;
  std::vector<float> goal;     // one image tuple when present.task
  std::vector<float> images;   // length x image_size
  std::vector<float> proprio;  // length x proprio_dim
  std::vector<float> actions;  // length x action_dim, in [-1, 1]; a_T is padding
  std::vector<float> returns;  // length; returns-to-go

  // Throws ContractError when array sizes, presence flags or value ranges disagree.
  void validate(const ObsSpec& spec) const;
};

}  // namespace plex::model
