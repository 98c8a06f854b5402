#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "plex/model/trajectory.hpp"

namespace plex::data {

using model::ObsSpec;
using model::Modality;
using model::Trajectory;

// mtvd: multi-task video demos (no actions). vmt: task-agnostic visuomotor play (no task spec).
// ttd: target-task demos, any modality mix.
enum class DatasetKind { mtvd, vmt, ttd };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& name);

struct GenerationInfo {
  std::uint64_t seed = 0;
  double noise_std = 0.0;
  std::string style = "scripted";
  bool video_only = false;
  std::vector<std::string> tasks;

  bool operator==(const GenerationInfo&) const = default;
};

struct Dataset {
  DatasetKind kind = DatasetKind::ttd;
  ObsSpec spec;
  GenerationInfo info;
  std::vector<Trajectory> trajectories;

  // Per-trajectory validity plus the kind's modality rules. Throws ContractError.
  void validate() const;
  std::size_t total_steps() const;
  bool all_have(model::Modality m) const;
};

// "PLXD", version byte, u64 manifest length, JSON manifest, then per trajectory the present arrays
// (goal, images, proprio, actions, returns) as little-endian float32 in manifest order.
std::vector<std::uint8_t> serialize_dataset(const Dataset& dataset);
// Throws FormatError with the failing byte offset.
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace plex::data
