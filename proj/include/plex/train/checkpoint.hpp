#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "plex/model/plex_model.hpp"

namespace plex::train {

// "PLXC", version byte, u64 manifest length, JSON manifest (model config, stage state, parameter
// names and shapes), then every parameter as little-endian float32 in manifest order.
std::vector<std::uint8_t> serialize_checkpoint(const model::PlexModel<float>& model);
// Throws FormatError on a corrupt or inconsistent file.
model::PlexModel<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const model::PlexModel<float>& model, const std::filesystem::path& path);
model::PlexModel<float> load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the raw bits of the given parameters; a cheap "did anything change" fingerprint.
std::uint64_t checksum(const nn::ParamList<float>& params);

}  // namespace plex::train
