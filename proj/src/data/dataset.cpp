#include "plex/data/dataset.hpp"

#include <array>

#include "plex/io/binary.hpp"
#include "plex/io/config_json.hpp"

namespace plex::data {

using io::json;

namespace {

constexpr std::string_view kMagic = "PLXD";
constexpr std::uint8_t kVersion = 1;

struct ArrayRef {
  const char* name;
  Modality modality;
  std::vector<float> Trajectory::*member;
};

constexpr std::array<ArrayRef, 5> kArrays = {{
    {"goal", Modality::task, &Trajectory::goal},
    {"images", Modality::image, &Trajectory::images},
    {"proprio", Modality::proprio, &Trajectory::proprio},
    {"actions", Modality::action, &Trajectory::actions},
    {"returns", Modality::ret, &Trajectory::returns},
}};

json presence_json(const model::Presence& p) {
  json j = json::object();
  for (auto m : nn::kAllModalities) j[nn::to_string(m)] = p.has(m);
  return j;
}

}  // namespace

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::mtvd:
      return "mtvd";
    case DatasetKind::vmt:
      return "vmt";
    case DatasetKind::ttd:
      return "ttd";
  }
  return "?";
}

DatasetKind parse_dataset_kind(const std::string& name) {
  for (auto k : {DatasetKind::mtvd, DatasetKind::vmt, DatasetKind::ttd}) {
    if (to_string(k) == name) return k;
  }
  throw ContractError("unknown dataset kind '" + name + "' (expected mtvd, vmt or ttd)");
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    try {
      t.validate(spec);
    } catch (const ContractError& e) {
      throw ContractError("trajectory " + std::to_string(i) + ": " + e.what());
    }
    const bool bad = (kind == DatasetKind::mtvd && (t.present.action || !t.present.task)) ||
                     (kind == DatasetKind::vmt && (!t.present.action || t.present.task));
    if (bad) {
      throw ContractError(to_string(kind) + " trajectory " + std::to_string(i) + " has the wrong modality mix");
    }
  }
}

std::size_t Dataset::total_steps() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.length;
  return n;
}

bool Dataset::all_have(model::Modality m) const {
  for (const auto& t : trajectories) {
    if (!t.present.has(m)) return false;
  }
  return !trajectories.empty();
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& dataset) {
  json manifest;
  manifest["kind"] = to_string(dataset.kind);
  manifest["spec"] = dataset.spec;
  manifest["generation"] = {{"seed", dataset.info.seed},
                            {"noise_std", dataset.info.noise_std},
                            {"style", dataset.info.style},
                            {"video_only", dataset.info.video_only},
                            {"tasks", dataset.info.tasks}};
  json trajs = json::array();
  for (const auto& t : dataset.trajectories) {
    json arrays = json::object();
    for (const auto& a : kArrays) arrays[a.name] = (t.*a.member).size();
    trajs.push_back({{"task", t.task}, {"length", t.length}, {"present", presence_json(t.present)}, {"arrays", arrays}});
  }
  manifest["trajectories"] = std::move(trajs);
  const std::string text = manifest.dump();

  io::ByteWriter w;
  w.bytes(kMagic);
  w.u8(kVersion);
  w.u64(text.size());
  w.bytes(text);
  for (const auto& t : dataset.trajectories) {
    for (const auto& a : kArrays) w.f32(t.*a.member);
  }
  return w.take();
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(kMagic.size(), "magic") != kMagic) {
    throw FormatError("not a dataset file (bad magic)", 0);
  }
  const std::size_t version_at = r.offset();
  if (const auto v = r.u8("version"); v != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(v), version_at);
  }
  const std::uint64_t manifest_len = r.u64("manifest length");
  const std::size_t manifest_at = r.offset();
  if (manifest_len > r.remaining()) {
    throw FormatError("truncated manifest: declares " + std::to_string(manifest_len) + " bytes", manifest_at);
  }
  json manifest;
  Dataset ds;
  std::vector<json> entries;
  try {
    manifest = json::parse(r.bytes(manifest_len, "manifest"));
    ds.kind = parse_dataset_kind(manifest.at("kind").get<std::string>());
    ds.spec = manifest.at("spec").get<ObsSpec>();
    const json& gen = manifest.at("generation");
    ds.info.seed = gen.at("seed").get<std::uint64_t>();
    ds.info.noise_std = gen.at("noise_std").get<double>();
    ds.info.style = gen.at("style").get<std::string>();
    ds.info.video_only = gen.at("video_only").get<bool>();
    ds.info.tasks = gen.at("tasks").get<std::vector<std::string>>();
    entries = manifest.at("trajectories").get<std::vector<json>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what(), manifest_at);
  } catch (const ContractError& e) {
    throw FormatError(std::string("bad manifest: ") + e.what(), manifest_at);
  }

  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::size_t traj_at = r.offset();
    const std::string label = "trajectory " + std::to_string(i);
    Trajectory t;
    std::array<std::uint64_t, 5> counts{};
    try {
      t.task = entries[i].at("task").get<std::string>();
      t.length = entries[i].at("length").get<std::size_t>();
      for (std::size_t a = 0; a < kArrays.size(); ++a) {
        const bool flag = entries[i].at("present").at(nn::to_string(kArrays[a].modality)).get<bool>();
        t.present.set(kArrays[a].modality, flag);
        counts[a] = entries[i].at("arrays").at(kArrays[a].name).get<std::uint64_t>();
      }
    } catch (const json::exception& e) {
      throw FormatError("bad manifest entry for " + label + ": " + e.what(), manifest_at);
    }
    for (std::size_t a = 0; a < kArrays.size(); ++a) {
      if (t.present.has(kArrays[a].modality) != (counts[a] > 0)) {
        throw FormatError(label + ": modality flag for " + kArrays[a].name + " contradicts its array size (" +
                              std::to_string(counts[a]) + ")",
                          traj_at);
      }
      t.*kArrays[a].member = r.f32(counts[a], kArrays[a].name);
    }
    try {
      t.validate(ds.spec);
    } catch (const ContractError& e) {
      throw FormatError(label + ": " + e.what(), traj_at);
    }
    ds.trajectories.push_back(std::move(t));
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after the last trajectory", r.offset());
  }
  try {
    ds.validate();
  } catch (const ContractError& e) {
    throw FormatError(e.what(), manifest_at);
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  io::write_file(path, serialize_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(io::read_file(path)); }

}  // namespace plex::data
