#include "plex/train/checkpoint.hpp"

#include <bit>

#include "plex/io/binary.hpp"
#include "plex/io/config_json.hpp"

namespace plex::train {

using io::json;

namespace {

constexpr std::string_view kMagic = "PLXC";
constexpr std::uint8_t kVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const model::PlexModel<float>& model) {
  const auto params = model.parameters();
  json manifest;
  manifest["config"] = model.config();
  const auto& st = model.stage();
  manifest["stage"] = {{"executor_pretrained", st.executor_pretrained},
                       {"planner_pretrained", st.planner_pretrained},
                       {"encoders_frozen", st.encoders_frozen}};
  json list = json::array();
  for (const auto& p : params) list.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  manifest["params"] = std::move(list);
  const std::string text = manifest.dump();

  io::ByteWriter w;
  w.bytes(kMagic);
  w.u8(kVersion);
  w.u64(text.size());
  w.bytes(text);
  for (const auto& p : params) w.f32(p.tensor.data());
  return w.take();
}

model::PlexModel<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(kMagic.size(), "magic") != kMagic) {
    throw FormatError("not a checkpoint file (bad magic)", 0);
  }
  const std::size_t version_at = r.offset();
  if (const auto v = r.u8("version"); v != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
  }
  const std::uint64_t len = r.u64("manifest length");
  const std::size_t manifest_at = r.offset();
  if (len > r.remaining()) {
    throw FormatError("truncated manifest: declares " + std::to_string(len) + " bytes", manifest_at);
  }
  model::PlexModel<float> m;
  std::vector<json> entries;
  try {
    const json manifest = json::parse(r.bytes(len, "manifest"));
    m = model::PlexModel<float>(manifest.at("config").get<model::PlexConfig>(), 0);
    const json& st = manifest.at("stage");
    m.stage() = {st.at("executor_pretrained").get<bool>(), st.at("planner_pretrained").get<bool>(),
                 st.at("encoders_frozen").get<bool>()};
    entries = manifest.at("params").get<std::vector<json>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what(), manifest_at);
  } catch (const ContractError& e) {
    throw FormatError(std::string("bad manifest: ") + e.what(), manifest_at);
  }

  auto params = m.parameters();
  if (entries.size() != params.size()) {
    throw FormatError("checkpoint lists " + std::to_string(entries.size()) + " parameters, model has " +
                          std::to_string(params.size()),
                      manifest_at);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t at = r.offset();
    const auto name = entries[i].value("name", std::string());
    const auto shape = entries[i].value("shape", tensor::Shape());
    if (name != params[i].name || shape != params[i].tensor.shape()) {
      throw FormatError("parameter " + std::to_string(i) + " is '" + name + "' " + tensor::shape_string(shape) +
                            ", model expects '" + params[i].name + "' " +
                            tensor::shape_string(params[i].tensor.shape()),
                        at);
    }
    const auto values = r.f32(params[i].tensor.numel(), name.c_str());
    auto dst = params[i].tensor.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after the last parameter", r.offset());
  }
  return m;
}

void save_checkpoint(const model::PlexModel<float>& model, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(model));
}

model::PlexModel<float> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

std::uint64_t checksum(const nn::ParamList<float>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    for (char c : p.name) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    for (float f : p.tensor.data()) h = (h ^ std::bit_cast<std::uint32_t>(f)) * 0x100000001b3ULL;
  }
  return h;
}

}  // namespace plex::train
