#pragma once

#include <string>

#include "json.hpp"
#include "plex/model/plex_model.hpp"

namespace plex::io {
using json = nlohmann::json;

// Throws ContractError naming the first key of `given` that `canonical` lacks.
void require_known_keys(const json& given, const json& canonical, const std::string& where);

// Parses with defaults for missing fields but rejects unknown (typo'd) keys.
template <typename C>
C parse_strict(const json& j, const std::string& where) {
  C c = j.get<C>();
  require_known_keys(j, json(c), where);
  return c;
}

}  // namespace plex::io

namespace plex::nn {

inline void to_json(nlohmann::json& j, PosMode m) { j = to_string(m); }
inline void from_json(const nlohmann::json& j, PosMode& m) { m = parse_pos_mode(j.get<std::string>()); }

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ConvSpec, out_channels, kernel, stride, pad)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ImageEncoderConfig, cameras, channels, height, width, conv,
                                                crop_ratio)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, image, hidden, proprio_dim, action_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TransformerConfig, n_layers, n_heads, hidden, context_steps, pos_mode,
                                                t_max, dropout)

}  // namespace plex::nn

namespace plex::model {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ObsSpec, cameras, channels, height, width, proprio_dim, action_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PlexConfig, encoder, planner, executor, lookahead, use_returns,
                                                mask_proprio, return_scale, residual_plan)

}  // namespace plex::model
