#include "plex/io/config_json.hpp"

namespace plex::io {

void require_known_keys(const json& given, const json& canonical, const std::string& where) {
  if (given.is_object() && canonical.is_object()) {
    for (const auto& [key, value] : given.items()) {
      if (!canonical.contains(key)) {
        throw ContractError(where + ": unknown key '" + key + "'");
      }
      require_known_keys(value, canonical.at(key), where + "." + key);
    }
  } else if (given.is_array() && canonical.is_array() && given.size() == canonical.size()) {
    for (std::size_t i = 0; i < given.size(); ++i) {
      require_known_keys(given[i], canonical[i], where + "[" + std::to_string(i) + "]");
    }
  }
}

}  // namespace plex::io
