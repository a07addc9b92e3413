#pragma once

// JSON mappings for the configuration and provenance types. Readers are
// strict: unknown keys raise UnknownConfigKey naming the offending path.

#include <json.hpp>
#include <string>

#include "relight/envmap.hpp"
#include "relight/renderer.hpp"

namespace relight {

struct UNetConfig;

/// Tracks which keys of an object were consumed.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path);

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    if (j_.contains(key)) out = j_.at(key).get<T>();
  }
  const nlohmann::json* child(const char* key);
  const std::string& path() const { return path_; }
  /// Throws UnknownConfigKey for any key not read so far.
  void finish() const;

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

nlohmann::json to_json(const EnvSpec& spec);
EnvSpec env_spec_from_json(const nlohmann::json& j, const std::string& path = "env_spec");
nlohmann::json to_json(const RenderConfig& config);
RenderConfig render_config_from_json(const nlohmann::json& j, const std::string& path = "render");
nlohmann::json to_json(const UNetConfig& config);
UNetConfig unet_config_from_json(const nlohmann::json& j, const std::string& path = "model");

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t v);

}  // namespace relight
