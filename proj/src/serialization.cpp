#include "relight/serialization.hpp"

#include <algorithm>
#include <cstdio>

#include "relight/error.hpp"
#include "relight/network.hpp"

namespace relight {

using nlohmann::json;

StrictObject::StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) fail(ErrorCode::InvalidConfig, path_ + " must be an object");
}

const json* StrictObject::child(const char* key) {
  seen_.push_back(key);
  return j_.contains(key) ? &j_.at(key) : nullptr;
}

void StrictObject::finish() const {
  for (const auto& item : j_.items()) {
    if (std::find(seen_.begin(), seen_.end(), item.key()) == seen_.end()) {
      fail(ErrorCode::UnknownConfigKey, path_ + "." + item.key());
    }
  }
}

namespace {

const char* kind_name(EnvKind k) {
  switch (k) {
    case EnvKind::SunSky: return "sun_sky";
    case EnvKind::PointLights: return "point_lights";
    case EnvKind::StudioPreset: return "studio_preset";
  }
  return "sun_sky";
}

const char* preset_name(StudioPreset p) {
  switch (p) {
    case StudioPreset::None: return "none";
    case StudioPreset::Backlight: return "backlight";
    case StudioPreset::Rembrandt: return "rembrandt";
  }
  return "none";
}

}  // namespace

json to_json(const EnvSpec& s) {
  return json{{"kind", kind_name(s.kind)},
              {"preset", preset_name(s.preset)},
              {"sun_direction", {s.sun_direction.x, s.sun_direction.y, s.sun_direction.z}},
              {"sun_intensity", s.sun_intensity},
              {"sun_angular_radius", s.sun_angular_radius},
              {"sky_tint", {s.sky_tint.r, s.sky_tint.g, s.sky_tint.b}},
              {"seed", s.seed}};
}

EnvSpec env_spec_from_json(const json& j, const std::string& path) {
  StrictObject o(j, path);
  EnvSpec s;
  std::string kind = kind_name(s.kind);
  std::string preset = preset_name(s.preset);
  std::vector<double> dir{s.sun_direction.x, s.sun_direction.y, s.sun_direction.z};
  std::vector<float> tint{s.sky_tint.r, s.sky_tint.g, s.sky_tint.b};
  o.get("kind", kind);
  o.get("preset", preset);
  o.get("sun_direction", dir);
  o.get("sun_intensity", s.sun_intensity);
  o.get("sun_angular_radius", s.sun_angular_radius);
  o.get("sky_tint", tint);
  o.get("seed", s.seed);
  o.finish();
  if (kind == "sun_sky") s.kind = EnvKind::SunSky;
  else if (kind == "point_lights") s.kind = EnvKind::PointLights;
  else if (kind == "studio_preset") s.kind = EnvKind::StudioPreset;
  else fail(ErrorCode::InvalidSpec, path + ".kind: unknown value " + kind);
  if (preset == "none") s.preset = StudioPreset::None;
  else if (preset == "backlight") s.preset = StudioPreset::Backlight;
  else if (preset == "rembrandt") s.preset = StudioPreset::Rembrandt;
  else fail(ErrorCode::InvalidSpec, path + ".preset: unknown value " + preset);
  if (dir.size() != 3 || tint.size() != 3) fail(ErrorCode::InvalidSpec, path + ": vectors need 3 components");
  s.sun_direction = {dir[0], dir[1], dir[2]};
  s.sky_tint = {tint[0], tint[1], tint[2]};
  return s;
}

json to_json(const RenderConfig& c) {
  return json{{"resolution", c.resolution},
              {"shadow_samples", c.shadow_samples},
              {"env_cosine_samples", c.env_cosine_samples},
              {"bright_texel_count", c.bright_texel_count},
              {"camera_distance", c.camera_distance},
              {"head_frame_fraction", c.head_frame_fraction},
              {"background_clip", c.background_clip},
              {"rng_seed", c.rng_seed}};
}

RenderConfig render_config_from_json(const json& j, const std::string& path) {
  StrictObject o(j, path);
  RenderConfig c;
  o.get("resolution", c.resolution);
  o.get("shadow_samples", c.shadow_samples);
  o.get("env_cosine_samples", c.env_cosine_samples);
  o.get("bright_texel_count", c.bright_texel_count);
  o.get("camera_distance", c.camera_distance);
  o.get("head_frame_fraction", c.head_frame_fraction);
  o.get("background_clip", c.background_clip);
  o.get("rng_seed", c.rng_seed);
  o.finish();
  return c;
}

json to_json(const UNetConfig& c) {
  return json{{"in_channels", c.in_channels},
              {"base_channels", c.base_channels},
              {"channel_mults", c.channel_mults},
              {"attention_at_lowest", c.attention_at_lowest},
              {"label_vocab_sizes", c.label_vocab_sizes},
              {"embed_dim", c.embed_dim},
              {"resolution", c.resolution}};
}

UNetConfig unet_config_from_json(const json& j, const std::string& path) {
  StrictObject o(j, path);
  UNetConfig c;
  o.get("in_channels", c.in_channels);
  o.get("base_channels", c.base_channels);
  o.get("channel_mults", c.channel_mults);
  o.get("attention_at_lowest", c.attention_at_lowest);
  o.get("label_vocab_sizes", c.label_vocab_sizes);
  o.get("embed_dim", c.embed_dim);
  o.get("resolution", c.resolution);
  o.finish();
  return c;
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace relight
