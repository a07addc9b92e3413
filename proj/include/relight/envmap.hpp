#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "relight/image.hpp"
#include "relight/vec3.hpp"

namespace relight {

struct Rgb {
  float r = 0.0f;
  float g = 0.0f;
  float b = 0.0f;
  bool operator==(const Rgb&) const = default;
};

/// Equirectangular HDR radiance map. Width is twice the height; all values
/// are finite and nonnegative. Immutable once constructed.
///
/// Direction convention: +Y up, polar angle theta measured from +Y, azimuth
/// 0 at +Z increasing toward +X. Column coordinate u = (azimuth + pi) / 2pi
/// * width, row coordinate v = theta / pi * height, texel centers at +0.5.
class EnvMap {
 public:
  EnvMap(int width, int height, std::vector<float> pixels);
  static EnvMap constant(int width, int height, Rgb value);

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<float>& pixels() const { return pixels_; }

  Rgb texel(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
  }

  /// Returns a copy with every value multiplied by `s` (s >= 0).
  EnvMap scaled(float s) const;

  bool operator==(const EnvMap&) const = default;

 private:
  int width_;
  int height_;
  std::vector<float> pixels_;
};

/// HDR map reduced to [0,1] for network conditioning.
using LdrEnvImage = ImageRgb;

enum class EnvKind { SunSky, PointLights, StudioPreset };
enum class StudioPreset { None, Backlight, Rembrandt };

struct EnvSpec {
  EnvKind kind = EnvKind::SunSky;
  StudioPreset preset = StudioPreset::None;
  Vec3 sun_direction{0.0, 0.5, 0.8660254037844386};
  double sun_intensity = 80.0;
  double sun_angular_radius = 0.1;
  Rgb sky_tint{0.4f, 0.5f, 0.7f};
  std::uint64_t seed = 0;

  bool operator==(const EnvSpec&) const = default;
};

EnvMap load_raster(const std::filesystem::path& path);
void write_raster(const std::filesystem::path& path, const EnvMap& env);
/// Parses an `ENVF` byte stream; `source` names it in error messages.
EnvMap parse_raster(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");
std::vector<std::uint8_t> encode_raster(const EnvMap& env);

/// Bilinear lookup with longitudinal wrap and latitudinal clamp.
Rgb sample_dir(const EnvMap& env, const Vec3& direction);
/// Nearest-texel lookup; the renderer's light model is piecewise constant.
void texel_of(const EnvMap& env, const Vec3& direction, int& x, int& y);

Vec3 direction_of(double azimuth, double theta);
Vec3 texel_direction(const EnvMap& env, double x, double y);
/// Exact solid angle covered by any texel in row `y`.
double texel_solid_angle(const EnvMap& env, int y);

/// Rotation about +Y by a longitudinal pixel shift of angle / 2pi * width.
EnvMap rotate(const EnvMap& env, double angle);

/// Area-resize, clip to [0, clip_max], divide by clip_max, gamma 1/2.2.
LdrEnvImage tonemap_ldr(const EnvMap& env, double clip_max, int out_width, int out_height);
/// Per-channel scalar form of the tonemap curve.
double tonemap_value(double radiance, double clip_max);

void validate(const EnvSpec& spec);
EnvMap procedural_env(const EnvSpec& spec, int width, int height);

/// Random but valid spec; kinds are mixed (mostly sun_sky).
EnvSpec random_env_spec(std::uint64_t seed);

}  // namespace relight
