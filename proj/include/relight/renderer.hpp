#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "relight/envmap.hpp"
#include "relight/image.hpp"
#include "relight/vec3.hpp"

namespace relight {

/// Attribute label: (skin-tone bucket, geometry bucket).
using Label = std::array<int, 2>;
inline constexpr std::array<int, 2> kLabelVocab{10, 4};

/// Procedural head proxy. Every field is a pure function of `seed`.
struct SubjectParams {
  std::uint64_t seed = 0;
  Rgb albedo{};
  Rgb cloth_albedo{};
  double head_radius = 1.0;
  double nose_scale = 0.5;
  double shoulder_extent = 2.0;
  double specular_strength = 0.2;
  double shininess = 16.0;
  double pose_yaw = 0.0;
  double texture_strength = 0.1;
  Label label{0, 0};

  bool operator==(const SubjectParams&) const = default;
};

struct RenderConfig {
  int resolution = 64;
  int shadow_samples = 2;
  int env_cosine_samples = 32;
  int bright_texel_count = 16;
  double camera_distance = 6.0;
  /// Fraction of the frame height covered by a nominal (radius 1) head.
  double head_frame_fraction = 0.7;
  /// Tonemap clip used for background pixels.
  double background_clip = 8.0;
  std::uint64_t rng_seed = 0;
};

/// Linear radiance render with its subject mask.
struct LinearImage {
  ImageRgb pixels;
  Mask mask;
  int resolution() const { return pixels.width; }
};

SubjectParams make_subject(std::uint64_t seed);

LinearImage render(const SubjectParams& subject, const EnvMap& env, double rotation, const RenderConfig& config);

/// Primary-ray hit for one pixel; nullopt on background. Exposed for tests.
struct SurfaceHit {
  Vec3 position;
  Vec3 normal;
  Vec3 view;  ///< unit vector from the surface toward the camera
  int primitive = 0;
};
std::optional<SurfaceHit> trace_pixel(const SubjectParams& subject, const RenderConfig& config, int px, int py);

/// True if the ray origin + t*dir (t > 0) hits any primitive of the scene.
bool scene_occluded(const SubjectParams& subject, const Vec3& origin, const Vec3& dir);

double srgb_encode(double linear);
double srgb_decode(double encoded);
ImageRgb8 linear_to_srgb(const LinearImage& image);
/// sRGB-encoded floats in [0,1] without 8-bit quantization.
ImageRgb linear_to_srgb_float(const ImageRgb& linear);

}  // namespace relight
