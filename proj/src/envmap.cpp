#include "relight/envmap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "relight/error.hpp"

namespace relight {

namespace {

constexpr double kPi = std::numbers::pi;

void check_values(const std::vector<float>& pixels) {
  for (float v : pixels) {
    if (!std::isfinite(v) || v < 0.0f) {
      fail(ErrorCode::NonNegativeViolation, "environment map contains a negative or non-finite value");
    }
  }
}

}  // namespace

EnvMap::EnvMap(int width, int height, std::vector<float> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (height_ < 2) fail(ErrorCode::MalformedHeader, "environment map height must be >= 2");
  if (width_ != 2 * height_) fail(ErrorCode::AspectViolation, "environment map width must equal 2 * height");
  if (pixels_.size() != static_cast<std::size_t>(width_) * height_ * 3) {
    fail(ErrorCode::TruncatedPayload, "pixel buffer size does not match dimensions");
  }
  check_values(pixels_);
}

EnvMap EnvMap::constant(int width, int height, Rgb value) {
  std::vector<float> px(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < px.size(); i += 3) {
    px[i] = value.r;
    px[i + 1] = value.g;
    px[i + 2] = value.b;
  }
  return EnvMap(width, height, std::move(px));
}

EnvMap EnvMap::scaled(float s) const {
  std::vector<float> px = pixels_;
  for (float& v : px) v *= s;
  return EnvMap(width_, height_, std::move(px));
}

// ---------------------------------------------------------------------------
// ENVF raster: "ENVF <w> <h>\n" followed by w*h*3 little-endian float32.

std::vector<std::uint8_t> encode_raster(const EnvMap& env) {
  const std::string header = "ENVF " + std::to_string(env.width()) + " " + std::to_string(env.height()) + "\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const std::size_t offset = bytes.size();
  bytes.resize(offset + env.pixels().size() * 4);
  for (std::size_t i = 0; i < env.pixels().size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(env.pixels()[i]);
    for (int b = 0; b < 4; ++b) bytes[offset + i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return bytes;
}

EnvMap parse_raster(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  const auto newline = std::find(bytes.begin(), bytes.end(), static_cast<std::uint8_t>('\n'));
  if (newline == bytes.end() || std::distance(bytes.begin(), newline) > 64) {
    fail(ErrorCode::MalformedHeader, source + ": missing ENVF header line");
  }
  std::istringstream header(std::string(bytes.begin(), newline));
  std::string magic;
  long long width = 0;
  long long height = 0;
  header >> magic >> width >> height;
  std::string trailing;
  if (!header || magic != "ENVF" || (header >> trailing) || width <= 0 || height <= 0 || width > (1 << 16) ||
      height > (1 << 16)) {
    fail(ErrorCode::MalformedHeader, source + ": bad ENVF header");
  }
  if (height < 2) fail(ErrorCode::MalformedHeader, source + ": height must be >= 2");
  if (width != 2 * height) fail(ErrorCode::AspectViolation, source + ": width must equal 2 * height");

  const std::size_t count = static_cast<std::size_t>(width) * height * 3;
  const std::size_t offset = static_cast<std::size_t>(std::distance(bytes.begin(), newline)) + 1;
  if (bytes.size() - offset < count * 4) {
    fail(ErrorCode::TruncatedPayload, source + ": payload shorter than declared dimensions");
  }
  std::vector<float> px(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[offset + i * 4 + b]) << (8 * b);
    px[i] = std::bit_cast<float>(bits);
  }
  check_values(px);
  return EnvMap(static_cast<int>(width), static_cast<int>(height), std::move(px));
}

EnvMap load_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_raster(bytes, path.string());
}

void write_raster(const std::filesystem::path& path, const EnvMap& env) {
  const std::vector<std::uint8_t> bytes = encode_raster(env);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Direction <-> texel mapping.

Vec3 direction_of(double azimuth, double theta) {
  const double s = std::sin(theta);
  return {s * std::sin(azimuth), std::cos(theta), s * std::cos(azimuth)};
}

Vec3 texel_direction(const EnvMap& env, double x, double y) {
  const double azimuth = (x + 0.5) / env.width() * 2.0 * kPi - kPi;
  const double theta = (y + 0.5) / env.height() * kPi;
  return direction_of(azimuth, theta);
}

double texel_solid_angle(const EnvMap& env, int y) {
  const double t0 = static_cast<double>(y) / env.height() * kPi;
  const double t1 = static_cast<double>(y + 1) / env.height() * kPi;
  return (2.0 * kPi / env.width()) * (std::cos(t0) - std::cos(t1));
}

namespace {

void check_unit(const Vec3& d) {
  const double n = norm(d);
  if (!(std::abs(n - 1.0) <= 1e-6)) fail(ErrorCode::NonUnitDirection, "direction is not unit length");
}

void continuous_coords(const EnvMap& env, const Vec3& d, double& u, double& v) {
  const double azimuth = std::atan2(d.x, d.z);
  const double theta = std::acos(std::clamp(d.y, -1.0, 1.0));
  u = (azimuth + kPi) / (2.0 * kPi) * env.width();
  v = theta / kPi * env.height();
}

int wrap(int x, int n) {
  x %= n;
  return x < 0 ? x + n : x;
}

}  // namespace

Rgb sample_dir(const EnvMap& env, const Vec3& direction) {
  check_unit(direction);
  double u = 0.0;
  double v = 0.0;
  continuous_coords(env, direction, u, v);
  const double fx = u - 0.5;
  const double fy = v - 0.5;
  const double x0f = std::floor(fx);
  const double y0f = std::floor(fy);
  const double tx = fx - x0f;
  const double ty = fy - y0f;
  const int x0 = wrap(static_cast<int>(x0f), env.width());
  const int x1 = wrap(static_cast<int>(x0f) + 1, env.width());
  const int y0 = std::clamp(static_cast<int>(y0f), 0, env.height() - 1);
  const int y1 = std::clamp(static_cast<int>(y0f) + 1, 0, env.height() - 1);

  const Rgb a = env.texel(x0, y0);
  const Rgb b = env.texel(x1, y0);
  const Rgb c = env.texel(x0, y1);
  const Rgb d = env.texel(x1, y1);
  auto mix = [&](float pa, float pb, float pc, float pd) {
    const double top = pa * (1.0 - tx) + pb * tx;
    const double bottom = pc * (1.0 - tx) + pd * tx;
    return static_cast<float>(std::max(0.0, top * (1.0 - ty) + bottom * ty));
  };
  return {mix(a.r, b.r, c.r, d.r), mix(a.g, b.g, c.g, d.g), mix(a.b, b.b, c.b, d.b)};
}

void texel_of(const EnvMap& env, const Vec3& direction, int& x, int& y) {
  double u = 0.0;
  double v = 0.0;
  continuous_coords(env, direction, u, v);
  x = wrap(static_cast<int>(std::floor(u)), env.width());
  y = std::clamp(static_cast<int>(std::floor(v)), 0, env.height() - 1);
}

// ---------------------------------------------------------------------------

EnvMap rotate(const EnvMap& env, double angle) {
  const int w = env.width();
  const int h = env.height();
  double shift = angle / (2.0 * kPi) * w;
  shift = std::fmod(shift, static_cast<double>(w));
  if (shift < 0.0) shift += w;
  const double whole = std::floor(shift);
  const double frac = shift - whole;
  const int s0 = static_cast<int>(whole);

  std::vector<float> out(env.pixels().size());
  const std::vector<float>& in = env.pixels();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t dst = (static_cast<std::size_t>(y) * w + x) * 3;
      const std::size_t a = (static_cast<std::size_t>(y) * w + wrap(x - s0, w)) * 3;
      if (frac == 0.0) {
        for (int c = 0; c < 3; ++c) out[dst + c] = in[a + c];
      } else {
        const std::size_t b = (static_cast<std::size_t>(y) * w + wrap(x - s0 - 1, w)) * 3;
        for (int c = 0; c < 3; ++c) {
          out[dst + c] = static_cast<float>((1.0 - frac) * in[a + c] + frac * in[b + c]);
        }
      }
    }
  }
  return EnvMap(w, h, std::move(out));
}

double tonemap_value(double radiance, double clip_max) {
  const double clipped = std::clamp(radiance, 0.0, clip_max);
  return std::pow(clipped / clip_max, 1.0 / 2.2);
}

LdrEnvImage tonemap_ldr(const EnvMap& env, double clip_max, int out_width, int out_height) {
  if (!(clip_max > 0.0)) fail(ErrorCode::NonPositiveClip, "clip_max must be positive");
  if (out_width < 1 || out_height < 1) fail(ErrorCode::InvalidSpec, "output dimensions must be >= 1");
  ImageRgb src(env.width(), env.height());
  src.pixels = env.pixels();
  ImageRgb out = resize_area(src, out_width, out_height);
  for (float& v : out.pixels) v = static_cast<float>(tonemap_value(v, clip_max));
  return out;
}

// ---------------------------------------------------------------------------
// Procedural environments.

void validate(const EnvSpec& spec) {
  if (!(spec.sun_intensity >= 0.0) || !std::isfinite(spec.sun_intensity)) {
    fail(ErrorCode::InvalidSpec, "sun_intensity must be finite and >= 0");
  }
  if (!(spec.sun_angular_radius > 0.0 && spec.sun_angular_radius < kPi / 2)) {
    fail(ErrorCode::InvalidSpec, "sun_angular_radius must lie in (0, pi/2)");
  }
  if (!(std::abs(norm(spec.sun_direction) - 1.0) <= 1e-6)) {
    fail(ErrorCode::InvalidSpec, "sun_direction must be unit length");
  }
  for (float c : {spec.sky_tint.r, spec.sky_tint.g, spec.sky_tint.b}) {
    if (!(c >= 0.0f) || !std::isfinite(c)) fail(ErrorCode::InvalidSpec, "sky_tint must be finite and >= 0");
  }
  const bool preset_kind = spec.kind == EnvKind::StudioPreset;
  if (preset_kind != (spec.preset != StudioPreset::None)) {
    fail(ErrorCode::InvalidSpec, "preset must be set exactly when kind is studio_preset");
  }
}

namespace {

struct Lobe {
  Vec3 direction;
  double peak;
  double radius;
  Rgb color;
};

// Gaussian falloff with sigma = radius / 2, truncated at 4 sigma.
double lobe_weight(const Lobe& lobe, const Vec3& d) {
  const double angle = std::acos(std::clamp(dot(lobe.direction, d), -1.0, 1.0));
  if (angle > 2.0 * lobe.radius) return 0.0;
  const double sigma = lobe.radius / 2.0;
  return lobe.peak * std::exp(-angle * angle / (2.0 * sigma * sigma));
}

Vec3 from_angles(double azimuth, double elevation) { return direction_of(azimuth, kPi / 2 - elevation); }

}  // namespace

EnvMap procedural_env(const EnvSpec& spec, int width, int height) {
  validate(spec);
  if (height < 2 || width != 2 * height) fail(ErrorCode::AspectViolation, "procedural_env needs width == 2 * height");

  std::vector<Lobe> lobes;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Rgb white{1.0f, 1.0f, 1.0f};
  double sky_scale_top = 1.0;
  double sky_scale_bottom = 0.0;
  Vec3 dark_axis{};
  bool half_dark = false;

  switch (spec.kind) {
    case EnvKind::SunSky:
      lobes.push_back({spec.sun_direction, spec.sun_intensity, spec.sun_angular_radius, white});
      break;
    case EnvKind::PointLights: {
      sky_scale_top = 0.25;
      const int count = 2 + static_cast<int>(uni(rng) * 2.0);
      for (int i = 0; i < count; ++i) {
        const double azimuth = (uni(rng) * 2.0 - 1.0) * kPi;
        const double elevation = (uni(rng) * 0.8 - 0.1) * kPi / 2;
        const Rgb color{static_cast<float>(0.6 + 0.4 * uni(rng)), static_cast<float>(0.6 + 0.4 * uni(rng)),
                        static_cast<float>(0.6 + 0.4 * uni(rng))};
        const double share = i == 0 ? 1.0 : 0.3 + 0.5 * uni(rng);
        lobes.push_back({from_angles(azimuth, elevation), spec.sun_intensity * share, spec.sun_angular_radius, color});
      }
      break;
    }
    case EnvKind::StudioPreset:
      sky_scale_top = 0.15;
      sky_scale_bottom = 0.15;
      if (spec.preset == StudioPreset::Backlight) {
        lobes.push_back({from_angles(kPi, kPi / 12), spec.sun_intensity, spec.sun_angular_radius, white});
      } else {
        const double side = (spec.seed & 1u) ? 1.0 : -1.0;
        const Vec3 dir = from_angles(side * kPi / 4, kPi / 6);
        lobes.push_back({dir, spec.sun_intensity, spec.sun_angular_radius, white});
        dark_axis = normalize(Vec3{dir.x, 0.0, dir.z});
        half_dark = true;
      }
      break;
  }

  std::vector<float> px(static_cast<std::size_t>(width) * height * 3);
  const float tint[3] = {spec.sky_tint.r, spec.sky_tint.g, spec.sky_tint.b};
  EnvMap probe = EnvMap::constant(width, height, {});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Vec3 d = texel_direction(probe, x, y);
      const double t = 0.5 + 0.5 * d.y;
      double sky = sky_scale_bottom + (sky_scale_top - sky_scale_bottom) * t;
      if (half_dark && dot(d, dark_axis) < 0.0) sky = 0.0;
      const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
      for (int c = 0; c < 3; ++c) px[i + c] = static_cast<float>(tint[c] * sky);
      for (const Lobe& lobe : lobes) {
        const double w = lobe_weight(lobe, d);
        if (w <= 0.0) continue;
        px[i] += static_cast<float>(w * lobe.color.r);
        px[i + 1] += static_cast<float>(w * lobe.color.g);
        px[i + 2] += static_cast<float>(w * lobe.color.b);
      }
    }
  }
  return EnvMap(width, height, std::move(px));
}

EnvSpec random_env_spec(std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 17);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  EnvSpec spec;
  spec.seed = seed;
  const double pick = uni(rng);
  spec.kind = pick < 0.7 ? EnvKind::SunSky : (pick < 0.9 ? EnvKind::PointLights : EnvKind::StudioPreset);
  if (spec.kind == EnvKind::StudioPreset) spec.preset = uni(rng) < 0.5 ? StudioPreset::Backlight : StudioPreset::Rembrandt;
  const double azimuth = (uni(rng) * 2.0 - 1.0) * kPi;
  const double elevation = -0.1 + uni(rng) * 1.2;
  spec.sun_direction = normalize(from_angles(azimuth, elevation));
  spec.sun_angular_radius = 0.15 + uni(rng) * 0.2;
  // Peak chosen so the disc delivers an irradiance of roughly 1 to 2.5.
  const double sigma = spec.sun_angular_radius / 2.0;
  spec.sun_intensity = (1.0 + 1.5 * uni(rng)) / (2.0 * kPi * sigma * sigma);
  const double base = 0.15 + 0.5 * uni(rng);
  spec.sky_tint = {static_cast<float>(base * (0.7 + 0.3 * uni(rng))), static_cast<float>(base * (0.8 + 0.2 * uni(rng))),
                   static_cast<float>(base * (0.8 + 0.4 * uni(rng)))};
  return spec;
}

}  // namespace relight
