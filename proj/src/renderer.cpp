#include "relight/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "relight/error.hpp"
#include "relight/random.hpp"

namespace relight {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kRayEpsilon = 1e-5;

// Plausible skin reflectances, light to dark.
constexpr std::array<Rgb, 10> kSkinAnchors{{
    {0.85f, 0.68f, 0.58f},
    {0.80f, 0.62f, 0.52f},
    {0.76f, 0.58f, 0.46f},
    {0.70f, 0.52f, 0.40f},
    {0.64f, 0.46f, 0.35f},
    {0.56f, 0.40f, 0.30f},
    {0.48f, 0.33f, 0.24f},
    {0.40f, 0.27f, 0.19f},
    {0.32f, 0.21f, 0.15f},
    {0.25f, 0.16f, 0.11f},
}};

struct Sphere {
  Vec3 center;
  double radius;
};

struct Ellipsoid {
  Vec3 center;
  Vec3 radii;
};

struct Scene {
  Sphere head;
  Sphere nose;
  Ellipsoid shoulders;
};

Scene build_scene(const SubjectParams& s) {
  if (!(s.head_radius > 0.0) || !(s.shoulder_extent > 0.0) || !(s.nose_scale >= 0.0)) {
    fail(ErrorCode::DegenerateScene, "head proxy radii must be positive");
  }
  const double r = s.head_radius;
  Scene scene;
  scene.head = {{0.0, 0.0, 0.0}, r};
  scene.nose = {rotate_y({0.0, -0.15 * r, -0.93 * r}, s.pose_yaw), r * (0.10 + 0.12 * s.nose_scale)};
  scene.shoulders = {{0.0, -1.75 * r, 0.1 * r}, {s.shoulder_extent, 0.8 * r, 0.55 * r}};
  return scene;
}

double hit_sphere(const Sphere& s, const Vec3& o, const Vec3& d) {
  const Vec3 oc = o - s.center;
  const double b = dot(oc, d);
  const double c = dot(oc, oc) - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return -1.0;
  const double sq = std::sqrt(disc);
  const double t0 = -b - sq;
  if (t0 > kRayEpsilon) return t0;
  const double t1 = -b + sq;
  return t1 > kRayEpsilon ? t1 : -1.0;
}

double hit_ellipsoid(const Ellipsoid& e, const Vec3& o, const Vec3& d) {
  // Scale space so the ellipsoid becomes the unit sphere; t is preserved.
  const Vec3 os = (o - e.center) * Vec3{1.0 / e.radii.x, 1.0 / e.radii.y, 1.0 / e.radii.z};
  const Vec3 ds = d * Vec3{1.0 / e.radii.x, 1.0 / e.radii.y, 1.0 / e.radii.z};
  const double a = dot(ds, ds);
  const double b = dot(os, ds);
  const double c = dot(os, os) - 1.0;
  const double disc = b * b - a * c;
  if (disc < 0.0) return -1.0;
  const double sq = std::sqrt(disc);
  const double t0 = (-b - sq) / a;
  if (t0 > kRayEpsilon) return t0;
  const double t1 = (-b + sq) / a;
  return t1 > kRayEpsilon ? t1 : -1.0;
}

struct Hit {
  double t = -1.0;
  int primitive = -1;
};

Hit intersect(const Scene& scene, const Vec3& o, const Vec3& d) {
  Hit best;
  auto consider = [&](double t, int id) {
    if (t > 0.0 && (best.t < 0.0 || t < best.t)) best = {t, id};
  };
  consider(hit_sphere(scene.head, o, d), 0);
  consider(hit_sphere(scene.nose, o, d), 1);
  consider(hit_ellipsoid(scene.shoulders, o, d), 2);
  return best;
}

bool occluded(const Scene& scene, const Vec3& o, const Vec3& d) {
  return hit_sphere(scene.head, o, d) > 0.0 || hit_sphere(scene.nose, o, d) > 0.0 ||
         hit_ellipsoid(scene.shoulders, o, d) > 0.0;
}

Vec3 normal_at(const Scene& scene, int primitive, const Vec3& p) {
  switch (primitive) {
    case 0: return normalize(p - scene.head.center);
    case 1: return normalize(p - scene.nose.center);
    default: {
      const Vec3 q = p - scene.shoulders.center;
      const Vec3& r = scene.shoulders.radii;
      return normalize({q.x / (r.x * r.x), q.y / (r.y * r.y), q.z / (r.z * r.z)});
    }
  }
}

Vec3 camera_ray(const RenderConfig& config, int px, int py, Vec3& origin) {
  const double frame_height = 2.0 / config.head_frame_fraction;
  const double tan_half = 0.5 * frame_height / config.camera_distance;
  origin = {0.0, -0.35, -config.camera_distance};
  const double res = config.resolution;
  const double x = ((px + 0.5) / res * 2.0 - 1.0) * tan_half;
  const double y = (1.0 - (py + 0.5) / res * 2.0) * tan_half;
  return normalize({x, y, 1.0});
}

void check_config(const RenderConfig& c) {
  if (c.resolution < 16 || c.shadow_samples < 1 || c.env_cosine_samples < 1 || c.bright_texel_count < 1 ||
      !(c.camera_distance > 0.0) || !(c.head_frame_fraction > 0.0) || !(c.background_clip > 0.0)) {
    fail(ErrorCode::InvalidConfig, "render config out of range");
  }
}

// Subtle multiplicative albedo texture in head-local coordinates.
double skin_texture(const SubjectParams& s, const Vec3& p_world) {
  const Vec3 p = rotate_y(p_world, -s.pose_yaw) / s.head_radius;
  const double phase = static_cast<double>(s.seed % 1024) * 0.37;
  const double n = std::sin(7.0 * p.x + phase) * std::sin(9.0 * p.y + 1.3 * phase) +
                   0.5 * std::sin(13.0 * p.z + 2.1 * phase) * std::cos(11.0 * p.x - phase);
  return 1.0 + s.texture_strength * n / 1.5;
}

float luminance(const Rgb& c) { return 0.2126f * c.r + 0.7152f * c.g + 0.0722f * c.b; }

struct BrightTexel {
  int x;
  int y;
  Rgb radiance;
  double solid_angle;
};

std::vector<BrightTexel> brightest_texels(const EnvMap& env, int count, std::vector<std::uint8_t>& is_bright) {
  const std::size_t n = static_cast<std::size_t>(env.width()) * env.height();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto lum = [&](std::size_t i) { return luminance(env.texel(static_cast<int>(i % env.width()), static_cast<int>(i / env.width()))); };
  const std::size_t k = std::min<std::size_t>(count, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), [&](std::size_t a, std::size_t b) {
    const float la = lum(a);
    const float lb = lum(b);
    return la != lb ? la > lb : a < b;
  });
  is_bright.assign(n, 0);
  std::vector<BrightTexel> out;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t idx = order[i];
    if (lum(idx) <= 0.0f) break;
    const int x = static_cast<int>(idx % env.width());
    const int y = static_cast<int>(idx / env.width());
    is_bright[idx] = 1;
    out.push_back({x, y, env.texel(x, y), texel_solid_angle(env, y)});
  }
  return out;
}

}  // namespace

SubjectParams make_subject(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x5b));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  SubjectParams s;
  s.seed = seed;
  const int anchor = static_cast<int>(uni(rng) * kSkinAnchors.size()) % static_cast<int>(kSkinAnchors.size());
  auto jitter = [&](float v) { return static_cast<float>(std::clamp(v + (uni(rng) - 0.5) * 0.06, 0.02, 0.98)); };
  s.albedo = {jitter(kSkinAnchors[anchor].r), jitter(kSkinAnchors[anchor].g), jitter(kSkinAnchors[anchor].b)};
  s.cloth_albedo = {static_cast<float>(0.1 + 0.7 * uni(rng)), static_cast<float>(0.1 + 0.7 * uni(rng)),
                    static_cast<float>(0.1 + 0.7 * uni(rng))};
  s.head_radius = 0.85 + 0.25 * uni(rng);
  s.nose_scale = uni(rng);
  s.shoulder_extent = 1.6 + 0.8 * uni(rng);
  s.specular_strength = 0.05 + 0.35 * uni(rng);
  s.shininess = 8.0 + 56.0 * uni(rng);
  s.pose_yaw = (uni(rng) * 2.0 - 1.0) * kPi / 6;
  s.texture_strength = 0.05 + 0.15 * uni(rng);
  s.label = {anchor, (s.head_radius > 0.975 ? 2 : 0) + (s.nose_scale > 0.5 ? 1 : 0)};
  return s;
}

std::optional<SurfaceHit> trace_pixel(const SubjectParams& subject, const RenderConfig& config, int px, int py) {
  check_config(config);
  const Scene scene = build_scene(subject);
  Vec3 origin;
  const Vec3 dir = camera_ray(config, px, py, origin);
  const Hit hit = intersect(scene, origin, dir);
  if (hit.primitive < 0) return std::nullopt;
  const Vec3 p = origin + dir * hit.t;
  return SurfaceHit{p, normal_at(scene, hit.primitive, p), -dir, hit.primitive};
}

bool scene_occluded(const SubjectParams& subject, const Vec3& origin, const Vec3& dir) {
  return occluded(build_scene(subject), origin, dir);
}

LinearImage render(const SubjectParams& subject, const EnvMap& env_in, double rotation, const RenderConfig& config) {
  check_config(config);
  const Scene scene = build_scene(subject);
  const EnvMap env = rotate(env_in, rotation);
  std::vector<std::uint8_t> is_bright;
  const std::vector<BrightTexel> bright = brightest_texels(env, config.bright_texel_count, is_bright);

  const int res = config.resolution;
  LinearImage out{ImageRgb(res, res), Mask(res, res)};
  const double ks = subject.specular_strength;
  const double shininess = subject.shininess;

#pragma omp parallel for schedule(dynamic, 1)
  for (int py = 0; py < res; ++py) {
    std::mt19937_64 rng(derive_seed(config.rng_seed, static_cast<std::uint64_t>(py)));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int px = 0; px < res; ++px) {
      Vec3 origin;
      const Vec3 dir = camera_ray(config, px, py, origin);
      const Hit hit = intersect(scene, origin, dir);
      if (hit.primitive < 0) {
        const Rgb bg = sample_dir(env, dir);
        const float rgb[3] = {bg.r, bg.g, bg.b};
        for (int c = 0; c < 3; ++c) {
          out.pixels.at(px, py, c) =
              static_cast<float>(srgb_decode(tonemap_value(rgb[c], config.background_clip)));
        }
        continue;
      }
      out.mask.at(px, py) = 1;
      const Vec3 p = origin + dir * hit.t;
      const Vec3 n = normal_at(scene, hit.primitive, p);
      const Vec3 v = -dir;
      const Vec3 refl = n * (2.0 * dot(n, v)) - v;
      const Vec3 p_off = p + n * 1e-4;

      Rgb albedo = hit.primitive == 2 ? subject.cloth_albedo : subject.albedo;
      if (hit.primitive != 2) {
        const double tex = skin_texture(subject, p);
        albedo = {static_cast<float>(std::clamp(albedo.r * tex, 0.0, 1.0)),
                  static_cast<float>(std::clamp(albedo.g * tex, 0.0, 1.0)),
                  static_cast<float>(std::clamp(albedo.b * tex, 0.0, 1.0))};
      }
      const double spec_norm = ks * (shininess + 2.0) / (2.0 * kPi);
      auto phong = [&](const Vec3& w) {
        const double c = dot(refl, w);
        return c > 0.0 ? spec_norm * std::pow(c, shininess) : 0.0;
      };

      double diffuse[3] = {0.0, 0.0, 0.0};
      double specular[3] = {0.0, 0.0, 0.0};

      // Remainder of the environment (bright texels removed): cosine-weighted
      // hemisphere samples, estimator f * L * V * pi.
      Vec3 t;
      Vec3 b;
      make_basis(n, t, b);
      const int nc = config.env_cosine_samples;
      for (int k = 0; k < nc; ++k) {
        const double u1 = uni(rng);
        const double u2 = uni(rng);
        const double r = std::sqrt(u1);
        const double phi = 2.0 * kPi * u2;
        const double z = std::sqrt(std::max(0.0, 1.0 - u1));
        const Vec3 w = normalize(t * (r * std::cos(phi)) + b * (r * std::sin(phi)) + n * z);
        int tx = 0;
        int ty = 0;
        texel_of(env, w, tx, ty);
        if (is_bright[static_cast<std::size_t>(ty) * env.width() + tx]) continue;
        const Rgb L = env.texel(tx, ty);
        if (L.r == 0.0f && L.g == 0.0f && L.b == 0.0f) continue;
        if (occluded(scene, p_off, w)) continue;
        const double sw = phong(w) * kPi;
        const float l[3] = {L.r, L.g, L.b};
        for (int c = 0; c < 3; ++c) {
          diffuse[c] += l[c];
          specular[c] += sw * l[c];
        }
      }
      for (int c = 0; c < 3; ++c) {
        diffuse[c] /= nc;
        specular[c] /= nc;
      }

      // Brightest texels: uniform solid-angle jitter inside each texel.
      const int ns = config.shadow_samples;
      const double dphi = 2.0 * kPi / env.width();
      for (const BrightTexel& bt : bright) {
        const double cos0 = std::cos(static_cast<double>(bt.y) / env.height() * kPi);
        const double cos1 = std::cos(static_cast<double>(bt.y + 1) / env.height() * kPi);
        double dsum = 0.0;
        double ssum = 0.0;
        for (int k = 0; k < ns; ++k) {
          const double azimuth = (bt.x + uni(rng)) * dphi - kPi;
          const double ct = cos0 + (cos1 - cos0) * uni(rng);
          const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
          const Vec3 w{st * std::sin(azimuth), ct, st * std::cos(azimuth)};
          const double cosn = dot(n, w);
          if (cosn <= 0.0) continue;
          if (occluded(scene, p_off, w)) continue;
          dsum += cosn / kPi;
          ssum += phong(w) * cosn;
        }
        const double wgt = bt.solid_angle / ns;
        const float l[3] = {bt.radiance.r, bt.radiance.g, bt.radiance.b};
        for (int c = 0; c < 3; ++c) {
          diffuse[c] += dsum * wgt * l[c];
          specular[c] += ssum * wgt * l[c];
        }
      }

      const float a[3] = {albedo.r, albedo.g, albedo.b};
      for (int c = 0; c < 3; ++c) {
        out.pixels.at(px, py, c) = static_cast<float>(std::max(0.0, a[c] * diffuse[c] + specular[c]));
      }
    }
  }
  return out;
}

double srgb_encode(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x <= 0.0031308 ? 12.92 * x : 1.055 * std::pow(x, 1.0 / 2.4) - 0.055;
}

double srgb_decode(double y) {
  y = std::clamp(y, 0.0, 1.0);
  return y <= 0.04045 ? y / 12.92 : std::pow((y + 0.055) / 1.055, 2.4);
}

ImageRgb8 linear_to_srgb(const LinearImage& image) {
  const ImageRgb& px = image.pixels;
  ImageRgb8 out{px.width, px.height, std::vector<std::uint8_t>(px.size())};
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = std::round(255.0 * srgb_encode(px.pixels[i]));
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

ImageRgb linear_to_srgb_float(const ImageRgb& linear) {
  ImageRgb out(linear.width, linear.height);
  for (std::size_t i = 0; i < linear.size(); ++i) out.pixels[i] = static_cast<float>(srgb_encode(linear.pixels[i]));
  return out;
}

}  // namespace relight
