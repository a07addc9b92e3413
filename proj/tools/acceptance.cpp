// relight_acceptance: prints one PASS/FAIL line per acceptance criterion.
//
//   relight_acceptance --criteria 1-7,10
//   relight_acceptance --criteria 8,9 --desk-config configs/desk.json --desk-run runs/desk
//
// Criteria 8 and 9 evaluate a trained desk run. When the run directory has no
// train/final.rlck the dataset is generated and the model trained first,
// within the config's time budget. Exit status is 1 when a hard criterion
// fails; criterion 9 is soft and only reported.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "relight/config.hpp"
#include "relight/error.hpp"
#include "relight/metrics.hpp"
#include "relight/renderer.hpp"
#include "relight/sampler.hpp"
#include "relight/trainer.hpp"

namespace fs = std::filesystem;
using namespace relight;

namespace {

constexpr double kPi = std::numbers::pi;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

Tensor gaussian(Rng& rng, int n, int c, int h, int w, float scale = 1.0f) {
  std::normal_distribution<float> g(0.0f, scale);
  Tensor t(n, c, h, w);
  for (float& v : t.data) v = g(rng);
  return t;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// A randomized epsilon model: a fixed random affine map of the packed
// channels, with separate weights per drop pattern and a timestep term.
class RandomStub final : public EpsModel {
 public:
  explicit RandomStub(std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<float> g(0.0f, 0.5f);
    for (auto& w : weights_)
      for (float& v : w) v = g(rng);
  }
  Tensor predict(const PackedInput& packed, std::span<const int> t, std::span<const Label> labels) const override {
    const Tensor& in = packed.channels;
    Tensor out(in.n, 3, in.h, in.w);
    for (int i = 0; i < in.n; ++i) {
      const DropFlags& f = packed.drop_flags[static_cast<std::size_t>(i)];
      const auto& w = weights_[(f.image ? 4 : 0) + (f.env ? 2 : 0) + (f.label ? 1 : 0)];
      const float lab = f.label ? 0.0f : 0.1f * static_cast<float>(labels[static_cast<std::size_t>(i)][0] + 1);
      for (int o = 0; o < 3; ++o)
        for (int y = 0; y < in.h; ++y)
          for (int x = 0; x < in.w; ++x) {
            float acc = w[27 + o] * static_cast<float>(t[static_cast<std::size_t>(i)]) * 1e-3f + lab;
            for (int c = 0; c < 9; ++c) acc += w[o * 9 + c] * in.at(i, c, y, x);
            out.at(i, o, y, x) = std::tanh(acc);
          }
    }
    return out;
  }

 private:
  std::array<std::array<float, 30>, 8> weights_{};
};

// Returns a constant per guidance branch: image dropped, label dropped, full.
class BranchConstants final : public EpsModel {
 public:
  std::array<float, 3> values{0.0f, 1.0f, 2.0f};
  Tensor predict(const PackedInput& packed, std::span<const int>, std::span<const Label>) const override {
    const Tensor& in = packed.channels;
    Tensor out(in.n, 3, in.h, in.w);
    for (int i = 0; i < in.n; ++i) {
      const DropFlags& f = packed.drop_flags[static_cast<std::size_t>(i)];
      const float v = values[f.image ? 0 : (f.label ? 1 : 2)];
      std::fill(out.sample(i), out.sample(i) + 3 * in.h * in.w, v);
    }
    return out;
  }
};

Outcome criterion_1() {
  const auto t0 = Clock::now();
  Rng rng(101);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const RandomStub model(1000 + trial);
    const Tensor x = gaussian(rng, 1, 3, 8, 8);
    const Tensor img = gaussian(rng, 1, 3, 8, 8);
    const Tensor env = gaussian(rng, 1, 3, 8, 8);
    const Label label{static_cast<int>(rng() % 10), static_cast<int>(rng() % 4)};
    const int t = 1 + static_cast<int>(rng() % 1000);
    GuidanceParams g;
    g.lambda_T = 1.0;
    g.lambda_I = 1.0;
    const Tensor guided = cfg_epsilon(model, x, img, env, label, t, g);
    const DropFlags none{};
    const std::array<int, 1> ts{t};
    const std::array<Label, 1> ls{label};
    const Tensor full = model.predict(pack_conditions(x, img, env, std::span(&none, 1)), ts, ls);
    if (guided.data == full.data) ++exact;
  }
  BranchConstants branches;
  const Tensor z(1, 3, 4, 4, 0.0f);
  const Tensor scalar = cfg_epsilon(branches, z, z, z, Label{0, 0}, 10, GuidanceParams{});
  const bool scalar_ok = std::all_of(scalar.data.begin(), scalar.data.end(), [](float v) { return v == 5.0f; });
  const double secs = seconds_since(t0);
  return {exact == 100 && scalar_ok && secs < 1.0,
          fmt("lambda=1 exact on %.0f/100 trials, scalar example = %.6g, %.2fs", exact, scalar.data[0], secs)};
}

Outcome criterion_2() {
  const auto t0 = Clock::now();
  const NoiseSchedule s = make_schedule();
  Rng rng(202);
  double worst = 0.0;
  // strides 10, 50, 250 over T = 1000
  for (int steps : {100, 20, 4}) {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x0 = gaussian(rng, 1, 3, 16, 16);
      for (float& v : x0.data) v = std::tanh(v);
      const Tensor xT = gaussian(rng, 1, 3, 16, 16);
      const Tensor out =
          ddim_sample(xT, s, steps, [&](const Tensor& x, int t) { return oracle_epsilon(x, x0, t, s); });
      for (std::size_t k = 0; k < x0.size(); ++k)
        worst = std::max(worst, static_cast<double>(std::abs(out.data[k] - x0.data[k])));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-5 && secs < 10.0, fmt("max |x0_hat - x0| = %.3g over 30 trajectories, %.2fs", worst, secs)};
}

Outcome criterion_3() {
  const auto t0 = Clock::now();
  const NoiseSchedule s = make_schedule();
  constexpr int kDraws = 10000;
  constexpr float kX0 = 0.5f;
  Rng rng(303);
  int failures = 0, checks = 0;
  double worst_z = 0.0;
  Tensor x0(1, 1, 1, 1, kX0);
  for (int t : {1, 500, 1000}) {
    const double ab = s.alpha_bar(t);
    double sum = 0.0, sum2 = 0.0;
    for (int d = 0; d < kDraws; ++d) {
      const double v = q_sample(x0, t, gaussian(rng, 1, 1, 1, 1), s).data[0];
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / kDraws;
    const double var = (sum2 - kDraws * mean * mean) / (kDraws - 1);
    const double want_var = 1.0 - ab;
    const double z_mean = std::abs(mean - std::sqrt(ab) * kX0) / std::sqrt(want_var / kDraws);
    const double z_var = std::abs(var - want_var) / (want_var * std::sqrt(2.0 / (kDraws - 1)));
    worst_z = std::max({worst_z, z_mean, z_var});
    failures += (z_mean > 3.0) + (z_var > 3.0);
    checks += 2;
  }
  const double ab_T = s.alpha_bar(1000);
  const bool ab_ok = std::abs(ab_T - 4.0e-5) <= 0.1 * 4.0e-5;
  const double secs = seconds_since(t0);
  return {failures == 0 && ab_ok && secs < 10.0,
          fmt("%.0f/%.0f moments within 3 SE (worst %.2f SE), alpha_bar_1000 = %.4g", checks - failures, checks,
              worst_z, ab_T) + fmt(", %.2fs", secs)};
}

bool ray_passes_inside(const Vec3& o, const Vec3& d, const Vec3& center, double margin) {
  const Vec3 oc = center - o;
  const double t = dot(oc, d);
  return t > 0.0 && norm(o + d * t - center) < margin;
}

Outcome criterion_4() {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;

  // Albedo under a uniform unit env at an unoccluded pixel.
  SubjectParams s = make_subject(12);
  s.specular_strength = 0.0;
  s.texture_strength = 0.0;
  s.nose_scale = 0.0;
  s.pose_yaw = 0.0;
  RenderConfig c;
  c.resolution = 48;
  c.shadow_samples = 256;
  c.env_cosine_samples = 256;
  c.rng_seed = 7;
  Rng rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int px = -1, py = -1;
  for (int y = 0; y < c.resolution && px < 0; ++y) {
    for (int x = 0; x < c.resolution && px < 0; ++x) {
      const auto hit = trace_pixel(s, c, x, y);
      if (!hit || hit->primitive != 0) continue;
      bool clear = true;
      for (int k = 0; k < 4000 && clear; ++k) {
        const double z = 2.0 * u(rng) - 1.0;
        const double phi = 2.0 * kPi * u(rng);
        const double r = std::sqrt(1.0 - z * z);
        Vec3 w{r * std::cos(phi), z, r * std::sin(phi)};
        if (dot(w, hit->normal) < 0.0) w = -w;
        if (scene_occluded(s, hit->position + hit->normal * 1e-4, w)) clear = false;
      }
      if (clear) px = x, py = y;
    }
  }
  double albedo_err = 1.0;
  if (px >= 0) {
    const LinearImage img = render(s, EnvMap::constant(32, 16, {1, 1, 1}), 0.0, c);
    albedo_err = std::max({std::abs(img.pixels.at(px, py, 0) / s.albedo.r - 1.0),
                           std::abs(img.pixels.at(px, py, 1) / s.albedo.g - 1.0),
                           std::abs(img.pixels.at(px, py, 2) / s.albedo.b - 1.0)});
  }
  ok = ok && albedo_err <= 0.02;
  detail += fmt("albedo rel err %.4f", albedo_err);

  // Sun straight behind the head: pixels whose sun ray passes well inside the head stay black.
  SubjectParams back = make_subject(4);
  back.pose_yaw = 0.0;
  EnvSpec sun;
  sun.sun_direction = {0, 0, 1};
  sun.sun_intensity = 50.0;
  sun.sun_angular_radius = 0.05;
  sun.sky_tint = {0, 0, 0};
  RenderConfig sc;
  sc.resolution = 32;
  sc.shadow_samples = 4;
  sc.env_cosine_samples = 16;
  const LinearImage shadow = render(back, procedural_env(sun, 64, 32), 0.0, sc);
  int occluded = 0, lit = 0;
  for (int y = 0; y < sc.resolution; ++y)
    for (int x = 0; x < sc.resolution; ++x) {
      const auto hit = trace_pixel(back, sc, x, y);
      if (!hit || hit->primitive != 0) continue;
      if (!ray_passes_inside(hit->position, {0, 0, 1}, {0, 0, 0}, 0.8 * back.head_radius)) continue;
      ++occluded;
      for (int ch = 0; ch < 3; ++ch) lit += shadow.pixels.at(x, y, ch) != 0.0f;
    }
  ok = ok && occluded > 0 && lit == 0;
  detail += fmt(", occluded pixels %.0f with %.0f lit channels", occluded, lit);

  // Additivity render(E1 + E2) = render(E1) + render(E2) on the masked image
  // sum, within 3 sigma estimated from 8 independent sample seeds.
  const SubjectParams a = make_subject(30);
  const EnvMap e1 = procedural_env(random_env_spec(31), 32, 16);
  const EnvMap e2 = procedural_env(random_env_spec(32), 32, 16);
  std::vector<float> sum_px(e1.pixels().size());
  for (std::size_t i = 0; i < sum_px.size(); ++i) sum_px[i] = e1.pixels()[i] + e2.pixels()[i];
  const EnvMap e12(32, 16, std::move(sum_px));
  RenderConfig lc;
  lc.resolution = 24;
  std::array<std::vector<double>, 3> totals;
  for (int seed = 0; seed < 8; ++seed) {
    lc.rng_seed = 500 + static_cast<std::uint64_t>(seed);
    int k = 0;
    for (const EnvMap* e : {&e1, &e2, &e12}) {
      const LinearImage img = render(a, *e, 0.4, lc);
      double tot = 0.0;
      for (int y = 0; y < lc.resolution; ++y)
        for (int x = 0; x < lc.resolution; ++x)
          if (img.mask.at(x, y))
            for (int ch = 0; ch < 3; ++ch) tot += img.pixels.at(x, y, ch);
      totals[static_cast<std::size_t>(k++)].push_back(tot);
    }
  }
  auto mean_var = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    return std::pair{m, s2 / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())};
  };
  const auto [m1, v1] = mean_var(totals[0]);
  const auto [m2, v2] = mean_var(totals[1]);
  const auto [m12, v12] = mean_var(totals[2]);
  const double sigma = std::sqrt(v1 + v2 + v12);
  const double gap = std::abs(m12 - m1 - m2);
  ok = ok && gap <= 3.0 * sigma;
  detail += fmt(", additivity gap %.4g vs 3 sigma %.4g", gap, 3.0 * sigma);

  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  return {ok, detail + fmt(", %.1fs", secs)};
}

Outcome criterion_5() {
  const double clip = 8.0;
  const double mid = tonemap_value(clip / 2, clip);
  const double want_mid = std::pow(0.5, 1.0 / 2.2);
  bool monotone = true;
  double prev = -1.0;
  for (int i = 0; i < 1000; ++i) {
    const double v = tonemap_value(clip * 1.5 * i / 999.0, clip);
    monotone = monotone && v >= prev;
    prev = v;
  }
  const bool ok = tonemap_value(0.0, clip) == 0.0 && std::abs(tonemap_value(clip, clip) - 1.0) <= 1e-6 &&
                  std::abs(mid - want_mid) <= 1e-6 && std::abs(mid - 0.72974) <= 1e-5 && monotone;
  return {ok, fmt("T(0) = %.6g, T(clip) = %.9g, T(clip/2) = %.9g, ramp monotone %.0f", tonemap_value(0.0, clip),
                  tonemap_value(clip, clip), mid, monotone)};
}

DatasetBuildConfig tiny_build(std::uint64_t seed) {
  DatasetBuildConfig c;
  c.n_subjects = 4;
  c.n_envs = 2;
  c.rotations_per_env = 2;
  c.seed = seed;
  c.render.resolution = 16;
  c.render.shadow_samples = 1;
  c.render.env_cosine_samples = 4;
  c.render.bright_texel_count = 4;
  c.env_height = 8;
  c.real_count = 4;
  return c;
}

struct TinyData {
  fs::path dir;
  std::optional<LoadedDataset> data;
  RealDomainSet real;
  explicit TinyData(const fs::path& root) : dir(root) {
    data.emplace(build_dataset(tiny_build(1), dir));
    real = load_real_set(dir / "real", 16);
  }
};

Outcome criterion_6(const TinyData& tiny) {
  Rng rng(606);
  const std::vector<RelightTuple> tuples = mix_batch(*tiny.data, tiny.real, 10000, 0.7, rng);
  const double relight = static_cast<double>(std::count_if(tuples.begin(), tuples.end(),
                                                           [](const RelightTuple& t) { return t.task == Task::Relight; })) /
                         static_cast<double>(tuples.size());
  Rng drng(607);
  const DropoutProbs probs = DropoutProbs::uniform(0.1);
  std::array<int, 3> single{};
  std::array<int, 3> joint{};  // image&env, image&label, env&label
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) {
    const DropFlags f = draw_drop_flags(drng, probs);
    single[0] += f.image, single[1] += f.env, single[2] += f.label;
    joint[0] += f.image && f.env, joint[1] += f.image && f.label, joint[2] += f.env && f.label;
  }
  bool ok = std::abs(relight - 0.7) <= 0.02;
  std::string detail = fmt("relight fraction %.4f, drop rates", relight);
  for (int k = 0; k < 3; ++k) {
    const double r = static_cast<double>(single[k]) / kDraws;
    ok = ok && std::abs(r - 0.1) <= 0.01;
    detail += fmt(" %.4f", r);
  }
  detail += ", pairwise";
  for (int k = 0; k < 3; ++k) {
    const double r = static_cast<double>(joint[k]) / kDraws;
    // 3 standard errors of a 0.01 rate at 10,000 draws
    ok = ok && std::abs(r - 0.01) <= 3.0 * std::sqrt(0.01 * 0.99 / kDraws);
    detail += fmt(" %.4f", r);
  }
  return {ok, detail};
}

UNetConfig tiny_model() {
  UNetConfig c;
  c.resolution = 16;
  c.base_channels = 8;
  c.channel_mults = {1, 2};
  c.embed_dim = 16;
  return c;
}

Outcome criterion_7(const TinyData& tiny) {
  const auto t0 = Clock::now();
  // Overfit one fixed batch.
  Rng rng(707);
  const std::vector<RelightTuple> tuples = mix_batch(*tiny.data, tiny.real, 4, 0.7, rng);
  const TrainingBatch batch = make_training_batch(tuples, make_schedule(100, 1e-4, 0.02), rng, DropoutProbs::uniform(0.1));
  TrainConfig tc;
  tc.steps = 500;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.seed = 99;
  tc.schedule_steps = 100;
  Checkpoint ckpt = initial_checkpoint(tiny_model(), tc);
  double first = 0.0, best = 0.0;
  for (int i = 0; i < 500; ++i) {
    const double l = train_step(ckpt, batch).total;
    if (i == 0) first = best = l;
    best = std::min(best, l);
  }
  const double ratio = best / first;

  // Gradient check on 20 parameters.
  ModelParams p = init_model(tiny_model(), 11);
  std::normal_distribution<float> g(0.0f, 0.05f);
  for (ParamTensor& t : p.tensors)
    for (float& v : t.values) v += g(rng);
  TrainingBatch gb;
  const Tensor x = gaussian(rng, 2, 3, 16, 16);
  const Tensor img = gaussian(rng, 2, 3, 16, 16);
  const Tensor env = gaussian(rng, 2, 3, 16, 16);
  const std::vector<DropFlags> flags{{false, false, false}, {false, true, true}};
  gb.packed = pack_conditions(x, img, env, flags);
  gb.timesteps = {17, 640};
  gb.labels = {Label{3, 1}, Label{7, 2}};
  gb.tasks = {Task::Relight, Task::Relight};
  gb.eps = gaussian(rng, 2, 3, 16, 16);
  Gradients grads = Gradients::zeros_like(p);
  compute_gradients(p, gb, grads);
  const StepConditioning cond = make_conditioning(gb.packed, gb.timesteps, gb.labels);
  auto loss = [&]() { return mean_squared_error(forward(p, gb.packed.channels, cond), gb.eps); };
  double gmax = 0.0;
  for (const auto& gv : grads.values)
    for (float v : gv) gmax = std::max(gmax, static_cast<double>(std::abs(v)));
  int checked = 0, within = 0;
  double worst = 0.0;
  while (checked < 20) {
    const std::size_t ti = rng() % p.tensors.size();
    ParamTensor& t = p.tensors[ti];
    const std::size_t k = rng() % t.values.size();
    const double analytic = grads.values[ti][k];
    if (std::abs(analytic) < 0.05 * gmax) continue;
    const float orig = t.values[k];
    auto central = [&](float h) {
      t.values[k] = orig + h;
      const double up = loss();
      t.values[k] = orig - h;
      const double down = loss();
      t.values[k] = orig;
      return (up - down) / (2.0 * h);
    };
    const double numeric = (4.0 * central(5e-3f) - central(1e-2f)) / 3.0;
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    worst = std::max(worst, rel);
    within += rel < 1e-3;
    ++checked;
  }
  const double secs = seconds_since(t0);
  return {ratio < 0.01 && within == 20 && secs < 600.0,
          fmt("overfit loss ratio %.4f, gradient check %.0f/20 (worst rel %.2g), %.1fs", ratio, within, worst, secs)};
}

Outcome criterion_10() {
  const ModelParams params = init_model(tiny_model(), 3);
  const UNetModel model(params);
  const NoiseSchedule s = make_schedule();
  Rng rng(1010);
  SampleRequest r;
  r.input_image = ImageRgb(16, 16);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : r.input_image.pixels) v = u(rng);
  r.env = procedural_env(random_env_spec(5), 32, 16);
  r.label = {2, 1};
  r.steps = 5;
  r.seed = 9;
  SampleRequest full = r;
  full.rotation = 2.0 * kPi;
  const bool periodic = relight::relight(model, s, r).output == relight::relight(model, s, full).output;

  SampleRequest flat = r;
  flat.env = EnvMap::constant(32, 16, {0.7f, 0.5f, 0.3f});
  const RotationSweep sweep = rotation_sweep(model, s, flat, 8);
  int identical = 0;
  for (const ImageRgb& f : sweep.frames) identical += f == sweep.frames.front();
  return {periodic && identical == 8,
          fmt("rotation 2pi bit-identical %.0f, constant-env frames identical %.0f/8", periodic, identical)};
}

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return da > 0 && db > 0 ? num / std::sqrt(da * db) : 0.0;
}

struct Desk {
  RunConfig config;
  std::optional<LoadedDataset> data;
  Checkpoint ckpt;
  NoiseSchedule schedule;
};

// Loads the desk run, generating the dataset and training when missing.
Desk prepare_desk(const std::string& config_path, const std::string& run_dir) {
  Desk d;
  d.config = load_run_config(config_path);
  d.config.run_dir = run_dir;
  validate(d.config);
  const fs::path data_dir = d.config.data_dir();
  if (!fs::exists(data_dir / "manifest.json")) {
    std::printf("# generating desk dataset in %s\n", data_dir.string().c_str());
    std::fflush(stdout);
    build_dataset(d.config.data.build, data_dir);
  }
  const DatasetManifest manifest = load_manifest(data_dir);
  d.data.emplace(manifest);
  const fs::path final_path = d.config.train_dir() / "final.rlck";
  if (!fs::exists(final_path)) {
    std::printf("# training desk model (budget %.0fs) in %s\n", d.config.train.time_budget_s,
                d.config.train_dir().string().c_str());
    std::fflush(stdout);
    write_snapshot(d.config);
    const RealDomainSet real = load_real_set(data_dir / manifest.real_dir, d.data->resolution());
    train(*d.data, real, initial_checkpoint(d.config.model, d.config.train, manifest_hash(manifest)),
          d.config.train_dir());
  }
  d.ckpt = load_checkpoint(final_path);
  const TrainConfig& t = d.ckpt.config;
  d.schedule = make_schedule(t.schedule_steps, t.beta_start, t.beta_end);
  return d;
}

Outcome criterion_8(const Desk& d) {
  const auto t0 = Clock::now();
  const DatasetManifest& m = d.data->manifest();
  const std::vector<EvalPair> plan = pairing_plan(m, d.config.eval.pairing_seed);
  EvalOptions opt;
  opt.guidance = d.config.sample.guidance;
  opt.steps = d.config.eval.steps;
  opt.seed = d.config.seed;
  const UNetModel model(d.ckpt.sampling_params());
  const fs::path dir = fs::path(d.config.run_dir) / "acceptance";
  const EvalReport ours = eval_set(DiffusionRelighter(model, d.schedule), *d.data, plan, opt, dir / "model.csv");
  const EvalReport copy = eval_set(CopyInputRelighter{}, *d.data, plan, opt, dir / "copy.csv");
  const bool shape = m.subject_seeds.size() == 16 && m.env_specs.size() == 8 && m.rotations_per_env == 8 &&
                     m.render.resolution == 64;
  const bool ok = shape && ours.mean_psnr >= copy.mean_psnr + 1.0 && ours.mean_ssim > copy.mean_ssim;
  return {ok, fmt("%.0f pairs after %.0f steps: PSNR %.3f vs copy %.3f dB", static_cast<double>(plan.size()),
                  static_cast<double>(d.ckpt.step), ours.mean_psnr, copy.mean_psnr) +
                  fmt(", SSIM %.4f vs copy %.4f, desk shape 16x8x8@64 %.0f, %.0fs", ours.mean_ssim, copy.mean_ssim,
                      shape, seconds_since(t0))};
}

Outcome criterion_9(const Desk& d) {
  const auto t0 = Clock::now();
  const std::vector<EvalPair> plan = pairing_plan(d.data->manifest(), d.config.eval.pairing_seed);
  const UNetModel model(d.ckpt.sampling_params());
  const std::vector<double> lambdas{1.0, 2.0, 3.0, 5.0};
  // The desk split holds out two subjects; the ten cases are the first ten
  // held-out pairs of the pairing plan.
  const std::size_t n = std::min<std::size_t>(10, plan.size());
  EvalOptions opt;
  opt.guidance = d.config.sample.guidance;
  opt.steps = d.config.eval.steps;
  opt.seed = d.config.seed;
  double total = 0.0;
  std::string per;
  for (std::size_t i = 0; i < n; ++i) {
    const LambdaSweep s = sweep_lambda(model, d.schedule, eval_request(*d.data, plan[i], opt, i), lambdas);
    const double rho = spearman(lambdas, s.psnr_vs_input);
    total += rho;
    per += fmt(i ? ",%.2f" : "%.2f", rho);
  }
  const double mean = n ? total / static_cast<double>(n) : 0.0;
  return {n == 10 && mean >= 0.8,
          fmt("mean Spearman(lambda_I, PSNR vs input) = %.3f over %.0f pairs", mean, static_cast<double>(n)) + " [" +
              per + "]" + fmt(", %.0fs (soft)", seconds_since(t0))};
}

std::set<int> parse_criteria(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    const int lo = std::stoi(item.substr(0, dash));
    const int hi = dash == std::string::npos ? lo : std::stoi(item.substr(dash + 1));
    for (int k = lo; k <= hi; ++k) {
      if (k < 1 || k > 10) fail(ErrorCode::InvalidConfig, "criteria are numbered 1 to 10");
      out.insert(k);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relight_acceptance: PASS/FAIL per acceptance criterion"};
  std::string criteria = "1-10";
  std::string desk_config = "configs/desk.json";
  std::string desk_run = "runs/desk";
  std::string scratch = (fs::temp_directory_path() / "relight_acceptance").string();
  app.add_option("--criteria", criteria, "comma list or ranges, e.g. 1-7,10");
  app.add_option("--desk-config", desk_config, "run config for criteria 8 and 9");
  app.add_option("--desk-run", desk_run, "run directory holding (or receiving) the trained desk model");
  app.add_option("--scratch", scratch, "scratch directory for the small fixtures");
  CLI11_PARSE(app, argc, argv);

  bool hard_failure = false;
  auto report = [&](int k, const Outcome& o) {
    std::printf("%s %d: %s\n", o.pass ? "PASS" : "FAIL", k, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass && k != 9) hard_failure = true;
  };
  try {
    const std::set<int> selected = parse_criteria(criteria);
    std::optional<TinyData> tiny;
    if (selected.count(6) || selected.count(7)) {
      fs::remove_all(scratch);
      tiny.emplace(fs::path(scratch) / "tiny");
    }
    std::optional<Desk> desk;
    if (selected.count(8) || selected.count(9)) desk = prepare_desk(desk_config, desk_run);
    for (int k : selected) {
      switch (k) {
        case 1: report(k, criterion_1()); break;
        case 2: report(k, criterion_2()); break;
        case 3: report(k, criterion_3()); break;
        case 4: report(k, criterion_4()); break;
        case 5: report(k, criterion_5()); break;
        case 6: report(k, criterion_6(*tiny)); break;
        case 7: report(k, criterion_7(*tiny)); break;
        case 8: report(k, criterion_8(*desk)); break;
        case 9: report(k, criterion_9(*desk)); break;
        case 10: report(k, criterion_10()); break;
      }
    }
    if (tiny) fs::remove_all(scratch);
  } catch (const Error& e) {
    std::fprintf(stderr, "ERROR:%s:%s\n", std::string(to_string(e.code())).c_str(), e.what());
    return 1;
  }
  return hard_failure ? 1 : 0;
}
