#include "relight/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "relight/error.hpp"
#include "relight/metrics.hpp"

namespace relight {

namespace fs = std::filesystem;

void validate(const GuidanceParams& g) {
  if (!std::isfinite(g.lambda_T) || !std::isfinite(g.lambda_I) || g.lambda_T < 0.0 || g.lambda_I < 0.0) {
    fail(ErrorCode::InvalidConfig, "guidance scales must be finite and nonnegative");
  }
}

Tensor cfg_epsilon(const EpsModel& model, const Tensor& x, const Tensor& input_image, const Tensor& ldr_env,
                   const Label& label, int t, const GuidanceParams& g) {
  if (x.n != 1 || !x.same_shape(input_image) || !x.same_shape(ldr_env)) {
    fail(ErrorCode::ShapeMismatch, "cfg_epsilon expects matching (1,3,h,w) tensors");
  }
  const int steps[3] = {t, t, t};
  const Label labels[3] = {label, label, label};
  const DropFlags flags[3] = {{true, false, !g.uncond_keeps_text}, {false, false, true}, {false, false, false}};
  Tensor xs(3, 3, x.h, x.w);
  Tensor is(3, 3, x.h, x.w);
  Tensor es(3, 3, x.h, x.w);
  for (int i = 0; i < 3; ++i) {
    std::copy(x.data.begin(), x.data.end(), xs.sample(i));
    std::copy(input_image.data.begin(), input_image.data.end(), is.sample(i));
    std::copy(ldr_env.data.begin(), ldr_env.data.end(), es.sample(i));
  }
  const Tensor e = model.predict(pack_conditions(xs, is, es, flags), steps, labels);
  if (e.n != 3 || e.sample_size() != x.sample_size()) fail(ErrorCode::ShapeMismatch, "model output shape");

  const double w0 = 1.0 - g.lambda_I;
  const double w1 = g.lambda_I - g.lambda_T;
  const double w2 = g.lambda_T;
  Tensor out(1, 3, x.h, x.w);
  const float* e0 = e.sample(0);
  const float* e1 = e.sample(1);
  const float* e2 = e.sample(2);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out.data[k] = static_cast<float>(e0[k] * w0 + e1[k] * w1 + e2[k] * w2);
  }
  return out;
}

Tensor ddim_step(const Tensor& x_next, const Tensor& eps, int t_next, int t_prev, const NoiseSchedule& schedule,
                 bool clip_x0) {
  if (!(t_prev < t_next) || t_prev < 0 || t_next > schedule.T) {
    fail(ErrorCode::StepOrderViolation, "need 0 <= t_prev < t_next <= T, got " + std::to_string(t_prev) + " and " +
                                            std::to_string(t_next));
  }
  if (!x_next.same_shape(eps)) fail(ErrorCode::ShapeMismatch, "x and eps shapes differ");
  const double ab_next = schedule.alpha_bar(t_next);
  const double ab_prev = schedule.alpha_bar(t_prev);
  const double s_next = std::sqrt(ab_next);
  const double n_next = std::sqrt(1.0 - ab_next);
  const double s_prev = std::sqrt(ab_prev);
  const double n_prev = std::sqrt(1.0 - ab_prev);
  Tensor out = x_next;
  for (std::size_t k = 0; k < out.size(); ++k) {
    double x0 = (static_cast<double>(x_next.data[k]) - n_next * eps.data[k]) / s_next;
    double e = eps.data[k];
    if (clip_x0 && std::abs(x0) > 1.0) {
      x0 = std::clamp(x0, -1.0, 1.0);
      e = (x_next.data[k] - s_next * x0) / n_next;
    }
    out.data[k] = static_cast<float>(t_prev == 0 ? x0 : s_prev * x0 + n_prev * e);
  }
  return out;
}

std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) {
    fail(ErrorCode::InvalidConfig, "DDIM steps must be in [1," + std::to_string(T) + "], got " + std::to_string(steps));
  }
  std::vector<int> taus;
  for (int i = steps - 1; i >= 0; --i) {
    taus.push_back(static_cast<int>((static_cast<long long>(i) + 1) * T / steps));
  }
  return taus;
}

Tensor ddim_sample(const Tensor& x_T, const NoiseSchedule& schedule, int steps,
                   const std::function<Tensor(const Tensor& x, int t)>& eps_fn, bool clip_x0) {
  const std::vector<int> taus = ddim_timesteps(schedule.T, steps);
  Tensor x = x_T;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const int t = taus[i];
    const int t_prev = i + 1 < taus.size() ? taus[i + 1] : 0;
    x = ddim_step(x, eps_fn(x, t), t, t_prev, schedule, clip_x0);
  }
  return x;
}

Tensor oracle_epsilon(const Tensor& x, const Tensor& x0_true, int t, const NoiseSchedule& schedule) {
  if (!x.same_shape(x0_true)) fail(ErrorCode::ShapeMismatch, "x and x0 shapes differ");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Tensor eps = x;
  for (std::size_t k = 0; k < eps.size(); ++k) {
    eps.data[k] = static_cast<float>((static_cast<double>(x.data[k]) - a * x0_true.data[k]) / b);
  }
  return eps;
}

LdrEnvImage request_ldr_env(const SampleRequest& request, int resolution) {
  return tonemap_ldr(rotate(request.env, request.rotation), request.clip_max, resolution, resolution);
}

namespace {

Tensor initial_noise(std::uint64_t seed, int res) {
  Rng rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor x(1, 3, res, res);
  for (float& v : x.data) v = normal(rng);
  return x;
}

ImageRgb masked_input(const SampleRequest& r) {
  return r.input_mask.values.empty() ? r.input_image : apply_mask(r.input_image, r.input_mask);
}

}  // namespace

RelightResult relight(const EpsModel& model, const NoiseSchedule& schedule, const SampleRequest& request) {
  validate(request.guidance);
  const int res = request.input_image.width;
  if (request.input_image.height != res) fail(ErrorCode::ShapeMismatch, "input portrait must be square");
  const Tensor input = image_to_tensor(masked_input(request));
  const Tensor env = image_to_tensor(request_ldr_env(request, res));
  const Tensor x0 = ddim_sample(initial_noise(request.seed, res), schedule, request.steps,
                                [&](const Tensor& x, int t) {
                                  return cfg_epsilon(model, x, input, env, request.label, t, request.guidance);
                                },
                                request.clip_x0);
  RelightResult r;
  r.output = tensor_to_image(x0);
  r.composited = request.input_mask.values.empty() ? r.output : apply_mask(r.output, request.input_mask);
  return r;
}

ImageRgb DiffusionRelighter::run(const SampleRequest& request, const ImageRgb&) const {
  return relight(model_, schedule_, request).output;
}

ImageRgb CopyInputRelighter::run(const SampleRequest& request, const ImageRgb&) const { return request.input_image; }

ImageRgb OracleEpsRelighter::run(const SampleRequest& request, const ImageRgb& target) const {
  const Tensor x0_true = image_to_tensor(target);
  const Tensor x0 = ddim_sample(initial_noise(request.seed, target.width), schedule_, request.steps,
                                [&](const Tensor& x, int t) { return oracle_epsilon(x, x0_true, t, schedule_); },
                                request.clip_x0);
  return tensor_to_image(x0);
}

LambdaSweep sweep_lambda(const EpsModel& model, const NoiseSchedule& schedule, const SampleRequest& base,
                         const std::vector<double>& lambdas) {
  if (lambdas.empty()) fail(ErrorCode::EmptyList, "lambda list is empty");
  LambdaSweep s;
  s.lambdas = lambdas;
  for (double l : lambdas) {
    SampleRequest r = base;
    r.guidance.lambda_I = l;
    s.outputs.push_back(relight(model, schedule, r).output);
    s.psnr_vs_input.push_back(psnr(s.outputs.back(), base.input_image));
  }
  return s;
}

namespace {

void write_csv(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string());
}

}  // namespace

void write_sweep(const LambdaSweep& s, const fs::path& dir) {
  ensure_dir(dir);
  std::string csv = "lambda_i,psnr_db\n";
  for (std::size_t i = 0; i < s.outputs.size(); ++i) {
    write_png(dir / ("lambda_" + std::to_string(i) + ".png"), quantize(s.outputs[i]));
    char line[64];
    std::snprintf(line, sizeof line, "%.6g,%.6f\n", s.lambdas[i], s.psnr_vs_input[i]);
    csv += line;
  }
  write_png(dir / "lambda_grid.png", quantize(montage(s.outputs, static_cast<int>(s.outputs.size()))));
  write_csv(dir / "lambda_sweep.csv", csv);
}

RotationSweep rotation_sweep(const EpsModel& model, const NoiseSchedule& schedule, const SampleRequest& base,
                             int n) {
  if (n < 1) fail(ErrorCode::InvalidConfig, "rotation count must be >= 1");
  RotationSweep s;
  for (int k = 0; k < n; ++k) {
    SampleRequest r = base;
    r.rotation = 2.0 * std::numbers::pi * k / n;
    s.rotations.push_back(r.rotation);
    s.frames.push_back(relight(model, schedule, r).output);
    if (k > 0) {
      const auto& a = s.frames[static_cast<std::size_t>(k - 1)].pixels;
      const auto& b = s.frames.back().pixels;
      double sum = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(static_cast<double>(a[i]) - b[i]);
      s.frame_differences.push_back(sum / static_cast<double>(a.size()));
    }
  }
  double total = 0.0;
  for (double d : s.frame_differences) total += d;
  s.mean_frame_difference = n > 1 ? total / (n - 1) : 0.0;
  return s;
}

void write_rotation_sweep(const RotationSweep& s, const fs::path& dir) {
  ensure_dir(dir);
  // abs_diff_prev is the mean absolute difference to the previous frame.
  std::string csv = "frame,rotation_rad,abs_diff_prev\n";
  for (std::size_t i = 0; i < s.frames.size(); ++i) {
    write_png(dir / ("frame_" + std::to_string(i) + ".png"), quantize(s.frames[i]));
    char line[96];
    std::snprintf(line, sizeof line, "%zu,%.9f,%.9f\n", i, s.rotations[i], i ? s.frame_differences[i - 1] : 0.0);
    csv += line;
  }
  const int cols = std::min<int>(static_cast<int>(s.frames.size()), 8);
  write_png(dir / "rotation_grid.png", quantize(montage(s.frames, cols)));
  write_csv(dir / "rotation_sweep.csv", csv);
}

}  // namespace relight
