#include "relight/diffusion.hpp"

#include <cmath>
#include <string>

#include "relight/error.hpp"

namespace relight {

namespace {

std::string shape_str(const Tensor& t) {
  return "(" + std::to_string(t.n) + "," + std::to_string(t.c) + "," + std::to_string(t.h) + "," +
         std::to_string(t.w) + ")";
}

void check_step(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.T) fail(ErrorCode::StepOutOfRange, "step " + std::to_string(t) + " outside [1," + std::to_string(s.T) + "]");
}

// Text-to-image tuples carry black images; the network sees them as the
// same zero planes a dropped condition produces.
DropFlags effective_flags(const RelightTuple& tuple, DropFlags flags) {
  if (tuple.task == Task::TextToImage) flags.image = flags.env = true;
  return flags;
}

}  // namespace

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1 || !(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    fail(ErrorCode::InvalidScheduleParams, "need T >= 1 and 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  double ab = 1.0;
  for (int i = 0; i < T; ++i) {
    const double beta = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (T - 1);
    s.betas.push_back(beta);
    s.alphas.push_back(1.0 - beta);
    ab *= 1.0 - beta;
    s.alpha_bars.push_back(ab);
  }
  return s;
}

Tensor q_sample(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& schedule) {
  if (!x0.same_shape(eps)) fail(ErrorCode::ShapeMismatch, "x0 " + shape_str(x0) + " vs eps " + shape_str(eps));
  if (static_cast<int>(t.size()) != x0.n) fail(ErrorCode::ShapeMismatch, "one step per sample required");
  Tensor out = x0;
  const std::size_t per = x0.sample_size();
  for (int i = 0; i < x0.n; ++i) {
    check_step(t[static_cast<std::size_t>(i)], schedule);
    const double ab = schedule.alpha_bar(t[static_cast<std::size_t>(i)]);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    const float* x = x0.sample(i);
    const float* e = eps.sample(i);
    float* o = out.sample(i);
    for (std::size_t k = 0; k < per; ++k) o[k] = static_cast<float>(a * x[k] + b * e[k]);
  }
  return out;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  std::vector<int> steps(static_cast<std::size_t>(x0.n), t);
  return q_sample(x0, steps, eps, schedule);
}

DropFlags draw_drop_flags(Rng& rng, const DropoutProbs& probs) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  DropFlags f;
  f.image = uni(rng) < probs.image;
  f.env = uni(rng) < probs.env;
  f.label = uni(rng) < probs.label;
  return f;
}

PackedInput pack_conditions(const Tensor& x_t, const Tensor& input_image, const Tensor& ldr_env,
                            std::span<const DropFlags> drop_flags) {
  if (x_t.c != 3 || !x_t.same_shape(input_image) || !x_t.same_shape(ldr_env)) {
    fail(ErrorCode::ShapeMismatch, "x_t " + shape_str(x_t) + ", image " + shape_str(input_image) + ", env " +
                                       shape_str(ldr_env) + " must all be (n,3,h,w) alike");
  }
  if (static_cast<int>(drop_flags.size()) != x_t.n) fail(ErrorCode::ShapeMismatch, "one drop flag set per sample required");
  PackedInput p;
  p.channels = Tensor(x_t.n, kPackedChannels, x_t.h, x_t.w);
  p.drop_flags.assign(drop_flags.begin(), drop_flags.end());
  const std::size_t block = 3 * x_t.plane();
  for (int i = 0; i < x_t.n; ++i) {
    float* dst = p.channels.sample(i);
    std::copy_n(x_t.sample(i), block, dst);
    if (!drop_flags[static_cast<std::size_t>(i)].image) std::copy_n(input_image.sample(i), block, dst + block);
    if (!drop_flags[static_cast<std::size_t>(i)].env) std::copy_n(ldr_env.sample(i), block, dst + 2 * block);
  }
  return p;
}

StepConditioning make_conditioning(const PackedInput& packed, std::span<const int> timesteps,
                                   std::span<const Label> labels) {
  StepConditioning c;
  c.timesteps.assign(timesteps.begin(), timesteps.end());
  c.labels.assign(labels.begin(), labels.end());
  for (const DropFlags& f : packed.drop_flags) c.label_dropped.push_back(f.label ? 1 : 0);
  return c;
}

Tensor UNetModel::predict(const PackedInput& packed, std::span<const int> timesteps,
                          std::span<const Label> labels) const {
  return forward(params_, packed.channels, make_conditioning(packed, timesteps, labels));
}

Tensor condition_image(const RelightTuple& tuple) {
  if (tuple.task == Task::Relight && !tuple.input_mask.values.empty()) {
    return image_to_tensor(apply_mask(tuple.input_image, tuple.input_mask));
  }
  return image_to_tensor(tuple.input_image);
}

TrainingBatch make_training_batch(std::span<const RelightTuple> tuples, const NoiseSchedule& schedule, Rng& rng,
                                  const DropoutProbs& probs) {
  if (tuples.empty()) fail(ErrorCode::InvalidConfig, "empty batch");
  const int n = static_cast<int>(tuples.size());
  const int res = tuples[0].target_image.width;
  Tensor x0(n, 3, res, res);
  Tensor input(n, 3, res, res);
  Tensor env(n, 3, res, res);
  TrainingBatch b;
  b.eps = Tensor(n, 3, res, res);
  std::uniform_int_distribution<int> pick_t(1, schedule.T);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<DropFlags> flags;
  const std::size_t per = b.eps.sample_size();
  for (int i = 0; i < n; ++i) {
    const RelightTuple& tup = tuples[static_cast<std::size_t>(i)];
    write_image(x0, i, tup.target_image);
    const Tensor cond = condition_image(tup);
    std::copy(cond.data.begin(), cond.data.end(), input.sample(i));
    write_image(env, i, tup.ldr_env);
    b.timesteps.push_back(pick_t(rng));
    flags.push_back(effective_flags(tup, draw_drop_flags(rng, probs)));
    float* e = b.eps.sample(i);
    for (std::size_t k = 0; k < per; ++k) e[k] = normal(rng);
    b.labels.push_back(tup.label);
    b.tasks.push_back(tup.task);
  }
  b.packed = pack_conditions(q_sample(x0, b.timesteps, b.eps, schedule), input, env, flags);
  return b;
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) fail(ErrorCode::ShapeMismatch, shape_str(a) + " vs " + shape_str(b));
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    sum += d * d;
  }
  return a.size() ? sum / static_cast<double>(a.size()) : 0.0;
}

double training_loss(const EpsModel& model, const RelightTuple& tuple, int t, const Tensor& eps,
                     const NoiseSchedule& schedule, Rng& dropout_rng, const DropoutProbs& probs) {
  const Tensor x0 = image_to_tensor(tuple.target_image);
  const Tensor x_t = q_sample(x0, t, eps, schedule);
  const DropFlags flags = effective_flags(tuple, draw_drop_flags(dropout_rng, probs));
  const PackedInput packed =
      pack_conditions(x_t, condition_image(tuple), image_to_tensor(tuple.ldr_env), std::span(&flags, 1));
  const int steps[1] = {t};
  const Label labels[1] = {tuple.label};
  return mean_squared_error(model.predict(packed, steps, labels), eps);
}

}  // namespace relight
