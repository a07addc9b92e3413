#pragma once

#include <span>
#include <vector>

#include "relight/dataset.hpp"
#include "relight/network.hpp"
#include "relight/random.hpp"
#include "relight/tensor.hpp"

namespace relight {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  /// alpha_bar at 1-based step t; t = 0 is the clean image (1.0).
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars[static_cast<std::size_t>(t - 1)]; }
};

/// Linear betas from beta_start to beta_end inclusive.
NoiseSchedule make_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

/// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, with one step for every sample.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);
/// Per-sample steps; `t.size()` must equal x0.n.
Tensor q_sample(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& schedule);

struct DropFlags {
  bool image = false;
  bool env = false;
  bool label = false;
  bool operator==(const DropFlags&) const = default;
};

struct DropoutProbs {
  double image = 0.1;
  double env = 0.1;
  double label = 0.1;
  static DropoutProbs uniform(double p) { return {p, p, p}; }
};

/// Three independent Bernoulli draws, in the order image, env, label.
DropFlags draw_drop_flags(Rng& rng, const DropoutProbs& probs);

struct PackedInput {
  Tensor channels;  ///< (n, 9, h, w): [x_t, input image, env]
  std::vector<DropFlags> drop_flags;
};

/// x_t, input and env are (n,3,h,w) with one DropFlags per sample.
PackedInput pack_conditions(const Tensor& x_t, const Tensor& input_image, const Tensor& ldr_env,
                            std::span<const DropFlags> drop_flags);

/// Anything that predicts epsilon from a packed input. Labels of samples
/// whose label_dropped flag is set are ignored by the model.
class EpsModel {
 public:
  virtual ~EpsModel() = default;
  virtual Tensor predict(const PackedInput& packed, std::span<const int> timesteps,
                         std::span<const Label> labels) const = 0;
};

class UNetModel final : public EpsModel {
 public:
  explicit UNetModel(const ModelParams& params) : params_(params) {}
  Tensor predict(const PackedInput& packed, std::span<const int> timesteps,
                 std::span<const Label> labels) const override;
  const ModelParams& params() const { return params_; }

 private:
  const ModelParams& params_;
};

StepConditioning make_conditioning(const PackedInput& packed, std::span<const int> timesteps,
                                   std::span<const Label> labels);

/// Everything one optimization step needs, drawn from a list of tuples.
struct TrainingBatch {
  PackedInput packed;
  std::vector<int> timesteps;
  std::vector<Label> labels;
  std::vector<Task> tasks;
  Tensor eps;
};

/// Per tuple: t ~ U{1..T}, drop flags, then eps ~ N(0,1). The input
/// portrait is masked by its foreground mask before packing.
TrainingBatch make_training_batch(std::span<const RelightTuple> tuples, const NoiseSchedule& schedule, Rng& rng,
                                  const DropoutProbs& probs);

/// Mean over all elements of (a - b)^2.
double mean_squared_error(const Tensor& a, const Tensor& b);

/// Epsilon-prediction loss for one tuple at a given step and noise.
double training_loss(const EpsModel& model, const RelightTuple& tuple, int t, const Tensor& eps,
                     const NoiseSchedule& schedule, Rng& dropout_rng, const DropoutProbs& probs = {});

/// The input portrait as the network sees it: masked, in [-1,1].
Tensor condition_image(const RelightTuple& tuple);

}  // namespace relight
