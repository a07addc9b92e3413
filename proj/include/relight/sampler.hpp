#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "relight/diffusion.hpp"
#include "relight/envmap.hpp"

namespace relight {

struct GuidanceParams {
  double lambda_T = 2.0;
  double lambda_I = 3.0;
  /// When set, the unconditional branch keeps the label (eps(x, phi, E, T)).
  bool uncond_keeps_text = false;
  bool operator==(const GuidanceParams&) const = default;
};

void validate(const GuidanceParams& guidance);

/// Three model evaluations batched into one call:
///   eps(x,phi,E,phi) + lT (eps(x,I,E,T) - eps(x,I,E,phi)) + lI (eps(x,I,E,phi) - eps(x,phi,E,phi))
/// evaluated as e0 (1 - lI) + e1 (lI - lT) + e2 lT, which is the same sum and
/// collapses exactly to e2 at lT = lI = 1 and to e0 at lT = lI = 0.
/// x, input_image and ldr_env are (1,3,h,w).
Tensor cfg_epsilon(const EpsModel& model, const Tensor& x, const Tensor& input_image, const Tensor& ldr_env,
                   const Label& label, int t, const GuidanceParams& guidance);

/// Deterministic (eta = 0) DDIM update from t_next to t_prev (t_prev = 0
/// returns the clean estimate). With clip_x0 the clean estimate is clamped
/// to [-1, 1] and the step reuses the epsilon implied by the clamped value.
Tensor ddim_step(const Tensor& x_next, const Tensor& eps, int t_next, int t_prev, const NoiseSchedule& schedule,
                 bool clip_x0 = false);

/// Descending timesteps for `steps` uniform strides: T, ..., T/steps.
std::vector<int> ddim_timesteps(int T, int steps);

/// Runs the full DDIM chain from x_T with a per-step epsilon callback.
Tensor ddim_sample(const Tensor& x_T, const NoiseSchedule& schedule, int steps,
                   const std::function<Tensor(const Tensor& x, int t)>& eps_fn, bool clip_x0 = false);

/// Epsilon that makes q_sample(x0_true) consistent with x at step t.
Tensor oracle_epsilon(const Tensor& x, const Tensor& x0_true, int t, const NoiseSchedule& schedule);

struct SampleRequest {
  ImageRgb input_image;
  Mask input_mask;  ///< empty means no masking
  EnvMap env = EnvMap::constant(4, 2, {0.0f, 0.0f, 0.0f});
  double rotation = 0.0;
  double clip_max = 8.0;
  Label label{0, 0};
  int steps = 50;
  GuidanceParams guidance{};
  std::uint64_t seed = 0;
  bool clip_x0 = true;  ///< clamp the clean estimate to the data range each step
};

struct RelightResult {
  ImageRgb output;      ///< [0,1]
  ImageRgb composited;  ///< output inside the input mask, black elsewhere
};

/// Tonemapped, rotated environment at the given resolution.
LdrEnvImage request_ldr_env(const SampleRequest& request, int resolution);

RelightResult relight(const EpsModel& model, const NoiseSchedule& schedule, const SampleRequest& request);

/// Something that maps a request to an output image. `target` is only read
/// by the oracle stub; real models ignore it.
class Relighter {
 public:
  virtual ~Relighter() = default;
  virtual ImageRgb run(const SampleRequest& request, const ImageRgb& target) const = 0;
};

class DiffusionRelighter final : public Relighter {
 public:
  DiffusionRelighter(const EpsModel& model, const NoiseSchedule& schedule) : model_(model), schedule_(schedule) {}
  ImageRgb run(const SampleRequest& request, const ImageRgb& target) const override;

 private:
  const EpsModel& model_;
  const NoiseSchedule& schedule_;
};

/// Returns the input portrait unchanged.
class CopyInputRelighter final : public Relighter {
 public:
  ImageRgb run(const SampleRequest& request, const ImageRgb& target) const override;
};

/// DDIM driven by the closed-form epsilon of the known target.
class OracleEpsRelighter final : public Relighter {
 public:
  explicit OracleEpsRelighter(const NoiseSchedule& schedule) : schedule_(schedule) {}
  ImageRgb run(const SampleRequest& request, const ImageRgb& target) const override;

 private:
  const NoiseSchedule& schedule_;
};

struct LambdaSweep {
  std::vector<double> lambdas;
  std::vector<ImageRgb> outputs;
  std::vector<double> psnr_vs_input;
};

/// One relight per lambda_I with the same seed; PSNR against the input.
LambdaSweep sweep_lambda(const EpsModel& model, const NoiseSchedule& schedule, const SampleRequest& base,
                         const std::vector<double>& lambdas);
/// lambda_<i>.png per output, lambda_grid.png and lambda_sweep.csv.
void write_sweep(const LambdaSweep& sweep, const std::filesystem::path& dir);

struct RotationSweep {
  std::vector<double> rotations;
  std::vector<ImageRgb> frames;
  /// Mean absolute difference of frame k+1 against frame k.
  std::vector<double> frame_differences;
  /// Mean absolute difference between consecutive frames (0 for n = 1).
  double mean_frame_difference = 0.0;
};

/// Rotations 2 pi k / n, k = 0..n-1, all with the base request's seed.
RotationSweep rotation_sweep(const EpsModel& model, const NoiseSchedule& schedule, const SampleRequest& base,
                             int n_rotations);
/// frame_<k>.png, rotation_grid.png and rotation_sweep.csv.
void write_rotation_sweep(const RotationSweep& sweep, const std::filesystem::path& dir);

}  // namespace relight
