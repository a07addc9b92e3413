#include <doctest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>

#include "relight/error.hpp"
#include "relight/metrics.hpp"
#include "relight/sampler.hpp"
#include "test_util.hpp"

using namespace relight;
namespace fs = std::filesystem;
constexpr double kPi = std::numbers::pi;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoFailure;
}

Tensor random_tensor(Rng& rng, int n, int c, int h, int w) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  Tensor t(n, c, h, w);
  for (float& v : t.data) v = g(rng);
  return t;
}

int branch_of(const DropFlags& f) { return f.image ? 0 : (f.label ? 1 : 2); }

// Returns a fixed tensor per guidance branch and records the flags it saw.
class BranchStub : public EpsModel {
 public:
  std::array<Tensor, 3> outputs;
  mutable std::vector<DropFlags> seen;
  Tensor predict(const PackedInput& packed, std::span<const int>, std::span<const Label>) const override {
    Tensor out(packed.channels.n, 3, packed.channels.h, packed.channels.w);
    for (int i = 0; i < out.n; ++i) {
      seen.push_back(packed.drop_flags[static_cast<std::size_t>(i)]);
      const Tensor& src = outputs[static_cast<std::size_t>(branch_of(packed.drop_flags[static_cast<std::size_t>(i)]))];
      std::copy(src.data.begin(), src.data.end(), out.sample(i));
    }
    return out;
  }
};

BranchStub constant_stub(float e0, float e1, float e2, int h = 2) {
  BranchStub s;
  s.outputs = {Tensor(1, 3, h, h, e0), Tensor(1, 3, h, h, e1), Tensor(1, 3, h, h, e2)};
  return s;
}

UNetConfig tiny_model() {
  UNetConfig c;
  c.resolution = 16;
  c.base_channels = 8;
  c.channel_mults = {1, 2};
  c.embed_dim = 16;
  return c;
}

SampleRequest tiny_request(std::uint64_t seed = 3) {
  Rng rng(seed);
  SampleRequest r;
  r.input_image = testutil::random_image(rng, 16, 16);
  r.input_mask = testutil::full_mask(16, 16);
  r.input_mask.at(0, 0) = 0;
  r.env = procedural_env(random_env_spec(seed), 32, 16);
  r.steps = 4;
  r.seed = seed;
  r.label = {1, 2};
  return r;
}

// Perturbed tiny UNet so that every pathway, condition channels included, is live.
struct TinyNet {
  ModelParams params;
  UNetModel model;
  NoiseSchedule schedule = make_schedule(100, 1e-4, 0.02);
  TinyNet() : params(init_model(tiny_model(), 1)), model(params) {
    Rng rng(2);
    std::normal_distribution<float> g(0.0f, 0.05f);
    for (ParamTensor& t : params.tensors)
      for (float& v : t.values) v += g(rng);
  }
};

}  // namespace

TEST_CASE("cfg_epsilon: worked example and reductions") {
  const Tensor z(1, 3, 2, 2);
  BranchStub s = constant_stub(0.0f, 1.0f, 2.0f);
  GuidanceParams g;
  g.lambda_T = 2.0;
  g.lambda_I = 3.0;
  const Tensor out = cfg_epsilon(s, z, z, z, {0, 0}, 5, g);
  for (float v : out.data) CHECK(v == 5.0f);
  // Exactly three evaluations with the branch flags; env is never dropped.
  REQUIRE(s.seen.size() == 3);
  CHECK(s.seen[0] == DropFlags{true, false, true});
  CHECK(s.seen[1] == DropFlags{false, false, true});
  CHECK(s.seen[2] == DropFlags{false, false, false});
  g.uncond_keeps_text = true;
  s.seen.clear();
  cfg_epsilon(s, z, z, z, {0, 0}, 5, g);
  CHECK(s.seen[0] == DropFlags{true, false, false});
}

TEST_CASE("cfg_epsilon: unit and zero guidance are exact for random branch outputs") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    BranchStub s;
    for (Tensor& t : s.outputs) t = random_tensor(rng, 1, 3, 3, 3);
    const Tensor x = random_tensor(rng, 1, 3, 3, 3);
    GuidanceParams one{1.0, 1.0, false};
    CHECK(cfg_epsilon(s, x, x, x, {0, 0}, 7, one) == s.outputs[2]);
    GuidanceParams zero{0.0, 0.0, false};
    CHECK(cfg_epsilon(s, x, x, x, {0, 0}, 7, zero) == s.outputs[0]);
  }
}

TEST_CASE("cfg_epsilon: linear in each guidance weight") {
  Rng rng(5);
  BranchStub s;
  for (Tensor& t : s.outputs) t = random_tensor(rng, 1, 3, 3, 3);
  const Tensor x(1, 3, 3, 3);
  auto at = [&](double lt, double li) { return cfg_epsilon(s, x, x, x, {0, 0}, 1, {lt, li, false}); };
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_real_distribution<double> u(0.0, 6.0);
    const double a = u(rng), b = u(rng), fixed = u(rng);
    const Tensor pa = at(a, fixed), pb = at(b, fixed), pm = at(0.5 * (a + b), fixed);
    const Tensor qa = at(fixed, a), qb = at(fixed, b), qm = at(fixed, 0.5 * (a + b));
    for (std::size_t k = 0; k < pa.size(); ++k) {
      CHECK(pm.data[k] == doctest::Approx(0.5 * (pa.data[k] + pb.data[k])).epsilon(1e-5).scale(1.0));
      CHECK(qm.data[k] == doctest::Approx(0.5 * (qa.data[k] + qb.data[k])).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("guidance validation") {
  CHECK(code_of([] { validate(GuidanceParams{-1.0, 3.0, false}); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { validate(GuidanceParams{2.0, std::nan(""), false}); }) == ErrorCode::InvalidConfig);
  validate(GuidanceParams{});
}

TEST_CASE("ddim_step: scalar arithmetic, terminal step, ordering") {
  NoiseSchedule s;
  s.T = 2;
  s.alpha_bars = {0.81, 0.25};
  s.betas = {0.19, 1.0 - 0.25 / 0.81};
  s.alphas = {0.81, 0.25 / 0.81};
  const Tensor x(1, 1, 1, 1, 1.0f);
  const Tensor eps(1, 1, 1, 1, 0.0f);
  CHECK(ddim_step(x, eps, 2, 1, s).data[0] == doctest::Approx(1.8).epsilon(1e-6));
  CHECK(ddim_step(x, eps, 2, 0, s).data[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(code_of([&] { ddim_step(x, eps, 1, 1, s); }) == ErrorCode::StepOrderViolation);
  CHECK(code_of([&] { ddim_step(x, eps, 1, 2, s); }) == ErrorCode::StepOrderViolation);
  CHECK(code_of([&] { ddim_step(x, eps, 3, 1, s); }) == ErrorCode::StepOrderViolation);
  CHECK(code_of([&] { ddim_step(x, eps, 2, -1, s); }) == ErrorCode::StepOrderViolation);
}

TEST_CASE("ddim_step: clamped clean estimate") {
  NoiseSchedule s;
  s.T = 2;
  s.alpha_bars = {0.81, 0.25};
  s.betas = {0.19, 1.0 - 0.25 / 0.81};
  s.alphas = {0.81, 0.25 / 0.81};
  // x0_hat = 1 / 0.5 clamps to 1; implied eps = (1 - 0.5) / sqrt(0.75)
  const Tensor x(1, 1, 1, 1, 1.0f);
  const Tensor eps(1, 1, 1, 1, 0.0f);
  const double e = 0.5 / std::sqrt(0.75);
  CHECK(ddim_step(x, eps, 2, 1, s, true).data[0] == doctest::Approx(0.9 + std::sqrt(0.19) * e).epsilon(1e-6));
  CHECK(ddim_step(x, eps, 2, 0, s, true).data[0] == 1.0f);
  const Tensor neg(1, 1, 1, 1, -1.0f);
  CHECK(ddim_step(neg, eps, 2, 0, s, true).data[0] == -1.0f);
  // In-range estimates are untouched.
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const Tensor xi = random_tensor(rng, 1, 3, 2, 2);
    Tensor x0 = random_tensor(rng, 1, 3, 2, 2);
    for (float& v : x0.data) v = std::tanh(v);
    const Tensor ei = oracle_epsilon(xi, x0, 2, s);
    const Tensor a = ddim_step(xi, ei, 2, 1, s);
    const Tensor b = ddim_step(xi, ei, 2, 1, s, true);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a.data[k] == doctest::Approx(b.data[k]).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("ddim_timesteps: uniform strides") {
  const std::vector<int> t50 = ddim_timesteps(1000, 50);
  REQUIRE(t50.size() == 50);
  CHECK(t50.front() == 1000);
  CHECK(t50.back() == 20);
  for (std::size_t i = 1; i < t50.size(); ++i) CHECK(t50[i - 1] - t50[i] == 20);
  CHECK(ddim_timesteps(1000, 1) == std::vector<int>{1000});
  CHECK(ddim_timesteps(4, 4) == std::vector<int>{4, 3, 2, 1});
  CHECK(code_of([] { ddim_timesteps(100, 0); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { ddim_timesteps(100, 101); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("ddim_sample: the closed-form oracle epsilon recovers x0 for any stride") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  Rng rng(6);
  for (int steps : {2, 4, 10, 20, 50, 100, 250, 1000}) {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x0 = random_tensor(rng, 1, 3, 4, 4);
      for (float& v : x0.data) v = std::tanh(v);
      const Tensor xT = random_tensor(rng, 1, 3, 4, 4);
      const Tensor out =
          ddim_sample(xT, s, steps, [&](const Tensor& x, int t) { return oracle_epsilon(x, x0, t, s); });
      double err = 0.0;
      for (std::size_t k = 0; k < x0.size(); ++k) err = std::max(err, static_cast<double>(std::abs(out.data[k] - x0.data[k])));
      INFO("steps ", steps);
      CHECK(err <= 1e-5);
    }
  }
  // A single jump from T: eps is stored as float32, so its rounding
  // (|eps| * 2^-24) is amplified by sqrt((1 - ab_T) / ab_T) ~ 158 in x0_hat.
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x0 = random_tensor(rng, 1, 3, 4, 4);
    for (float& v : x0.data) v = std::tanh(v);
    const Tensor xT = random_tensor(rng, 1, 3, 4, 4);
    const Tensor eps = oracle_epsilon(xT, x0, 1000, s);
    double emax = 0.0;
    for (float v : eps.data) emax = std::max(emax, static_cast<double>(std::abs(v)));
    const double amp = std::sqrt((1.0 - s.alpha_bar(1000)) / s.alpha_bar(1000));
    const Tensor out = ddim_sample(xT, s, 1, [&](const Tensor& x, int t) { return oracle_epsilon(x, x0, t, s); });
    for (std::size_t k = 0; k < x0.size(); ++k)
      CHECK(std::abs(out.data[k] - x0.data[k]) <= amp * emax * std::ldexp(1.0, -24) + 1e-6);
  }
  // One oracle step lands on x0_hat == x0 exactly up to float rounding.
  const Tensor x0 = random_tensor(rng, 1, 3, 2, 2);
  const Tensor x = random_tensor(rng, 1, 3, 2, 2);
  const Tensor hat = ddim_step(x, oracle_epsilon(x, x0, 500, s), 500, 0, s);
  for (std::size_t k = 0; k < x0.size(); ++k) CHECK(hat.data[k] == doctest::Approx(x0.data[k]).epsilon(1e-5).scale(1.0));
}

TEST_CASE("relight: deterministic, rotation periodic, in range") {
  TinyNet net;
  const SampleRequest r = tiny_request();
  const RelightResult a = relight::relight(net.model, net.schedule, r);
  const RelightResult b = relight::relight(net.model, net.schedule, r);
  CHECK(a.output == b.output);
  SampleRequest full = r;
  full.rotation = 2.0 * kPi;
  CHECK(relight::relight(net.model, net.schedule, full).output == a.output);
  SampleRequest other = r;
  other.seed = r.seed + 1;
  CHECK_FALSE(relight::relight(net.model, net.schedule, other).output == a.output);

  SampleRequest one = r;
  one.steps = 1;
  const RelightResult c = relight::relight(net.model, net.schedule, one);
  for (float v : c.output.pixels) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  // Composite: black where the mask is off, the output elsewhere.
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(a.composited.at(0, 0, ch) == 0.0f);
    CHECK(a.composited.at(5, 5, ch) == a.output.at(5, 5, ch));
  }
  SampleRequest bad = r;
  bad.steps = 101;
  CHECK(code_of([&] { relight::relight(net.model, net.schedule, bad); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("relight: ldr condition is the rotated, tonemapped request env") {
  const SampleRequest r = tiny_request();
  SampleRequest rot = r;
  rot.rotation = kPi / 2;
  CHECK(request_ldr_env(rot, 16) == tonemap_ldr(rotate(r.env, kPi / 2), r.clip_max, 16, 16));
}

TEST_CASE("stub relighters") {
  Rng rng(8);
  const SampleRequest r = tiny_request();
  const ImageRgb target = testutil::random_image(rng, 16, 16);
  CHECK(CopyInputRelighter{}.run(r, target) == r.input_image);
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  SampleRequest r50 = r;
  r50.steps = 50;
  const ImageRgb out = OracleEpsRelighter(s).run(r50, target);
  CHECK(psnr(out, target) > 60.0);
}

TEST_CASE("sweep_lambda: matches single relights and writes its table") {
  TinyNet net;
  const SampleRequest r = tiny_request();
  const LambdaSweep one = sweep_lambda(net.model, net.schedule, r, {3.0});
  SampleRequest r3 = r;
  r3.guidance.lambda_I = 3.0;
  REQUIRE(one.outputs.size() == 1);
  CHECK(one.outputs[0] == relight::relight(net.model, net.schedule, r3).output);

  const LambdaSweep four = sweep_lambda(net.model, net.schedule, r, {1, 2, 3, 5});
  CHECK(four.outputs.size() == 4);
  CHECK(four.psnr_vs_input.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(four.psnr_vs_input[i] == doctest::Approx(psnr(four.outputs[i], r.input_image)));
  testutil::TempDir dir("sweep");
  write_sweep(four, dir.path);
  CHECK(fs::exists(dir.path / "lambda_grid.png"));
  CHECK(fs::exists(dir.path / "lambda_0.png"));
  std::ifstream csv(dir.path / "lambda_sweep.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "lambda_i,psnr_db");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 4);
  CHECK(code_of([&] { sweep_lambda(net.model, net.schedule, r, {}); }) == ErrorCode::EmptyList);
}

TEST_CASE("rotation_sweep: single frame, invariant env, full count") {
  TinyNet net;
  SampleRequest r = tiny_request();
  const RotationSweep one = rotation_sweep(net.model, net.schedule, r, 1);
  REQUIRE(one.frames.size() == 1);
  CHECK(one.frames[0] == relight::relight(net.model, net.schedule, r).output);
  CHECK(one.mean_frame_difference == 0.0);

  r.env = EnvMap::constant(32, 16, {1.5f, 1.0f, 0.5f});
  const RotationSweep four = rotation_sweep(net.model, net.schedule, r, 4);
  REQUIRE(four.frames.size() == 4);
  for (const ImageRgb& f : four.frames) CHECK(f == four.frames[0]);
  CHECK(four.mean_frame_difference == 0.0);
  CHECK(four.rotations[1] == doctest::Approx(kPi / 2));

  r = tiny_request();
  r.steps = 1;
  const RotationSweep many = rotation_sweep(net.model, net.schedule, r, 36);
  CHECK(many.frames.size() == 36);
  CHECK(many.frame_differences.size() == 35);
  testutil::TempDir dir("rotsweep");
  write_rotation_sweep(many, dir.path);
  CHECK(fs::exists(dir.path / "frame_35.png"));
  CHECK(fs::exists(dir.path / "rotation_grid.png"));
  std::ifstream csv(dir.path / "rotation_sweep.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "frame,rotation_rad,abs_diff_prev");
}
