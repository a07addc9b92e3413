#include <doctest.h>

#include <cmath>
#include <functional>

#include "relight/diffusion.hpp"
#include "relight/error.hpp"
#include "test_util.hpp"

using namespace relight;

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

// Returns a fixed tensor plus a constant and remembers what it was fed.
class StubModel : public EpsModel {
 public:
  Tensor output;
  float offset = 0.0f;
  mutable std::vector<PackedInput> seen;
  Tensor predict(const PackedInput& packed, std::span<const int>, std::span<const Label>) const override {
    seen.push_back(packed);
    Tensor out = output;
    for (float& v : out.data) v += offset;
    return out;
  }
};

RelightTuple random_tuple(Rng& rng, int res) {
  RelightTuple t;
  t.input_image = testutil::random_image(rng, res, res);
  t.input_mask = testutil::full_mask(res, res);
  t.target_image = testutil::random_image(rng, res, res);
  t.ldr_env = testutil::random_image(rng, res, res);
  t.label = {2, 1};
  return t;
}

}  // namespace

TEST_CASE("schedule: small cases and validation") {
  const NoiseSchedule one = make_schedule(1, 1e-4, 0.02);
  CHECK(one.alpha_bar(1) == doctest::Approx(1.0 - 1e-4).epsilon(1e-14));
  CHECK(one.alpha_bar(0) == 1.0);
  const NoiseSchedule three = make_schedule(3, 0.1, 0.3);
  CHECK(three.betas[0] == doctest::Approx(0.1));
  CHECK(three.betas[1] == doctest::Approx(0.2));
  CHECK(three.betas[2] == doctest::Approx(0.3));
  CHECK(three.alpha_bar(3) == doctest::Approx(0.9 * 0.8 * 0.7));
  CHECK(code_of([] { make_schedule(0); }) == ErrorCode::InvalidScheduleParams);
  CHECK(code_of([] { make_schedule(10, 0.0, 0.02); }) == ErrorCode::InvalidScheduleParams);
  CHECK(code_of([] { make_schedule(10, 0.03, 0.02); }) == ErrorCode::InvalidScheduleParams);
  CHECK(code_of([] { make_schedule(10, 1e-4, 1.0); }) == ErrorCode::InvalidScheduleParams);
}

TEST_CASE("schedule: default terminal alpha_bar against a long double product") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  long double prod = 1.0L;
  for (int i = 0; i < 1000; ++i) prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * i / 999.0L);
  CHECK(s.alpha_bar(1000) == doctest::Approx(static_cast<double>(prod)).epsilon(1e-9));
  CHECK(std::abs(s.alpha_bar(1000) - 4.0e-5) <= 0.1 * 4.0e-5);
  for (int t = 1; t < 1000; ++t) {
    CHECK(s.betas[static_cast<std::size_t>(t)] >= s.betas[static_cast<std::size_t>(t - 1)]);
    CHECK(s.alpha_bar(t + 1) < s.alpha_bar(t));
  }
  CHECK(s.alpha_bar(1000) > 0.0);
}

TEST_CASE("q_sample: closed form branches") {
  Rng rng(1);
  const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
  const Tensor x0 = random_tensor(rng, 2, 3, 4, 4);
  const Tensor eps = random_tensor(rng, 2, 3, 4, 4);
  const Tensor zero(2, 3, 4, 4);
  const int t = 37;
  const Tensor a = q_sample(x0, t, zero, s);
  const Tensor b = q_sample(zero, t, eps, s);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(a.data[i] == doctest::Approx(std::sqrt(s.alpha_bar(t)) * x0.data[i]).epsilon(1e-6));
    CHECK(b.data[i] == doctest::Approx(std::sqrt(1.0 - s.alpha_bar(t)) * eps.data[i]).epsilon(1e-6));
  }
  // Scalar case with alpha_bar 0.25: hand-built one-step schedule.
  NoiseSchedule quarter;
  quarter.T = 1;
  quarter.betas = {0.75};
  quarter.alphas = {0.25};
  quarter.alpha_bars = {0.25};
  const Tensor x(1, 1, 1, 1, 1.0f);
  const Tensor e(1, 1, 1, 1, 2.0f);
  CHECK(q_sample(x, 1, e, quarter).data[0] == doctest::Approx(2.23205).epsilon(1e-5));

  CHECK(code_of([&] { q_sample(x0, 0, eps, s); }) == ErrorCode::StepOutOfRange);
  CHECK(code_of([&] { q_sample(x0, 101, eps, s); }) == ErrorCode::StepOutOfRange);
  CHECK(code_of([&] { q_sample(x0, 3, Tensor(1, 3, 4, 4), s); }) == ErrorCode::ShapeMismatch);

  const std::vector<int> steps{5, 90};
  const Tensor per = q_sample(x0, steps, eps, s);
  const Tensor s5 = q_sample(x0, 5, eps, s);
  const Tensor s90 = q_sample(x0, 90, eps, s);
  for (std::size_t i = 0; i < x0.sample_size(); ++i) {
    CHECK(per.sample(0)[i] == s5.sample(0)[i]);
    CHECK(per.sample(1)[i] == s90.sample(1)[i]);
  }
}

TEST_CASE("q_sample: moments over many draws") {
  Rng rng(2);
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const int n = 20000;
  for (int t : {1, 250, 999}) {
    const Tensor x0(1, 1, 1, n, 0.7f);
    const Tensor eps = random_tensor(rng, 1, 1, 1, n);
    const Tensor xt = q_sample(x0, t, eps, s);
    double mean = 0.0;
    for (float v : xt.data) mean += v;
    mean /= n;
    double var = 0.0;
    for (float v : xt.data) var += (v - mean) * (v - mean);
    var /= n - 1;
    const double ab = s.alpha_bar(t);
    const double sd = std::sqrt(1.0 - ab);
    CHECK(std::abs(mean - std::sqrt(ab) * 0.7) <= 3.0 * sd / std::sqrt(n));
    // Standard error of a sample variance: sigma^2 * sqrt(2 / (n - 1)).
    CHECK(std::abs(var - (1.0 - ab)) <= 3.0 * (1.0 - ab) * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("pack_conditions: order, zeroed drops, shape errors") {
  Rng rng(3);
  const Tensor xt = random_tensor(rng, 2, 3, 4, 4);
  const Tensor img = random_tensor(rng, 2, 3, 4, 4);
  const Tensor env = random_tensor(rng, 2, 3, 4, 4);
  const std::vector<DropFlags> flags{{false, false, false}, {true, false, false}};
  const PackedInput p = pack_conditions(xt, img, env, flags);
  REQUIRE(p.channels.c == 9);
  CHECK(p.drop_flags == flags);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        CHECK(p.channels.at(0, c, y, x) == xt.at(0, c, y, x));
        CHECK(p.channels.at(0, 3 + c, y, x) == img.at(0, c, y, x));
        CHECK(p.channels.at(0, 6 + c, y, x) == env.at(0, c, y, x));
        CHECK(p.channels.at(1, 3 + c, y, x) == 0.0f);
        CHECK(p.channels.at(1, 6 + c, y, x) == env.at(1, c, y, x));
      }
  const std::vector<DropFlags> all(2, DropFlags{true, true, true});
  const PackedInput q = pack_conditions(xt, img, env, all);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 9; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
          if (c < 3) CHECK(q.channels.at(n, c, y, x) == xt.at(n, c, y, x));
          else CHECK(q.channels.at(n, c, y, x) == 0.0f);
        }
  CHECK(code_of([&] { pack_conditions(xt, random_tensor(rng, 2, 3, 8, 8), env, flags); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { pack_conditions(xt, img, env, std::span(flags.data(), 1)); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("drop flags: rates and independence") {
  Rng rng(4);
  const int n = 10000;
  int di = 0, de = 0, dl = 0, ie = 0, il = 0, el = 0;
  for (int k = 0; k < n; ++k) {
    const DropFlags f = draw_drop_flags(rng, DropoutProbs::uniform(0.1));
    di += f.image;
    de += f.env;
    dl += f.label;
    ie += f.image && f.env;
    il += f.image && f.label;
    el += f.env && f.label;
  }
  for (int c : {di, de, dl}) CHECK(std::abs(c / double(n) - 0.1) <= 0.01);
  // Joint rates near 0.01; 3 sigma of a 0.01 binomial at n = 10000 is 0.003.
  for (int c : {ie, il, el}) CHECK(std::abs(c / double(n) - 0.01) <= 0.003);
}

TEST_CASE("training_loss: oracle stubs") {
  Rng rng(5);
  const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
  const RelightTuple tuple = random_tuple(rng, 8);
  const Tensor eps = random_tensor(rng, 1, 3, 8, 8);
  StubModel exact;
  exact.output = eps;
  Rng drop(1);
  CHECK(training_loss(exact, tuple, 10, eps, s, drop) == 0.0);
  StubModel shifted;
  shifted.output = eps;
  shifted.offset = 0.3f;
  CHECK(training_loss(shifted, tuple, 10, eps, s, drop) == doctest::Approx(0.09).epsilon(1e-5));
  CHECK(training_loss(shifted, tuple, 10, eps, s, drop) > 0.0);

  // Forced image dropout: the packed image plane is zero on every call.
  StubModel watcher;
  watcher.output = eps;
  DropoutProbs forced{1.0, 0.0, 0.0};
  for (int k = 0; k < 20; ++k) training_loss(watcher, tuple, 1 + k, eps, s, drop, forced);
  for (const PackedInput& p : watcher.seen) {
    CHECK(p.drop_flags[0].image);
    for (int c = 3; c < 6; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) CHECK(p.channels.at(0, c, y, x) == 0.0f);
  }
  // The noised target lands in channels 0..2.
  const Tensor expect = q_sample(image_to_tensor(tuple.target_image), 1, eps, s);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(watcher.seen[0].channels.data[i] == expect.data[i]);
}

TEST_CASE("make_training_batch: masked inputs, black text-to-image conditions") {
  Rng rng(6);
  std::vector<RelightTuple> tuples;
  tuples.push_back(random_tuple(rng, 8));
  tuples[0].input_mask = Mask(8, 8, 0);
  tuples[0].input_mask.at(2, 3) = 1;
  RelightTuple t2i;
  t2i.task = Task::TextToImage;
  t2i.input_image = ImageRgb(8, 8);
  t2i.ldr_env = ImageRgb(8, 8);
  t2i.target_image = testutil::random_image(rng, 8, 8);
  tuples.push_back(t2i);
  const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
  const TrainingBatch b = make_training_batch(tuples, s, rng, DropoutProbs::uniform(0.0));
  REQUIRE(b.packed.channels.n == 2);
  for (int t : b.timesteps) {
    CHECK(t >= 1);
    CHECK(t <= 100);
  }
  CHECK(b.tasks[1] == Task::TextToImage);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const float v = b.packed.channels.at(0, 3 + c, y, x);
        if (x == 2 && y == 3) CHECK(v == doctest::Approx(2.0f * tuples[0].input_image.at(x, y, c) - 1.0f));
        else CHECK(v == -1.0f);  // masked to black before the [-1,1] mapping
        // Black text-to-image conditions are zero planes, not -1.
        CHECK(b.packed.channels.at(1, 3 + c, y, x) == 0.0f);
        CHECK(b.packed.channels.at(1, 6 + c, y, x) == 0.0f);
      }
  CHECK(b.packed.drop_flags[1].image);
  CHECK(b.packed.drop_flags[1].env);
  CHECK_FALSE(b.packed.drop_flags[0].image);
}
