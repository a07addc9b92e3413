#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "relight/diffusion.hpp"
#include "relight/error.hpp"
#include "relight/kernels.hpp"
#include "relight/network.hpp"
#include "relight/trainer.hpp"
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

Tensor random_tensor(Rng& rng, int n, int c, int h, int w, float scale = 1.0f) {
  std::normal_distribution<float> g(0.0f, scale);
  Tensor t(n, c, h, w);
  for (float& v : t.data) v = g(rng);
  return t;
}

UNetConfig tiny_config() {
  UNetConfig c;
  c.resolution = 16;
  c.base_channels = 8;
  c.channel_mults = {1, 2};
  c.embed_dim = 16;
  return c;
}

StepConditioning conditioning(int n, Rng& rng) {
  StepConditioning c;
  for (int i = 0; i < n; ++i) {
    c.timesteps.push_back(1 + static_cast<int>(rng() % 1000));
    c.labels.push_back({static_cast<int>(rng() % 10), static_cast<int>(rng() % 4)});
    c.label_dropped.push_back(i % 2);
  }
  return c;
}

// Independent restatement of the documented parameter-count formula.
std::size_t expected_count(const UNetConfig& c) {
  auto conv = [](long i, long o, long k) { return o * i * k * k + o; };
  auto norm = [](long ch) { return 2 * ch; };
  auto lin = [](long i, long o) { return i * o + o; };
  const long E = c.embed_dim;
  auto res = [&](long i, long o) {
    return norm(i) + conv(i, o, 3) + lin(E, o) + norm(o) + conv(o, o, 3) + (i != o ? conv(i, o, 1) : 0);
  };
  std::vector<long> ch;
  for (int m : c.channel_mults) ch.push_back(static_cast<long>(c.base_channels) * m);
  const long c0 = ch.front();
  const long cl = ch.back();
  long total = conv(9, c0, 3) + lin(c0, E) + lin(E, E);
  for (int v : c.label_vocab_sizes) total += (v + 1) * E;
  long prev = c0;
  for (long cc : ch) {
    total += res(prev, cc);
    prev = cc;
  }
  total += res(cl, cl);
  if (c.attention_at_lowest) total += norm(cl) + conv(cl, 3 * cl, 1) + conv(cl, cl, 1);
  long up = cl;
  for (int l = static_cast<int>(ch.size()) - 1; l >= 0; --l) {
    total += res(up + ch[static_cast<std::size_t>(l)], ch[static_cast<std::size_t>(l)]);
    up = ch[static_cast<std::size_t>(l)];
    if (l > 0) total += conv(up, up, 3);
  }
  total += norm(c0) + conv(c0, 3, 3);
  return static_cast<std::size_t>(total);
}

double relative_error(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, static_cast<double>(std::abs(a.data[i] - b.data[i])));
    den = std::max(den, static_cast<double>(std::abs(b.data[i])));
  }
  return num / std::max(den, 1e-12);
}

}  // namespace

TEST_CASE("init_model: zero condition channels, determinism, validation") {
  const UNetConfig c = tiny_config();
  const ModelParams p = init_model(c, 3);
  CHECK(p == init_model(c, 3));
  CHECK_FALSE(p == init_model(c, 4));
  const ParamTensor& w = p.tensors.front();
  REQUIRE(w.shape == std::vector<int>{8, 9, 3, 3});
  float cond_max = 0.0f, xt_max = 0.0f;
  for (int o = 0; o < 8; ++o)
    for (int i = 0; i < 9; ++i)
      for (int k = 0; k < 9; ++k) {
        const float v = std::abs(w.values[(static_cast<std::size_t>(o) * 9 + i) * 9 + k]);
        (i >= 3 ? cond_max : xt_max) = std::max(i >= 3 ? cond_max : xt_max, v);
      }
  CHECK(cond_max == 0.0f);
  CHECK(xt_max > 0.0f);

  UNetConfig bad = c;
  bad.channel_mults = {1, 2, 4};
  bad.resolution = 62;
  CHECK(code_of([&] { init_model(bad, 0); }) == ErrorCode::InvalidConfig);
  bad.resolution = 60;  // divisible by 4, so three levels are fine
  CHECK(init_model(bad, 0).count() > 0);
  bad = c;
  bad.in_channels = 8;
  CHECK(code_of([&] { init_model(bad, 0); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("parameter count matches the closed form") {
  std::vector<UNetConfig> configs{tiny_config(), UNetConfig{}};
  UNetConfig no_attn = tiny_config();
  no_attn.attention_at_lowest = false;
  configs.push_back(no_attn);
  UNetConfig desk = UNetConfig{};
  desk.base_channels = 16;
  desk.channel_mults = {1, 2, 2};
  desk.embed_dim = 64;
  configs.push_back(desk);
  for (const UNetConfig& c : configs) {
    const ModelParams p = init_model(c, 0);
    CHECK(p.count() == expected_count(c));
    CHECK(closed_form_param_count(c) == expected_count(c));
  }
}

TEST_CASE("forward: shapes, finiteness, errors") {
  const ModelParams p = init_model(tiny_config(), 1);
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = random_tensor(rng, 2, 9, 16, 16, 2.0f);
    const Tensor y = forward(p, x, conditioning(2, rng));
    CHECK(y.n == 2);
    CHECK(y.c == 3);
    CHECK(y.h == 16);
    CHECK(y.w == 16);
    CHECK(std::all_of(y.data.begin(), y.data.end(), [](float v) { return std::isfinite(v); }));
  }
  CHECK(code_of([&] { forward(p, Tensor(1, 8, 16, 16), conditioning(1, rng)); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { forward(p, Tensor(1, 9, 8, 8), conditioning(1, rng)); }) == ErrorCode::ShapeMismatch);
  StepConditioning bad = conditioning(1, rng);
  bad.labels[0] = {10, 0};
  bad.label_dropped[0] = 0;
  CHECK(code_of([&] { forward(p, Tensor(1, 9, 16, 16), bad); }) == ErrorCode::LabelOutOfRange);
}

TEST_CASE("forward: condition planes are inert at init") {
  const ModelParams p = init_model(tiny_config(), 5);
  Rng rng(6);
  Tensor a = random_tensor(rng, 1, 9, 16, 16);
  Tensor b = a;
  for (int c = 3; c < 9; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) b.at(0, c, y, x) = static_cast<float>(rng() % 1000) / 500.0f - 1.0f;
  const StepConditioning cond = conditioning(1, rng);
  CHECK(forward(p, a, cond) == forward(p, a, cond));
  CHECK(forward(p, a, cond) == forward(p, b, cond));
}

TEST_CASE("forward: timestep and label pathways are live") {
  ModelParams p = init_model(tiny_config(), 7);
  // Biases start at zero; a random perturbation stands in for a few training steps.
  Rng rng(8);
  std::normal_distribution<float> g(0.0f, 0.1f);
  for (ParamTensor& t : p.tensors)
    for (float& v : t.values) v += g(rng);
  const Tensor x = random_tensor(rng, 1, 9, 16, 16);
  StepConditioning c1 = conditioning(1, rng);
  c1.label_dropped[0] = 0;
  StepConditioning cT = c1;
  c1.timesteps[0] = 1;
  cT.timesteps[0] = 1000;
  CHECK(relative_error(forward(p, x, c1), forward(p, x, cT)) > 1e-3);
  StepConditioning other_label = c1;
  other_label.labels[0] = {(c1.labels[0][0] + 1) % 10, c1.labels[0][1]};
  CHECK(relative_error(forward(p, x, c1), forward(p, x, other_label)) > 1e-4);
  // A dropped label ignores its value.
  StepConditioning d1 = c1, d2 = other_label;
  d1.label_dropped[0] = d2.label_dropped[0] = 1;
  CHECK(forward(p, x, d1) == forward(p, x, d2));
}

TEST_CASE("gradient check against central differences") {
  ModelParams p = init_model(tiny_config(), 11);
  Rng rng(12);
  std::normal_distribution<float> g(0.0f, 0.05f);
  for (ParamTensor& t : p.tensors)
    for (float& v : t.values) v += g(rng);

  TrainingBatch batch;
  const Tensor x = random_tensor(rng, 2, 3, 16, 16);
  const Tensor img = random_tensor(rng, 2, 3, 16, 16);
  const Tensor env = random_tensor(rng, 2, 3, 16, 16);
  const std::vector<DropFlags> flags{{false, false, false}, {false, true, true}};
  batch.packed = pack_conditions(x, img, env, flags);
  batch.timesteps = {17, 640};
  batch.labels = {Label{3, 1}, Label{7, 2}};
  batch.tasks = {Task::Relight, Task::Relight};
  batch.eps = random_tensor(rng, 2, 3, 16, 16);

  Gradients grads = Gradients::zeros_like(p);
  compute_gradients(p, batch, grads);

  const StepConditioning cond = make_conditioning(batch.packed, batch.timesteps, batch.labels);
  auto loss = [&]() { return mean_squared_error(forward(p, batch.packed.channels, cond), batch.eps); };

  // Pick 20 random entries among those with a gradient large enough for a
  // float32 central difference to resolve to 1e-3.
  double gmax = 0.0;
  for (const auto& gv : grads.values)
    for (float v : gv) gmax = std::max(gmax, static_cast<double>(std::abs(v)));
  int checked = 0;
  int attempts = 0;
  while (checked < 20 && attempts < 100000) {
    ++attempts;
    const std::size_t ti = rng() % p.tensors.size();
    ParamTensor& t = p.tensors[ti];
    const std::size_t k = rng() % t.values.size();
    const double analytic = grads.values[ti][k];
    if (std::abs(analytic) < 0.05 * gmax) continue;
    const float orig = t.values[k];
    // Richardson-extrapolated central difference.
    auto central = [&](float h) {
      t.values[k] = orig + h;
      const double up = loss();
      t.values[k] = orig - h;
      const double down = loss();
      t.values[k] = orig;
      return (up - down) / (2.0 * h);
    };
    const double h = 1e-2;
    const double numeric = (4.0 * central(static_cast<float>(h / 2)) - central(static_cast<float>(h))) / 3.0;
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    INFO(t.name, "[", k, "] analytic ", analytic, " numeric ", numeric);
    CHECK(rel < 1e-3);
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("parallel kernels agree with the serial reference") {
  Rng rng(13);
  for (const ConvShape shape : {ConvShape{5, 7, 3}, ConvShape{8, 4, 1}, ConvShape{9, 16, 3}}) {
    const Tensor x = random_tensor(rng, 2, shape.cin, 9, 11);
    const Tensor wt = random_tensor(rng, 1, 1, 1, shape.cout * shape.cin * shape.kernel * shape.kernel);
    const Tensor b = random_tensor(rng, 1, 1, 1, shape.cout);
    Tensor y1(2, shape.cout, 9, 11), y2(2, shape.cout, 9, 11);
    kernels::conv2d_forward(x, wt.data, b.data, shape, y1);
    reference::conv2d_forward(x, wt.data, b.data, shape, y2);
    CHECK(relative_error(y1, y2) < 1e-5);

    const Tensor dy = random_tensor(rng, 2, shape.cout, 9, 11);
    Tensor dx1(2, shape.cin, 9, 11), dx2(2, shape.cin, 9, 11);
    Tensor dw1(1, 1, 1, static_cast<int>(wt.size())), dw2 = dw1;
    Tensor db1(1, 1, 1, shape.cout), db2 = db1;
    kernels::conv2d_backward(x, wt.data, shape, dy, &dx1, dw1.data, db1.data);
    reference::conv2d_backward(x, wt.data, shape, dy, &dx2, dw2.data, db2.data);
    CHECK(relative_error(dx1, dx2) < 1e-5);
    CHECK(relative_error(dw1, dw2) < 1e-5);
    CHECK(relative_error(db1, db2) < 1e-5);
  }
  {
    const Tensor x = random_tensor(rng, 3, 8, 6, 6, 3.0f);
    const Tensor gamma = random_tensor(rng, 1, 1, 1, 8);
    const Tensor beta = random_tensor(rng, 1, 1, 1, 8);
    Tensor y1(3, 8, 6, 6), y2(3, 8, 6, 6);
    std::vector<float> mean, rstd;
    kernels::group_norm_forward(x, gamma.data, beta.data, 4, 1e-5f, y1, mean, rstd);
    reference::group_norm_forward(x, gamma.data, beta.data, 4, 1e-5f, y2);
    CHECK(relative_error(y1, y2) < 1e-5);
  }
  {
    const Tensor qkv = random_tensor(rng, 2, 3 * 6, 4, 4);
    Tensor o1(2, 6, 4, 4), o2(2, 6, 4, 4);
    std::vector<float> probs;
    kernels::attention_forward(qkv, o1, probs);
    reference::attention_forward(qkv, o2);
    CHECK(relative_error(o1, o2) < 1e-5);
  }
}

TEST_CASE("timestep features are distinct and bounded") {
  const std::vector<int> ts{1, 2, 500, 1000};
  const Tensor f = timestep_features(ts, 16);
  CHECK(f.n == 4);
  CHECK(f.c == 16);
  for (float v : f.data) CHECK(std::abs(v) <= 1.0f);
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) {
      double d = 0.0;
      for (int k = 0; k < 16; ++k) d += std::abs(f.at(a, k, 0, 0) - f.at(b, k, 0, 0));
      CHECK(d > 1e-3);
    }
}
