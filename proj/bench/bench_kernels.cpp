// Parallel kernels against the serial reference on UNet-sized layers.
#include <benchmark/benchmark.h>

#include <random>

#include "relight/kernels.hpp"
#include "relight/random.hpp"

using namespace relight;

namespace {

Tensor filled(int n, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  Tensor t(n, c, h, w);
  for (float& v : t.data) v = g(rng);
  return t;
}

// args: channels, resolution
struct ConvCase {
  ConvShape shape;
  Tensor x, w, b, y, dy;
  explicit ConvCase(const benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const int r = static_cast<int>(state.range(1));
    shape = {c, c, 3};
    x = filled(8, c, r, r, 1);
    w = filled(1, 1, 1, c * c * 9, 2);
    b = filled(1, 1, 1, c, 3);
    y = Tensor(8, c, r, r);
    dy = filled(8, c, r, r, 4);
  }
};

void BM_conv_forward_parallel(benchmark::State& state) {
  ConvCase k(state);
  for (auto _ : state) {
    kernels::conv2d_forward(k.x, k.w.data, k.b.data, k.shape, k.y);
    benchmark::DoNotOptimize(k.y.data.data());
  }
}

void BM_conv_forward_reference(benchmark::State& state) {
  ConvCase k(state);
  for (auto _ : state) {
    reference::conv2d_forward(k.x, k.w.data, k.b.data, k.shape, k.y);
    benchmark::DoNotOptimize(k.y.data.data());
  }
}

void BM_conv_backward_parallel(benchmark::State& state) {
  ConvCase k(state);
  Tensor dx(k.x.n, k.x.c, k.x.h, k.x.w);
  std::vector<float> dw(k.w.size()), db(k.b.size());
  for (auto _ : state) {
    kernels::conv2d_backward(k.x, k.w.data, k.shape, k.dy, &dx, dw, db);
    benchmark::DoNotOptimize(dx.data.data());
  }
}

void BM_conv_backward_reference(benchmark::State& state) {
  ConvCase k(state);
  Tensor dx(k.x.n, k.x.c, k.x.h, k.x.w);
  std::vector<float> dw(k.w.size()), db(k.b.size());
  for (auto _ : state) {
    reference::conv2d_backward(k.x, k.w.data, k.shape, k.dy, &dx, dw, db);
    benchmark::DoNotOptimize(dx.data.data());
  }
}

void BM_attention_parallel(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int r = static_cast<int>(state.range(1));
  const Tensor qkv = filled(8, 3 * c, r, r, 5);
  Tensor out(8, c, r, r);
  std::vector<float> probs;
  for (auto _ : state) {
    kernels::attention_forward(qkv, out, probs);
    benchmark::DoNotOptimize(out.data.data());
  }
}

void BM_attention_reference(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int r = static_cast<int>(state.range(1));
  const Tensor qkv = filled(8, 3 * c, r, r, 5);
  Tensor out(8, c, r, r);
  for (auto _ : state) {
    reference::attention_forward(qkv, out);
    benchmark::DoNotOptimize(out.data.data());
  }
}

void BM_group_norm_parallel(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int r = static_cast<int>(state.range(1));
  const Tensor x = filled(8, c, r, r, 6);
  const std::vector<float> gamma(static_cast<std::size_t>(c), 1.0f), beta(static_cast<std::size_t>(c), 0.0f);
  Tensor y(8, c, r, r);
  std::vector<float> mean, rstd;
  for (auto _ : state) {
    kernels::group_norm_forward(x, gamma, beta, 8, 1e-5f, y, mean, rstd);
    benchmark::DoNotOptimize(y.data.data());
  }
}

void BM_group_norm_reference(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int r = static_cast<int>(state.range(1));
  const Tensor x = filled(8, c, r, r, 6);
  const std::vector<float> gamma(static_cast<std::size_t>(c), 1.0f), beta(static_cast<std::size_t>(c), 0.0f);
  Tensor y(8, c, r, r);
  for (auto _ : state) {
    reference::group_norm_forward(x, gamma, beta, 8, 1e-5f, y);
    benchmark::DoNotOptimize(y.data.data());
  }
}

}  // namespace

// Full-resolution stem and the mid level of the desk UNet.
BENCHMARK(BM_conv_forward_parallel)->Args({16, 64})->Args({32, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_forward_reference)->Args({16, 64})->Args({32, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_backward_parallel)->Args({16, 64})->Args({32, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_backward_reference)->Args({16, 64})->Args({32, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_attention_parallel)->Args({32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_attention_reference)->Args({32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_group_norm_parallel)->Args({32, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_group_norm_reference)->Args({32, 32})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
