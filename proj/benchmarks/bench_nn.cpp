#include <benchmark/benchmark.h>

#include "malvis/nn.hpp"
#include "malvis/rng.hpp"

using namespace malvis;

namespace {

Tensor random_tensor(SplitMix64& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.next_range(-1.0, 1.0);
  return t;
}

void BM_conv2d_forward(benchmark::State& state) {
  SplitMix64 rng(1);
  const Tensor input = random_tensor(rng, {8, 16, 32, 32});
  const Tensor kernel = random_tensor(rng, {32, 16, 3, 3});
  const Tensor bias = random_tensor(rng, {32});
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::conv2d_forward(input, kernel, bias, 1, 1));
  }
  state.SetItemsProcessed(state.iterations() * input.dim(0));
}
BENCHMARK(BM_conv2d_forward)->Unit(benchmark::kMillisecond);

void BM_conv2d_backward(benchmark::State& state) {
  SplitMix64 rng(2);
  const Tensor input = random_tensor(rng, {8, 16, 32, 32});
  const Tensor kernel = random_tensor(rng, {32, 16, 3, 3});
  const Tensor bias = random_tensor(rng, {32});
  const Tensor grad = random_tensor(rng, nn::conv2d_forward(input, kernel, bias, 1, 1).shape());
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::conv2d_backward(input, kernel, grad, 1, 1));
  }
  state.SetItemsProcessed(state.iterations() * input.dim(0));
}
BENCHMARK(BM_conv2d_backward)->Unit(benchmark::kMillisecond);

void BM_dense_forward(benchmark::State& state) {
  SplitMix64 rng(3);
  const Tensor input = random_tensor(rng, {64, 4096});
  const Tensor weights = random_tensor(rng, {1024, 4096});
  const Tensor bias = random_tensor(rng, {1024});
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::dense_forward(input, weights, bias));
  }
}
BENCHMARK(BM_dense_forward)->Unit(benchmark::kMillisecond);

void BM_gru_step(benchmark::State& state) {
  SplitMix64 rng(4);
  nn::GruParams params = nn::GruParams::zeros(64, 128);
  for (Tensor* t : {&params.wz, &params.uz, &params.wr, &params.ur, &params.wh, &params.uh})
    for (std::size_t i = 0; i < t->numel(); ++i) (*t)[i] = rng.next_range(-0.5, 0.5);
  const Tensor x = random_tensor(rng, {64, 64});
  const Tensor h = random_tensor(rng, {64, 128});
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::gru_step(x, h, params));
  }
}
BENCHMARK(BM_gru_step)->Unit(benchmark::kMicrosecond);

void BM_maxpool2d(benchmark::State& state) {
  SplitMix64 rng(5);
  const Tensor input = random_tensor(rng, {8, 32, 64, 64});
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::maxpool2d_forward(input, 2, 2));
  }
}
BENCHMARK(BM_maxpool2d)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
