#include <benchmark/benchmark.h>

#include <sstream>
#include <vector>

#include "malvis/dataset.hpp"
#include "malvis/pe.hpp"
#include "malvis/pgm.hpp"
#include "malvis/rng.hpp"

using namespace malvis;

namespace {

std::vector<std::uint8_t> random_bytes(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::uint8_t> bytes(n);
  for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.next_below(256));
  return bytes;
}

void BM_render_image_1mb(benchmark::State& state) {
  const auto bytes = random_bytes(1 << 20, 10);
  const std::size_t width = choose_width(bytes.size());
  for (auto _ : state) {
    benchmark::DoNotOptimize(render_image(bytes, width));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes.size()));
}
BENCHMARK(BM_render_image_1mb)->Unit(benchmark::kMillisecond);

void BM_pgm_roundtrip(benchmark::State& state) {
  const auto bytes = random_bytes(512 * 384, 11);
  const GrayImage image = render_image(bytes, 512);
  for (auto _ : state) {
    std::ostringstream out;
    write_pgm(image, out);
    std::istringstream in(out.str());
    benchmark::DoNotOptimize(read_pgm(in));
  }
}
BENCHMARK(BM_pgm_roundtrip)->Unit(benchmark::kMillisecond);

void BM_resize_to_64(benchmark::State& state) {
  const auto bytes = random_bytes(512 * 400, 12);
  const GrayImage image = render_image(bytes, 512);
  for (auto _ : state) {
    benchmark::DoNotOptimize(resize(image, 64, 64));
  }
}
BENCHMARK(BM_resize_to_64)->Unit(benchmark::kMicrosecond);

}  // namespace

