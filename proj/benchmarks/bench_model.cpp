#include <benchmark/benchmark.h>

#include "spinet/model.hpp"
#include "spinet/trainer.hpp"

namespace {

using namespace spinet;

Batch random_batch(const SPInetConfig& cfg, std::int64_t n, std::int64_t t, std::int64_t hw) {
  Rng rng(7);
  std::vector<float> x(static_cast<std::size_t>(n * t * cfg.bands * hw * hw));
  for (auto& v : x) v = static_cast<float>(rng.uniform());
  const std::int64_t full = hw * cfg.upscale;
  std::vector<float> y(static_cast<std::size_t>(n * full * full));
  for (auto& v : y) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
  return {Tensor::from({n, t, cfg.bands, hw, hw}, std::move(x)), Tensor::from({n, 1, full, full}, std::move(y))};
}

// arg: 1 = fusion head, 0 = ablation head
void BM_ForwardEval(benchmark::State& state) {
  SPInetConfig cfg;
  cfg.use_mrf = state.range(0) != 0;
  SPInet model(cfg, 1);
  const Batch batch = random_batch(cfg, 1, 8, 64);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(batch.inputs, Mode::eval));
}
BENCHMARK(BM_ForwardEval)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  SPInetConfig cfg;
  cfg.use_mrf = state.range(0) != 0;
  SPInet model(cfg, 1);
  const Batch batch = random_batch(cfg, 2, 6, 8);
  std::int64_t step = 0;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(model, batch, AdamOptions{}, step++));
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

}  // namespace
