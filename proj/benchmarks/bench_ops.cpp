#include <benchmark/benchmark.h>

#include "spinet/ops.hpp"
#include "spinet/rng.hpp"
#include "spinet/tensor.hpp"

namespace {

using namespace spinet;

Tensor random_tensor(const Shape& shape, Rng& rng, bool grad = false) {
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  Tensor t = Tensor::from(shape, std::move(v));
  if (grad) t.set_requires_grad(true);
  return t;
}

// args: batch, in channels, out channels, extent, kernel
void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(1);
  const auto n = state.range(0), cin = state.range(1), cout = state.range(2), hw = state.range(3), k = state.range(4);
  const Tensor x = random_tensor({n, cin, hw, hw}, rng);
  const Tensor w = random_tensor({cout, cin, k, k}, rng);
  const Tensor b = random_tensor({cout}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, k / 2));
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * n * cout * cin * k * k * hw * hw * state.iterations() / 1e9,
                                                benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Conv2dForward)
    ->Args({2, 16, 16, 128, 3})
    ->Args({12, 16, 16, 32, 3})
    ->Args({12, 16, 16, 32, 1})
    ->Args({2, 16, 256, 32, 3})
    ->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(2);
  const auto n = state.range(0), cin = state.range(1), cout = state.range(2), hw = state.range(3), k = state.range(4);
  Tensor x = random_tensor({n, cin, hw, hw}, rng, true);
  Tensor w = random_tensor({cout, cin, k, k}, rng, true);
  Tensor b = random_tensor({cout}, rng, true);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = sum(conv2d(x, w, b, 1, k / 2));
    tape.backward(loss);
    benchmark::DoNotOptimize(w.grad_data<float>().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({2, 16, 16, 128, 3})->Args({12, 16, 16, 32, 3})->Unit(benchmark::kMillisecond);

void BM_Conv2dReference(benchmark::State& state) {
  Rng rng(3);
  const Tensor x = random_tensor({1, 8, 32, 32}, rng);
  const Tensor w = random_tensor({8, 8, 3, 3}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_reference(x, w, Tensor{}, 1, 1));
}
BENCHMARK(BM_Conv2dReference)->Unit(benchmark::kMillisecond);

}  // namespace
