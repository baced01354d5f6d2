#include <benchmark/benchmark.h>

#include "hoir/rng.hpp"
#include "hoir/tensor.hpp"

using namespace hoir;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, bool rg = false) {
  Rng rng(seed);
  std::vector<double> d(static_cast<size_t>(numel(shape)));
  for (auto& v : d) v = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(std::move(shape), std::move(d), rg);
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  int64_t n = state.range(0);
  Tensor a = random_tensor({n, n}, 1);
  Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

static void BM_SoftmaxAxis(benchmark::State& state) {
  Tensor x = random_tensor({64, 64, 8}, 3);
  for (auto _ : state) {
    Tensor y = softmax_axis(x, 1);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_SoftmaxAxis);

static void BM_BroadcastAdd(benchmark::State& state) {
  Tensor a = random_tensor({16, 1, 16, 64}, 4);
  Tensor b = random_tensor({1, 8, 16, 64}, 5);
  for (auto _ : state) {
    Tensor c = a + b;
    benchmark::DoNotOptimize(c.data().data());
  }
}
BENCHMARK(BM_BroadcastAdd);

static void BM_ForwardBackward(benchmark::State& state) {
  int64_t n = state.range(0);
  Tensor w1 = random_tensor({n, n}, 6, true);
  Tensor w2 = random_tensor({n, n}, 7, true);
  Tensor x = random_tensor({8, n}, 8);
  for (auto _ : state) {
    Tensor loss = sum_all(softmax_axis(matmul(relu(matmul(x, w1)), w2), 1));
    backward(loss);
    w1.zero_grad();
    w2.zero_grad();
    benchmark::DoNotOptimize(loss.value());
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(64);
