#include <benchmark/benchmark.h>

#include "hoir/attention.hpp"

using namespace hoir;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::vector<double> d(static_cast<size_t>(numel(shape)));
  for (auto& v : d) v = rng.uniform(-0.5, 0.5);
  return Tensor::from_data(std::move(shape), std::move(d), false);
}

}  // namespace

static void BM_TripletAttention(benchmark::State& state) {
  int64_t n = state.range(0);
  int64_t d = 64;
  Rng rng(1);
  ParamStore ps;
  auto w = AttentionWeights::create_triplet(ps, "t", d, rng);
  TripletQKV qkv;
  qkv.fq = random_tensor({n, n, d}, rng);
  qkv.fk = random_tensor({n, n, d}, rng);
  qkv.fv = random_tensor({n, n, n, d}, rng);
  for (auto _ : state) {
    Tensor y = triplet_attention(qkv, w);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_TripletAttention)->Arg(4)->Arg(8)->Arg(16);

static void BM_TripletOracle(benchmark::State& state) {
  int64_t n = state.range(0);
  int64_t d = 64;
  Rng rng(1);
  ParamStore ps;
  auto w = AttentionWeights::create_triplet(ps, "t", d, rng);
  TripletQKV qkv;
  qkv.fq = random_tensor({n, n, d}, rng);
  qkv.fk = random_tensor({n, n, d}, rng);
  qkv.fv = random_tensor({n, n, n, d}, rng);
  for (auto _ : state) {
    Tensor y = triplet_oracle(qkv, w);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_TripletOracle)->Arg(4)->Arg(8);

static void BM_InteractionDecoder(benchmark::State& state) {
  int64_t n = state.range(0);
  int64_t d = 64;
  Rng rng(2);
  ParamStore ps;
  auto dec = InteractionDecoder::create(ps, "dp", n, n, d, 128, 3, true, {}, rng);
  QuerySet qh{Role::Human, random_tensor({n, d}, rng), Tensor::zeros({n})};
  QuerySet qa{Role::Action, random_tensor({n, d}, rng), Tensor::zeros({n})};
  QuerySet qo{Role::Object, random_tensor({n, d}, rng), Tensor::zeros({n})};
  Tensor mem = random_tensor({12, d}, rng);
  for (auto _ : state) {
    auto y = dec.forward(mem, qh, qa, qo);
    benchmark::DoNotOptimize(y.embeddings.data().data());
  }
}
BENCHMARK(BM_InteractionDecoder)->Arg(4)->Arg(8);
