#include <benchmark/benchmark.h>

#include "hoir/train.hpp"

using namespace hoir;

static void BM_TrainStep(benchmark::State& state) {
  Vocabulary vocab = Vocabulary::synthetic(6, 8);
  RuleSet rules = make_synthetic_rules(vocab, 12, 42);
  SplitSpec split;
  std::vector<Scene> scenes;
  for (uint64_t s = 0; s < 8; ++s) {
    scenes.push_back(generate_scene(s, vocab, rules, split, ScenePhase::Train));
  }
  ModelConfig cfg = ModelConfig::for_vocab(vocab);
  cfg.d = 64;
  cfg.n_queries = 8;
  cfg.layers_interaction = 3;
  cfg.layers_decoder = 3;
  cfg.ffn_dim = 128;
  cfg.pe_dims = 32;
  Model model(cfg, 1);
  Adam opt;
  TrainConfig tc;
  size_t i = 0;
  for (auto _ : state) {
    std::vector<const Scene*> batch{&scenes[(2 * i) % 8],
                                    &scenes[(2 * i + 1) % 8]};
    auto report = train_step(model, opt, batch, vocab, rules, tc);
    benchmark::DoNotOptimize(report.total);
    ++i;
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_SceneGeneration(benchmark::State& state) {
  Vocabulary vocab = Vocabulary::synthetic(6, 8);
  RuleSet rules = make_synthetic_rules(vocab, 12, 42);
  SplitSpec split;
  uint64_t seed = 0;
  for (auto _ : state) {
    Scene s = generate_scene(seed++, vocab, rules, split, ScenePhase::Train);
    benchmark::DoNotOptimize(s.features.data().data());
  }
}
BENCHMARK(BM_SceneGeneration);

static void BM_HungarianMatch(benchmark::State& state) {
  int64_t n = state.range(0);
  Rng rng(7);
  std::vector<std::vector<double>> cost(static_cast<size_t>(n));
  for (auto& row : cost) {
    row.resize(static_cast<size_t>(n));
    for (auto& v : row) v = rng.uniform();
  }
  for (auto _ : state) {
    auto m = hungarian_match(cost);
    benchmark::DoNotOptimize(m.data());
  }
}
BENCHMARK(BM_HungarianMatch)->Arg(6)->Arg(32);

BENCHMARK_MAIN();
