#include <benchmark/benchmark.h>

#include <random>

#include "intensivenet/blocks.hpp"
#include "intensivenet/ctc.hpp"
#include "intensivenet/layers.hpp"
#include "intensivenet/model.hpp"

namespace {

inet::Tensor random_tensor(inet::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  inet::Tensor t(s);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

void BM_Conv2dStandard(benchmark::State& state) {
  const int c = int(state.range(0));
  inet::Tensor x = random_tensor({1, 28, 28, c}, 1);
  inet::Tensor k = random_tensor({3, 3, c, c}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(inet::conv2d(x, k, {1, 1}, inet::Padding::Same));
  }
}
BENCHMARK(BM_Conv2dStandard)->Arg(16)->Arg(64);

void BM_SeparableConv(benchmark::State& state) {
  const int c = int(state.range(0));
  inet::Tensor x = random_tensor({1, 28, 28, c}, 3);
  inet::Tensor kd = random_tensor({3, 3, c, 1}, 4);
  inet::Tensor kp = random_tensor({1, 1, c, c}, 5);
  for (auto _ : state) {
    inet::Tensor mid = inet::depthwise_conv(x, kd, {1, 1}, inet::Padding::Same);
    benchmark::DoNotOptimize(inet::pointwise_conv(mid, kp));
  }
}
BENCHMARK(BM_SeparableConv)->Arg(16)->Arg(64);

void BM_CtcLoss(benchmark::State& state) {
  const int t = int(state.range(0));
  std::mt19937_64 rng(6);
  inet::Matrix probs(t, 11);
  for (int r = 0; r < t; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 11; ++c) {
      probs.at(r, c) = 0.05 + double(rng() % 100);
      sum += probs.at(r, c);
    }
    for (int c = 0; c < 11; ++c) probs.at(r, c) /= sum;
  }
  const inet::LabelSequence target{3, 1, 4, 1, 5};
  for (auto _ : state) {
    benchmark::DoNotOptimize(inet::ctc_loss(probs, target));
  }
}
BENCHMARK(BM_CtcLoss)->Arg(25)->Arg(100);

void BM_IntensiveBlockForward(benchmark::State& state) {
  inet::BlockConfig cfg;
  cfg.layer_count = 4;
  cfg.growth_rate = 4;
  inet::ParamStore store;
  inet::init_intensive_block(store, "ib", 8, cfg, 7);
  inet::Tensor x = random_tensor({1, 16, 16, 8}, 8);
  for (auto _ : state) {
    inet::Tape tape;
    benchmark::DoNotOptimize(
        inet::intensive_block(tape.leaf(x), store, "ib", cfg, inet::Mode{}));
  }
}
BENCHMARK(BM_IntensiveBlockForward);

void BM_MnistModelForward(benchmark::State& state) {
  inet::ModelConfig cfg;  // default MNIST layout
  inet::ParamStore store;
  inet::init_model(store, cfg);
  inet::Tensor x = random_tensor({int(state.range(0)), 28, 28, 1}, 9);
  for (auto _ : state) {
    benchmark::DoNotOptimize(inet::model_logits(x, store, cfg));
  }
}
BENCHMARK(BM_MnistModelForward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
