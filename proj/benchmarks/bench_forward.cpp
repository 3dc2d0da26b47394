// Microbenchmarks for the inference path: per-configuration forward cost,
// masked vs sliced FFN, and the attention kernel across sequence lengths.
// Wall-clock companions to the analytic FLOPs model.

#include <benchmark/benchmark.h>

#include "adaperceiver/costmodel.hpp"
#include "adaperceiver/matryoshka.hpp"
#include "adaperceiver/model.hpp"
#include "adaperceiver/rng.hpp"

using namespace adaperceiver;

namespace {

Tensor random_images(const ModelConfig& cfg, Index batch, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<size_t>(batch * cfg.in_channels * cfg.image_size *
                                           cfg.image_size));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor::from({batch, cfg.in_channels, cfg.image_size, cfg.image_size}, std::move(v));
}

const ModelConfig& toy() {
  static ModelConfig cfg = ModelConfig::toy();
  return cfg;
}

const AdaPerceiver& toy_model() {
  static AdaPerceiver model(toy(), 1);
  return model;
}

}  // namespace

static void BM_ForwardConfig(benchmark::State& state) {
  const auto& model = toy_model();
  const int t = static_cast<int>(state.range(0));
  const int w = static_cast<int>(state.range(1));
  const int l = static_cast<int>(state.range(2));
  auto patches = model.patchify(random_images(toy(), 8, 7));
  const ConfigTuple cfg{t, w, l};
  for (auto _ : state) {
    auto logits = model.forward_config(patches, cfg);
    benchmark::DoNotOptimize(logits.value().data());
  }
  state.counters["analytic_gflops"] = flops_forward(cfg, toy(), 1).gflops();
}
BENCHMARK(BM_ForwardConfig)
    ->Args({4, 32, 6})
    ->Args({8, 48, 6})
    ->Args({16, 64, 6})
    ->Args({32, 64, 6})
    ->Args({32, 64, 3})
    ->Args({32, 32, 6});

static void BM_BlockMaskedAttention(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const ModelConfig& cfg = toy();
  const auto& model = toy_model();
  auto mask = model.training_mask().restricted_to(n);
  Rng rng(5);
  std::vector<float> v(static_cast<size_t>(8 * n * cfg.d));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  auto z = Tensor::from({8, n, cfg.d}, std::move(v));
  std::vector<int> kept(8, cfg.ffn_hidden());
  for (auto _ : state) {
    auto out = model.block_forward(nullptr, 0, z, mask, kept);
    benchmark::DoNotOptimize(out.value().data());
  }
}
BENCHMARK(BM_BlockMaskedAttention)->Arg(4)->Arg(8)->Arg(16)->Arg(32)->Arg(64);

static void BM_MatFfnMaskedVsSliced(benchmark::State& state) {
  const bool sliced = state.range(0) != 0;
  const int width = static_cast<int>(state.range(1));
  const ModelConfig& cfg = toy();
  const auto& model = toy_model();
  Rng rng(9);
  std::vector<float> v(static_cast<size_t>(8 * cfg.max_latents * cfg.d));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  auto z = Tensor::from({8, cfg.max_latents, cfg.d}, std::move(v));
  const auto& blk = model.block(0);
  const int kept = hidden_kept(width, cfg.ffn_ratio);
  std::vector<int> kept_all(8, kept);
  auto ffn_sliced = model.make_sliced_ffn(0, width);
  for (auto _ : state) {
    Tensor out;
    if (sliced) {
      auto up = ops::linear<float>(nullptr, z, ffn_sliced.up.weight, ffn_sliced.up.bias);
      out = ops::linear<float>(nullptr, ops::gelu<float>(nullptr, up), ffn_sliced.down.weight,
                               ffn_sliced.down.bias);
    } else {
      out = mat_ffn<float>(nullptr, z, blk.ffn_up, blk.ffn_down, kept_all);
    }
    benchmark::DoNotOptimize(out.value().data());
  }
}
BENCHMARK(BM_MatFfnMaskedVsSliced)
    ->Args({0, 32})
    ->Args({1, 32})
    ->Args({0, 48})
    ->Args({1, 48})
    ->Args({0, 64})
    ->Args({1, 64});

static void BM_TrainingForward(benchmark::State& state) {
  const auto& model = toy_model();
  auto patches = model.patchify(random_images(toy(), 16, 11));
  std::vector<int> widths(16, toy().widths.back());
  for (auto _ : state) {
    Rng rng(3);
    auto outs = model.forward_training(nullptr, patches, model.training_mask(), widths, rng);
    benchmark::DoNotOptimize(outs.token_outputs.back().second.value().data());
  }
}
BENCHMARK(BM_TrainingForward);

BENCHMARK_MAIN();
