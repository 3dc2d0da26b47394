#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "adaperceiver/costmodel.hpp"

using namespace adaperceiver;

TEST_CASE("total is the sum of stages") {
  auto mcfg = ModelConfig::toy();
  auto r = flops_forward({16, 48, 4}, mcfg, 1);
  CHECK(r.total() ==
        r.patch_embed + r.encode + r.block_attention + r.block_ffn + r.readout + r.head);
  CHECK(r.total() > 0.0);
}

TEST_CASE("doubling depth exactly doubles the per-block subtotal") {
  auto mcfg = ModelConfig::toy();
  auto r1 = flops_forward({16, 64, 3}, mcfg, 1);
  auto r2 = flops_forward({16, 64, 6}, mcfg, 1);
  CHECK(r2.block_attention == 2.0 * r1.block_attention);
  CHECK(r2.block_ffn == 2.0 * r1.block_ffn);
  // non-block stages unchanged
  CHECK(r2.patch_embed == r1.patch_embed);
  CHECK(r2.encode == r1.encode);
  CHECK(r2.readout == r1.readout);
}

TEST_CASE("strictly increasing in t, l, and kept width") {
  auto mcfg = ModelConfig::toy();
  double prev_t = 0;
  for (int t : {2, 4, 7, 8, 16, 32, 64}) {
    const double v = flops_forward({t, 64, 6}, mcfg, 1).total();
    CHECK(v > prev_t);
    prev_t = v;
  }
  double prev_l = 0;
  for (int l = 1; l <= 6; ++l) {
    const double v = flops_forward({16, 64, l}, mcfg, 1).total();
    CHECK(v > prev_l);
    prev_l = v;
  }
  double prev_w = 0;
  for (int w : mcfg.widths) {
    const double v = flops_forward({16, w, 6}, mcfg, 1).total();
    CHECK(v > prev_w);
    prev_w = v;
  }
}

TEST_CASE("t doubling difference matches the expanded quadratic+linear form") {
  auto mcfg = ModelConfig::toy();
  const CostConvention conv;
  for (int x : {4, 8, 16}) {
    const double f2 = flops_forward({2 * x, 64, 6}, mcfg, 1).total();
    const double f1 = flops_forward({x, 64, 6}, mcfg, 1).total();

    // hand expansion: every stage is a + b*t + c*t^2 in t, so
    // F(2x) - F(x) = b*x + c*3x^2 with coefficients assembled independently
    const double d = mcfg.d;
    const double kept = hidden_kept(64, mcfg.ffn_ratio);
    const double L = 6, I = mcfg.input_tokens(), M = 1, H = mcfg.heads;
    const double b_coef =
        conv.flops_per_mac * (2.0 * d * d + 2.0 * I * d)                  // encode q/out + scores/AV
        + conv.rope_per_element * d + conv.softmax_per_element * H * I +
        conv.ew_per_element * d                                           // encode extras
        + L * (conv.flops_per_mac * 4.0 * d * d + conv.rope_per_element * 2.0 * d +
               conv.norm_per_element * d + conv.ew_per_element * 2.0 * d)  // attn linear part
        + L * (conv.flops_per_mac * 2.0 * d * kept + conv.gelu_per_element * kept +
               conv.norm_per_element * d + conv.ew_per_element * 2.0 * d)  // ffn linear part
        + conv.flops_per_mac * (2.0 * d * d + 2.0 * M * d) +
        conv.softmax_per_element * H * M;  // readout K/V, scores/AV, softmax
    const double c_coef = L * (conv.flops_per_mac * 2.0 * d + conv.softmax_per_element * H);
    const double want = b_coef * x + c_coef * 3.0 * x * x;
    CHECK(f2 - f1 == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("early-exit accounting is baseline plus readout increments") {
  auto mcfg = ModelConfig::toy();
  const int n_depths = static_cast<int>(mcfg.depths.size());
  auto baseline = flops_forward({16, 64, 6}, mcfg, 1);
  auto ee_full = flops_forward({16, 64, 6}, mcfg, 1, n_depths);
  const double readout_inc = baseline.readout + baseline.head;
  CHECK(ee_full.total() ==
        doctest::Approx(baseline.total() + (n_depths - 1) * readout_inc).epsilon(1e-12));

  // monotone in executed depth at equal t
  double prev = 0;
  for (int l = 1; l <= 6; ++l) {
    const double v = flops_forward({16, 64, l}, mcfg, 1, l).total();
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("invalid configurations are rejected") {
  auto mcfg = ModelConfig::toy();
  CHECK_THROWS_AS(flops_forward({0, 64, 6}, mcfg, 1), InvalidConfig);
  CHECK_THROWS_AS(flops_forward({16, 63, 6}, mcfg, 1), InvalidConfig);
  CHECK_THROWS_AS(flops_forward({16, 64, 7}, mcfg, 1), InvalidConfig);
  CHECK_THROWS_AS(flops_forward({16, 64, 6}, mcfg, 0), InvalidConfig);
}

TEST_CASE("paper-scale preset structure") {
  auto mcfg = ModelConfig::paper_scale();
  mcfg.validate();
  CHECK(mcfg.input_tokens() == 256);
  CHECK(mcfg.ffn_hidden() == 2138);
  // the breakdown at the dense-task preset (1369 output tokens)
  auto r32 = flops_forward({32, 832, 21}, mcfg, 1369);
  auto r256 = flops_forward({256, 832, 21}, mcfg, 1369);
  CHECK(r256.total() > r32.total());
  MESSAGE("paper preset honest MAC=2 totals: t=32 " << r32.gflops() << " GF, t=256 "
          << r256.gflops() << " GF, ratio " << r256.total() / r32.total());
}
