#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>

#include "adaperceiver/gradcheck.hpp"
#include "adaperceiver/matryoshka.hpp"
#include "adaperceiver/rng.hpp"
#include "test_util.hpp"

using namespace adaperceiver;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

template <typename S>
MatLinearParamsT<S> random_params(Index out, Index in, Rng& rng) {
  MatLinearParamsT<S> p;
  p.weight = random_tensor<S>({out, in}, rng, false, 0.5);
  p.bias = random_tensor<S>({out}, rng, false, 0.5);
  return p;
}

}  // namespace

TEST_CASE("hidden_kept mapping") {
  // toy widths at d=64, ratio 2.57
  CHECK(hidden_kept(64, 2.57) == 164);
  CHECK(hidden_kept(48, 2.57) == 123);
  CHECK(hidden_kept(32, 2.57) == 82);
  // paper widths at d=832
  CHECK(hidden_kept(832, 2.57) == 2138);
  CHECK(hidden_kept(624, 2.57) == 1604);
  CHECK(hidden_kept(416, 2.57) == 1069);
  WidthSpec w{48, 2.57};
  CHECK(w.hidden_kept() == 123);
}

TEST_CASE("mat_linear examples") {
  Rng rng(3);
  // full dimension equals the plain layer
  auto p = random_params<double>(3, 4, rng);
  auto x = random_tensor<double>({2, 5, 4}, rng);
  std::array<int, 2> full{4, 4};
  auto masked = mat_linear<double>(nullptr, x, p, full, /*mat_input=*/true);
  auto plain = ops::linear<double>(nullptr, x, p.weight, p.bias);
  CHECK(max_abs_diff(masked, plain) == 0.0);

  // hand multiply: weight [[1,1]], x=[3,5], keep one input feature
  MatLinearParamsT<double> tiny;
  tiny.weight = Tensor64::from({1, 2}, {1, 1});
  auto x2 = Tensor64::from({1, 1, 2}, {3, 5});
  std::array<int, 1> one{1};
  auto y = mat_linear<double>(nullptr, x2, tiny, one, /*mat_input=*/true);
  CHECK(y.item() == 3.0);

  // masking outputs zeroes the feature and its bias
  MatLinearParamsT<double> outp;
  outp.weight = Tensor64::from({2, 2}, {1, 0, 0, 1});
  outp.bias = Tensor64::from({2}, {10, 20});
  auto y2 = mat_linear<double>(nullptr, x2, outp, one, /*mat_input=*/false);
  CHECK(y2.at({0, 0, 0}) == 13.0);
  CHECK(y2.at({0, 0, 1}) == 0.0);

  std::array<int, 1> oob{3};
  CHECK_THROWS_AS(mat_linear<double>(nullptr, x2, tiny, oob, true), MatDimOutOfRange);
  std::array<int, 1> zero{0};
  CHECK_THROWS_AS(mat_linear<double>(nullptr, x2, tiny, zero, true), MatDimOutOfRange);
}

TEST_CASE("mat_ffn equals the sliced FFN") {
  Rng rng(5);
  const Index d = 6, h = 12;
  auto up = random_params<double>(h, d, rng);
  auto down = random_params<double>(d, h, rng);
  auto x = random_tensor<double>({2, 3, d}, rng);

  // full width is the plain FFN
  std::vector<int> kept_full{static_cast<int>(h), static_cast<int>(h)};
  auto full = mat_ffn<double>(nullptr, x, up, down, kept_full);
  auto plain = ops::linear<double>(nullptr, ops::gelu<double>(nullptr,
                  ops::linear<double>(nullptr, x, up.weight, up.bias)), down.weight, down.bias);
  CHECK(max_abs_diff(full, plain) == 0.0);

  // masked equals an FFN built from the first k hidden units
  for (int k : {2, 5, 9, 12}) {
    std::vector<int> kept{k, k};
    auto masked = mat_ffn<double>(nullptr, x, up, down, kept);
    auto up_s = slice_for_inference<double>(up, k, /*input_side=*/false);
    auto down_s = slice_for_inference<double>(down, k, /*input_side=*/true);
    CHECK(up_s.weight.dim(0) == k);
    CHECK(down_s.weight.dim(1) == k);
    std::vector<int> kfull{k, k};
    auto sliced = ops::linear<double>(nullptr, ops::gelu<double>(nullptr,
                    ops::linear<double>(nullptr, x, up_s.weight, up_s.bias)),
                    down_s.weight, down_s.bias);
    CHECK(max_abs_diff(masked, sliced) <= 1e-6);
  }
}

TEST_CASE("slice_for_inference at full width is the identity") {
  Rng rng(7);
  auto p = random_params<double>(4, 6, rng);
  auto s = slice_for_inference<double>(p, 4, /*input_side=*/false);
  CHECK(s.weight.value() == p.weight.value());
  CHECK(s.bias.value() == p.bias.value());
  auto si = slice_for_inference<double>(p, 6, /*input_side=*/true);
  CHECK(si.weight.value() == p.weight.value());
  CHECK_THROWS_AS(slice_for_inference<double>(p, 7, true), MatDimOutOfRange);
}

TEST_CASE("per-sample independence in a mixed-width batch") {
  Rng rng(11);
  const Index d = 6, h = 12;
  auto up = random_params<double>(h, d, rng);
  auto down = random_params<double>(d, h, rng);
  auto x = random_tensor<double>({3, 4, d}, rng);
  std::vector<int> mixed{3, 7, 12};
  auto out = mat_ffn<double>(nullptr, x, up, down, mixed);
  for (Index i = 0; i < 3; ++i) {
    auto xi = ops::slice<double>(nullptr, x, 0, i, 1);
    std::vector<int> ki{mixed[static_cast<size_t>(i)]};
    auto oi = mat_ffn<double>(nullptr, xi, up, down, ki);
    auto outi = ops::slice<double>(nullptr, out, 0, i, 1);
    CHECK(max_abs_diff(oi, outi) == 0.0);
  }
}

TEST_CASE("gradient sparsity beyond the kept width") {
  Rng rng(13);
  const Index d = 5, h = 10;
  auto up = random_params<double>(h, d, rng);
  auto down = random_params<double>(d, h, rng);
  up.weight.set_requires_grad(true);
  up.bias.set_requires_grad(true);
  down.weight.set_requires_grad(true);
  down.bias.set_requires_grad(true);
  auto x = random_tensor<double>({2, 3, d}, rng, true);

  const int k = 4;
  std::vector<int> kept{k, k};
  Tape64 tape;
  auto y = mat_ffn<double>(&tape, x, up, down, kept);
  auto loss = ops::reduce_sum<double>(&tape, ops::mul<double>(&tape, y, y));
  tape.backward(loss);

  // up rows >= k: weight grad and bias grad exactly zero
  for (Index r = k; r < h; ++r) {
    CHECK(up.bias.grad()[static_cast<size_t>(r)] == 0.0);
    for (Index c = 0; c < d; ++c) {
      CHECK(up.weight.grad()[static_cast<size_t>(r * d + c)] == 0.0);
    }
  }
  // down columns >= k exactly zero
  for (Index r = 0; r < d; ++r) {
    for (Index c = k; c < h; ++c) {
      CHECK(down.weight.grad()[static_cast<size_t>(r * h + c)] == 0.0);
    }
  }
  // and something below the cut is nonzero
  double nz = 0;
  for (Index r = 0; r < k; ++r)
    for (Index c = 0; c < d; ++c) nz += std::abs(up.weight.grad()[static_cast<size_t>(r * d + c)]);
  CHECK(nz > 0.0);
}

TEST_CASE("nesting: smaller widths are prefixes of larger ones") {
  Rng rng(17);
  auto up = random_params<double>(12, 6, rng);
  for (int small = 2; small <= 10; small += 4) {
    auto s_small = slice_for_inference<double>(up, small, false);
    auto s_big = slice_for_inference<double>(up, 12, false);
    for (Index i = 0; i < small * 6; ++i) {
      CHECK(s_small.weight.value()[static_cast<size_t>(i)] ==
            s_big.weight.value()[static_cast<size_t>(i)]);
    }
  }
}

TEST_CASE("mat_ffn differentiates") {
  Rng rng(19);
  const Index d = 4, h = 8;
  auto up = random_params<double>(h, d, rng);
  auto down = random_params<double>(d, h, rng);
  up.weight.set_requires_grad(true);
  down.weight.set_requires_grad(true);
  auto x = random_tensor<double>({2, 2, d}, rng, true);
  std::vector<int> kept{3, 8};
  auto report = finite_diff_check<double>(
      [&](Tape64* t) {
        auto y = mat_ffn<double>(t, x, up, down, kept);
        return ops::reduce_mean<double>(t, ops::mul<double>(t, y, y));
      },
      {x, up.weight, down.weight}, 1e-5);
  CHECK(report.max_rel_err < 1e-6);
}
