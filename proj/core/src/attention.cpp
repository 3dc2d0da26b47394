#include "adaperceiver/attention.hpp"

#include <cmath>

namespace adaperceiver {

BlockMask BlockMask::create(const std::vector<int>& granularities) {
  if (granularities.empty()) throw EmptyGranularities("create_block_mask: no granularities");
  int prev = 0;
  for (int g : granularities) {
    if (g <= prev) {
      throw NonMonotoneGranularities("create_block_mask: granularities must be strictly "
                                     "increasing positive integers");
    }
    prev = g;
  }
  const int n = granularities.back();
  // group(k): index of the smallest granularity boundary >= k+1
  std::vector<int> group(static_cast<size_t>(n));
  {
    size_t gi = 0;
    for (int k = 0; k < n; ++k) {
      while (granularities[gi] < k + 1) ++gi;
      group[static_cast<size_t>(k)] = static_cast<int>(gi);
    }
  }
  BlockMask bm;
  bm.granularities_ = granularities;
  bm.mask_.rows = n;
  bm.mask_.cols = n;
  bm.mask_.allow.assign(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (group[static_cast<size_t>(j)] <= group[static_cast<size_t>(i)]) {
        bm.mask_.allow[static_cast<size_t>(i) * n + j] = 1;
      }
    }
  }
  return bm;
}

BlockMask BlockMask::all_true(int n) {
  if (n < 1) throw EmptyGranularities("all_true: n must be >= 1");
  BlockMask bm;
  bm.granularities_ = {n};
  bm.mask_ = MaskMatrix::all_true(n, n);
  return bm;
}

BlockMask BlockMask::restricted_to(int t) const {
  if (t < 1) throw EmptyGranularities("restricted_to: t must be >= 1");
  std::vector<int> grans;
  for (int g : granularities_) {
    if (g < t) grans.push_back(g);
  }
  grans.push_back(t);
  return create(grans);
}

template <typename S>
TensorT<S> rope_rotate(TapeT<S>* tape, const TensorT<S>& x, const std::vector<int>& positions,
                       const RopeParams& params) {
  if (params.head_dim % 2 != 0 || params.head_dim <= 0) {
    throw OddHeadDim("rope_rotate: head_dim " + std::to_string(params.head_dim));
  }
  if (x.rank() < 2) throw ShapeMismatch("rope_rotate: rank must be >= 2");
  const Index hd = x.dim(x.rank() - 1);
  const Index n = x.dim(x.rank() - 2);
  if (hd != params.head_dim) {
    throw ShapeMismatch("rope_rotate: last dim " + std::to_string(hd) + " != head_dim");
  }
  if (static_cast<Index>(positions.size()) != n) {
    throw ShapeMismatch("rope_rotate: need one position per token");
  }
  for (int p : positions) {
    if (p < 0) throw ShapeMismatch("rope_rotate: positions must be nonnegative");
  }
  const Index half = hd / 2;

  std::vector<S> cos_v(static_cast<size_t>(n * half)), sin_v(static_cast<size_t>(n * half));
  for (Index t = 0; t < n; ++t) {
    for (Index i = 0; i < half; ++i) {
      const double freq = std::pow(params.theta, -2.0 * static_cast<double>(i) /
                                                     static_cast<double>(hd));
      const double angle = static_cast<double>(positions[static_cast<size_t>(t)]) * freq;
      cos_v[static_cast<size_t>(t * half + i)] = static_cast<S>(std::cos(angle));
      sin_v[static_cast<size_t>(t * half + i)] = static_cast<S>(std::sin(angle));
    }
  }
  auto cos_c = TensorT<S>::from({n, half, 1}, std::move(cos_v));
  auto sin_c = TensorT<S>::from({n, half, 1}, std::move(sin_v));

  Shape pair_shape = x.shape();
  pair_shape.back() = half;
  pair_shape.push_back(2);
  auto xp = ops::reshape(tape, x, pair_shape);
  auto even = ops::slice(tape, xp, -1, 0, 1);
  auto odd = ops::slice(tape, xp, -1, 1, 1);
  auto cos_b = ops::broadcast_to(tape, cos_c, even.shape());
  auto sin_b = ops::broadcast_to(tape, sin_c, even.shape());
  auto even_rot = ops::sub(tape, ops::mul(tape, even, cos_b), ops::mul(tape, odd, sin_b));
  auto odd_rot = ops::add(tape, ops::mul(tape, even, sin_b), ops::mul(tape, odd, cos_b));
  auto rotated = ops::concat(tape, {even_rot, odd_rot}, -1);
  return ops::reshape(tape, rotated, x.shape());
}

namespace {

template <typename S>
TensorT<S> split_heads(TapeT<S>* tape, const TensorT<S>& x, int heads) {
  // [B, N, d] -> [B, H, N, d/H]
  const Index b = x.dim(0), n = x.dim(1), d = x.dim(2);
  auto r = ops::reshape(tape, x, {b, n, heads, d / heads});
  return ops::transpose(tape, r, 1, 2);
}

template <typename S>
TensorT<S> merge_heads(TapeT<S>* tape, const TensorT<S>& x) {
  // [B, H, N, hd] -> [B, N, d]
  const Index b = x.dim(0), h = x.dim(1), n = x.dim(2), hd = x.dim(3);
  auto t = ops::transpose(tape, x, 1, 2);
  return ops::reshape(tape, t, {b, n, h * hd});
}

std::vector<int> iota_positions(Index n) {
  std::vector<int> p(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) p[static_cast<size_t>(i)] = static_cast<int>(i);
  return p;
}

template <typename S>
void check_params(const TensorT<S>& x, const AttentionParamsT<S>& params) {
  if (x.rank() != 3) throw ShapeMismatch("attention: input must be [B, N, d]");
  if (x.dim(2) != params.dim) {
    throw ShapeMismatch("attention: embedding dim " + std::to_string(x.dim(2)) + " != " +
                        std::to_string(params.dim));
  }
  if (params.dim % params.heads != 0) {
    throw ShapeMismatch("attention: dim must be divisible by head count");
  }
}

}  // namespace

template <typename S>
TensorT<S> block_masked_attention(TapeT<S>* tape, const TensorT<S>& x, const BlockMask& mask,
                                  const AttentionParamsT<S>& params, const RopeParams& rope) {
  check_params(x, params);
  const Index n = x.dim(1);
  if (n != mask.size()) {
    throw ShapeMismatch("block_masked_attention: " + std::to_string(n) + " tokens vs mask size " +
                        std::to_string(mask.size()));
  }
  const int hd = params.dim / params.heads;
  if (rope.head_dim != hd) throw ShapeMismatch("block_masked_attention: rope head_dim mismatch");
  const auto positions = iota_positions(n);

  auto q = split_heads(tape, ops::linear(tape, x, params.wq, params.bq), params.heads);
  auto k = split_heads(tape, ops::linear(tape, x, params.wk, params.bk), params.heads);
  auto v = split_heads(tape, ops::linear(tape, x, params.wv, params.bv), params.heads);
  q = rope_rotate(tape, q, positions, rope);
  k = rope_rotate(tape, k, positions, rope);

  auto scores = ops::matmul(tape, q, ops::transpose(tape, k, -2, -1));
  scores = ops::scale(tape, scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd))));
  auto probs = ops::masked_softmax(tape, scores, mask.matrix());
  auto ctx = merge_heads(tape, ops::matmul(tape, probs, v));
  return ops::linear(tape, ctx, params.wo, params.bo);
}

template <typename S>
TensorT<S> cross_attention(TapeT<S>* tape, const TensorT<S>& sink, const TensorT<S>& source,
                           const AttentionParamsT<S>& params, const RopeParams* rope_sink) {
  check_params(sink, params);
  check_params(source, params);
  if (sink.dim(0) != source.dim(0)) throw ShapeMismatch("cross_attention: batch mismatch");
  if (source.dim(1) < 1) throw ShapeMismatch("cross_attention: source must have >= 1 token");
  const Index m = sink.dim(1);
  const Index src = source.dim(1);
  const int hd = params.dim / params.heads;

  auto q = split_heads(tape, ops::linear(tape, sink, params.wq, params.bq), params.heads);
  if (rope_sink != nullptr) {
    if (rope_sink->head_dim != hd) throw ShapeMismatch("cross_attention: rope head_dim mismatch");
    q = rope_rotate(tape, q, iota_positions(m), *rope_sink);
  }
  auto k = split_heads(tape, ops::linear(tape, source, params.wk, params.bk), params.heads);
  auto v = split_heads(tape, ops::linear(tape, source, params.wv, params.bv), params.heads);

  auto scores = ops::matmul(tape, q, ops::transpose(tape, k, -2, -1));
  scores = ops::scale(tape, scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd))));
  auto probs = ops::masked_softmax(tape, scores, MaskMatrix::all_true(m, src));
  auto ctx = merge_heads(tape, ops::matmul(tape, probs, v));
  auto out = ops::linear(tape, ctx, params.wo, params.bo);
  return ops::add(tape, sink, out);
}

template TensorT<float> rope_rotate<float>(TapeT<float>*, const TensorT<float>&,
                                           const std::vector<int>&, const RopeParams&);
template TensorT<double> rope_rotate<double>(TapeT<double>*, const TensorT<double>&,
                                             const std::vector<int>&, const RopeParams&);
template TensorT<float> block_masked_attention<float>(TapeT<float>*, const TensorT<float>&,
                                                      const BlockMask&,
                                                      const AttentionParamsT<float>&,
                                                      const RopeParams&);
template TensorT<double> block_masked_attention<double>(TapeT<double>*, const TensorT<double>&,
                                                        const BlockMask&,
                                                        const AttentionParamsT<double>&,
                                                        const RopeParams&);
template TensorT<float> cross_attention<float>(TapeT<float>*, const TensorT<float>&,
                                               const TensorT<float>&,
                                               const AttentionParamsT<float>&, const RopeParams*);
template TensorT<double> cross_attention<double>(TapeT<double>*, const TensorT<double>&,
                                                 const TensorT<double>&,
                                                 const AttentionParamsT<double>&,
                                                 const RopeParams*);

}  // namespace adaperceiver
