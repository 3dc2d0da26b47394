#pragma once

#include <vector>

#include "adaperceiver/tensor.hpp"

namespace adaperceiver {

struct RopeParams {
  int head_dim = 0;    // must be even
  double theta = 10000.0;  // base frequency, > 1
};

// Attention-permission structure over the latent sequence: tokens of a
// granularity group may attend to their own group and to smaller groups,
// never to larger ones. For granularities {2,4} the allow matrix is
//   1100 / 1100 / 1111 / 1111.
class BlockMask {
 public:
  // granularities must be strictly increasing positive integers.
  static BlockMask create(const std::vector<int>& granularities);
  static BlockMask all_true(int n);

  int size() const { return static_cast<int>(mask_.rows); }
  const std::vector<int>& granularities() const { return granularities_; }
  const MaskMatrix& matrix() const { return mask_; }
  bool at(Index i, Index j) const { return mask_.at(i, j); }

  // Mask for running t latent tokens: the granularities strictly below t,
  // plus t itself as the top group. For t in the original set this is the
  // restriction of the training mask to its leading t x t corner.
  BlockMask restricted_to(int t) const;

 private:
  std::vector<int> granularities_;
  MaskMatrix mask_;
};

// Rotates consecutive pairs (x[2i], x[2i+1]) of the last axis by
// positions[n] * theta^(-2i/head_dim); the second-to-last axis indexes
// positions. Composed from engine primitives, so it differentiates.
template <typename S>
TensorT<S> rope_rotate(TapeT<S>* tape, const TensorT<S>& x, const std::vector<int>& positions,
                       const RopeParams& params);

template <typename S>
struct AttentionParamsT {
  // weights stored [out, in], biases [out]
  TensorT<S> wq, bq, wk, bk, wv, bv, wo, bo;
  int heads = 1;
  int dim = 0;  // embedding dim, divisible by heads
};

// ViT-style multi-head self-attention with RoPE on Q and K (positions
// 0..N-1) and the block mask applied before softmax. x: [B, N, d].
template <typename S>
TensorT<S> block_masked_attention(TapeT<S>* tape, const TensorT<S>& x, const BlockMask& mask,
                                  const AttentionParamsT<S>& params, const RopeParams& rope);

// sink + MHA(Q = proj(sink), K/V = proj(source)). When rope_sink is given,
// RoPE is applied to the sink queries only (encode path). sink: [B, M, d],
// source: [B, Src, d].
template <typename S>
TensorT<S> cross_attention(TapeT<S>* tape, const TensorT<S>& sink, const TensorT<S>& source,
                           const AttentionParamsT<S>& params,
                           const RopeParams* rope_sink = nullptr);

using AttentionParams = AttentionParamsT<float>;

extern template TensorT<float> rope_rotate<float>(TapeT<float>*, const TensorT<float>&,
                                                  const std::vector<int>&, const RopeParams&);
extern template TensorT<double> rope_rotate<double>(TapeT<double>*, const TensorT<double>&,
                                                    const std::vector<int>&, const RopeParams&);
extern template TensorT<float> block_masked_attention<float>(TapeT<float>*, const TensorT<float>&,
                                                             const BlockMask&,
                                                             const AttentionParamsT<float>&,
                                                             const RopeParams&);
extern template TensorT<double> block_masked_attention<double>(TapeT<double>*,
                                                               const TensorT<double>&,
                                                               const BlockMask&,
                                                               const AttentionParamsT<double>&,
                                                               const RopeParams&);
extern template TensorT<float> cross_attention<float>(TapeT<float>*, const TensorT<float>&,
                                                      const TensorT<float>&,
                                                      const AttentionParamsT<float>&,
                                                      const RopeParams*);
extern template TensorT<double> cross_attention<double>(TapeT<double>*, const TensorT<double>&,
                                                        const TensorT<double>&,
                                                        const AttentionParamsT<double>&,
                                                        const RopeParams*);

}  // namespace adaperceiver
