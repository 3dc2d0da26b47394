#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adaperceiver/attention.hpp"
#include "adaperceiver/matryoshka.hpp"
#include "adaperceiver/rng.hpp"
#include "adaperceiver/tensor.hpp"

namespace adaperceiver {

// Architecture plus the adaptivity sets. Defaults are the desk-scale toy
// configuration; paper_scale() carries the full-size hyperparameters used by
// the FLOPs model.
struct ModelConfig {
  int image_size = 28;
  int patch_size = 7;
  int in_channels = 1;
  int classes = 10;

  int d = 64;          // embedding dim
  int heads = 4;
  int depth = 6;       // L
  int max_latents = 32;  // N

  double ffn_ratio = 2.57;
  double rope_theta = 10000.0;
  double layer_scale_init = 1e-2;
  double norm_eps = 1e-5;
  bool embed_ffn = true;

  std::vector<int> token_grans = {4, 8, 16, 32};     // T
  std::vector<int> widths = {32, 48, 64};            // W
  std::vector<int> depths = {1, 2, 3, 4, 5, 6};      // D

  void validate() const;

  int patches_per_side() const { return image_size / patch_size; }
  int input_tokens() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch_size * patch_size * in_channels; }
  int ffn_hidden() const { return hidden_kept(d, ffn_ratio); }
  int head_dim() const { return d / heads; }

  static ModelConfig toy() { return ModelConfig{}; }
  static ModelConfig paper_scale();
};

// One runnable sub-network. tokens may lie outside the trained granularities
// (interpolation / RoPE extrapolation); width must be a trained width and
// layers must be within [1, depth].
struct ConfigTuple {
  int tokens = 0;
  int width = 0;
  int layers = 0;

  std::string str() const;
};

void validate_config(const ConfigTuple& cfg, const ModelConfig& mcfg);

template <typename S>
struct TrainingOutputsT {
  // (granularity, logits [B, classes]) for every t in T, in T order
  std::vector<std::pair<int, TensorT<S>>> token_outputs;
  struct DepthOutput {
    int layer;
    int sampled_gran;
    TensorT<S> logits;
  };
  // one entry per l in D, in D order
  std::vector<DepthOutput> depth_outputs;
};

template <typename S>
class AdaPerceiverT {
 public:
  AdaPerceiverT(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // Named parameters in a stable order (checkpoint + optimizer order).
  std::vector<std::pair<std::string, TensorT<S>*>> named_parameters();
  std::vector<std::pair<std::string, const TensorT<S>*>> named_parameters() const;
  Index param_count() const;
  // Parameters of the decode path (output cross-attention + head), for the
  // readout-share report.
  Index readout_param_count() const;

  void set_requires_grad(bool v);

  // [B, C, H, W] images -> [B, I, patch_dim] rows; pure data movement, the
  // result is a constant leaf.
  TensorT<S> patchify(const TensorT<S>& images) const;

  // Patch projection plus the full-width embedding FFN when enabled.
  TensorT<S> embed_inputs(TapeT<S>* tape, const TensorT<S>& patches) const;

  // Broadcast the learned latent to n rows and read the inputs in through
  // cross-attention (RoPE on the sink queries distinguishes the rows).
  TensorT<S> encode(TapeT<S>* tape, const TensorT<S>& input_tokens, int n_latents) const;

  // One pre-norm block; kept gives per-sample retained FFN hidden units
  // (masked path). When sliced != nullptr that fixed-width FFN is used
  // instead (inference path).
  struct SlicedFfn {
    MatLinearParamsT<S> up, down;
    int kept = 0;
  };
  TensorT<S> block_forward(TapeT<S>* tape, int layer, const TensorT<S>& z, const BlockMask& mask,
                           std::span<const int> kept, const SlicedFfn* sliced = nullptr) const;

  // Runs blocks 1..layers, capturing states after every l in D (respecting
  // capture_depths); returns the final state and the captures.
  struct BlockRun {
    TensorT<S> final_state;
    std::vector<std::pair<int, TensorT<S>>> captured;  // (layer, state)
  };
  BlockRun forward_blocks(TapeT<S>* tape, const TensorT<S>& z0, const BlockMask& mask,
                          std::span<const int> kept, int layers, bool capture_depths,
                          const SlicedFfn* sliced = nullptr) const;

  // Output token cross-attends to the given latents; pre-head norm + linear
  // head. latents: [B, t, d] -> logits [B, classes].
  TensorT<S> decode_readout(TapeT<S>* tape, const TensorT<S>& latents) const;

  // Single-pass training path: encoder once at N latents with per-sample
  // masked widths; readouts at every granularity and at every capture depth
  // with a sampled granularity t_l ~ Uniform(T) drawn from `rng`.
  TrainingOutputsT<S> forward_training(TapeT<S>* tape, const TensorT<S>& patches,
                                       const BlockMask& mask, std::span<const int> sample_widths,
                                       Rng& rng) const;

  // Inference path for one configuration: t latents, sliced width, l blocks.
  TensorT<S> forward_config(const TensorT<S>& patches, const ConfigTuple& cfg,
                            bool bidirectional = false) const;

  // Pieces used by the early-exit policy: encoder state then stepwise blocks.
  TensorT<S> encode_for_config(const TensorT<S>& patches, const ConfigTuple& cfg) const;
  SlicedFfn make_sliced_ffn(int layer, int width) const;
  BlockMask inference_mask(int tokens, bool bidirectional) const;

  const BlockMask& training_mask() const { return train_mask_; }

  // Layer parameters (exposed for tests).
  struct Block {
    TensorT<S> norm1_gain, norm1_bias;
    AttentionParamsT<S> attn;
    TensorT<S> scale1;  // layer scale, [d]
    TensorT<S> norm2_gain, norm2_bias;
    MatLinearParamsT<S> ffn_up, ffn_down;
    TensorT<S> scale2;
  };
  const Block& block(int i) const { return blocks_[static_cast<size_t>(i)]; }

 private:
  ModelConfig cfg_;
  BlockMask train_mask_;
  RopeParams rope_;

  TensorT<S> patch_weight_, patch_bias_;            // [d, patch_dim], [d]
  TensorT<S> embed_norm_gain_, embed_norm_bias_;    // embed FFN pre-norm
  MatLinearParamsT<S> embed_up_, embed_down_;       // full-width FFN
  TensorT<S> latent_;                               // [1, d] learned latent
  AttentionParamsT<S> encode_attn_;
  std::vector<Block> blocks_;
  TensorT<S> output_token_;                         // [1, d]
  AttentionParamsT<S> readout_attn_;
  TensorT<S> out_norm_gain_, out_norm_bias_;
  TensorT<S> head_weight_, head_bias_;              // [classes, d], [classes]
};

using AdaPerceiver = AdaPerceiverT<float>;

extern template struct TrainingOutputsT<float>;
extern template struct TrainingOutputsT<double>;
extern template class AdaPerceiverT<float>;
extern template class AdaPerceiverT<double>;

}  // namespace adaperceiver
