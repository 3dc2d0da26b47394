#include "adaperceiver/costmodel.hpp"

namespace adaperceiver {

FlopsReport flops_forward(const ConfigTuple& cfg, const ModelConfig& mcfg, int n_output_tokens,
                          int n_readouts, const CostConvention& conv) {
  validate_config(cfg, mcfg);
  if (n_output_tokens < 1 || n_readouts < 0) {
    throw InvalidConfig("flops_forward: output tokens and readouts must be positive");
  }
  const double t = cfg.tokens;
  const double l = cfg.layers;
  const double d = mcfg.d;
  const double heads = mcfg.heads;
  const double kept = hidden_kept(cfg.width, mcfg.ffn_ratio);
  const double i_tok = mcfg.input_tokens();
  const double m_tok = n_output_tokens;
  const double h_full = mcfg.ffn_hidden();
  const double fpm = conv.flops_per_mac;

  FlopsReport r;
  r.blocks = cfg.layers;
  r.readouts = n_readouts;

  if (conv.include_patch_embed) {
    r.patch_embed = fpm * i_tok * mcfg.patch_dim() * d;
    if (mcfg.embed_ffn) {
      r.patch_embed += conv.norm_per_element * i_tok * d;
      r.patch_embed += fpm * 2.0 * i_tok * d * h_full;
      r.patch_embed += conv.gelu_per_element * i_tok * h_full;
      r.patch_embed += conv.ew_per_element * i_tok * d;  // residual
    }
  }

  // encode: Q from t latents (with RoPE), K/V from inputs, residual
  r.encode = fpm * (t * d * d              // Q
                    + 2.0 * i_tok * d * d  // K, V
                    + 2.0 * t * i_tok * d  // scores + AV
                    + t * d * d);          // output projection
  r.encode += conv.rope_per_element * t * d;
  r.encode += conv.softmax_per_element * heads * t * i_tok;
  r.encode += conv.ew_per_element * t * d;

  // per block: pre-norm attention + pre-norm Matryoshka FFN, both with layer
  // scale and a residual
  const double attn_block = fpm * (4.0 * t * d * d + 2.0 * t * t * d)  // QKV+out, scores+AV
                            + conv.rope_per_element * 2.0 * t * d      // RoPE on Q and K
                            + conv.softmax_per_element * heads * t * t
                            + conv.norm_per_element * t * d
                            + conv.ew_per_element * 2.0 * t * d;  // scale + residual
  const double ffn_block = fpm * 2.0 * t * d * kept
                           + conv.gelu_per_element * t * kept
                           + conv.norm_per_element * t * d
                           + conv.ew_per_element * 2.0 * t * d;
  r.block_attention = l * attn_block;
  r.block_ffn = l * ffn_block;

  // one readout: output tokens cross-attend to t latents, residual, pre-head norm
  const double readout_one = fpm * (2.0 * m_tok * d * d   // Q, output projection
                                    + 2.0 * t * d * d     // K, V
                                    + 2.0 * m_tok * t * d)  // scores + AV
                             + conv.softmax_per_element * heads * m_tok * t
                             + conv.ew_per_element * m_tok * d
                             + conv.norm_per_element * m_tok * d;
  r.readout = n_readouts * readout_one;

  if (conv.include_head) {
    r.head = fpm * m_tok * d * mcfg.classes * static_cast<double>(n_readouts);
  }
  return r;
}

}  // namespace adaperceiver
