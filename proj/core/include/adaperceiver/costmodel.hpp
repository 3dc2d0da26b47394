#pragma once

#include "adaperceiver/model.hpp"

namespace adaperceiver {

// Counting convention for the analytic cost model. One multiply-accumulate
// is 2 FLOPs; softmax / layer norm / GeLU / RoPE contribute fixed per-element
// costs (max+sub+exp+add+div for softmax, the moment pass for norm, the tanh
// polynomial for GeLU, the pair rotation for RoPE). Attention is counted at
// the executed sequence length; the block mask does not reduce the count.
struct CostConvention {
  double flops_per_mac = 2.0;
  double softmax_per_element = 5.0;
  double norm_per_element = 8.0;
  double gelu_per_element = 14.0;
  double rope_per_element = 6.0;
  double ew_per_element = 1.0;  // residual adds, layer-scale multiplies
  bool include_patch_embed = true;  // counted inside "encoder-only" totals
  bool include_head = true;
};

struct FlopsReport {
  double patch_embed = 0.0;      // patch projection + embedding FFN
  double encode = 0.0;           // input -> latent cross-attention
  double block_attention = 0.0;  // over executed blocks
  double block_ffn = 0.0;        // over executed blocks, at hidden_kept(w)
  double readout = 0.0;          // all performed output readouts
  double head = 0.0;
  int blocks = 0;
  int readouts = 0;

  double total() const {
    return patch_embed + encode + block_attention + block_ffn + readout + head;
  }
  double per_block_attention() const { return blocks ? block_attention / blocks : 0.0; }
  double per_block_ffn() const { return blocks ? block_ffn / blocks : 0.0; }
  double gflops() const { return total() / 1e9; }
};

// Forward cost of one configuration. n_readouts > 1 charges the additional
// intermediate readouts an early-exit run performs; every readout is priced
// identically (output tokens against t latents), so an exit at depth l with
// k readouts costs exactly the fixed-depth-l run plus (k-1) readout
// increments.
FlopsReport flops_forward(const ConfigTuple& cfg, const ModelConfig& mcfg, int n_output_tokens,
                          int n_readouts = 1, const CostConvention& conv = {});

}  // namespace adaperceiver
