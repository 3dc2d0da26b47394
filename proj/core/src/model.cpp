#include "adaperceiver/model.hpp"

#include <algorithm>
#include <cmath>

namespace adaperceiver {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidConfig(msg);
}

bool strictly_increasing(const std::vector<int>& v) {
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] <= v[i - 1]) return false;
  return true;
}

}  // namespace

void ModelConfig::validate() const {
  require(image_size > 0 && patch_size > 0 && image_size % patch_size == 0,
          "image_size must be divisible by patch_size");
  require(in_channels >= 1 && classes >= 1, "channels and classes must be positive");
  require(d >= 1 && heads >= 1 && d % heads == 0, "d must be divisible by heads");
  require((d / heads) % 2 == 0, "head_dim must be even for RoPE");
  require(depth >= 1 && max_latents >= 1, "depth and max_latents must be positive");
  require(ffn_ratio > 0 && rope_theta > 1.0, "ffn_ratio > 0 and rope_theta > 1 required");
  require(!token_grans.empty() && strictly_increasing(token_grans) && token_grans.front() >= 1,
          "token granularities must be strictly increasing positive integers");
  require(token_grans.back() == max_latents, "max granularity must equal max_latents");
  require(!widths.empty() && strictly_increasing(widths) && widths.front() >= 1,
          "widths must be strictly increasing positive integers");
  require(widths.back() == d, "max width must equal the embedding dim");
  require(hidden_kept(widths.front(), ffn_ratio) >= 1, "smallest width keeps no hidden units");
  require(!depths.empty() && strictly_increasing(depths) && depths.front() >= 1 &&
              depths.back() <= depth,
          "depth set must lie within [1, depth]");
}

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.image_size = 224;
  c.patch_size = 14;
  c.in_channels = 3;
  c.classes = 1000;
  c.d = 832;
  c.heads = 13;
  c.depth = 21;
  c.max_latents = 256;
  c.ffn_ratio = 2.57;
  c.rope_theta = 10000.0;
  c.layer_scale_init = 1e-5;
  c.token_grans = {32, 64, 96, 128, 192, 256};
  c.widths = {416, 624, 832};
  c.depths.clear();
  for (int l = 1; l <= 21; ++l) c.depths.push_back(l);
  return c;
}

std::string ConfigTuple::str() const {
  return "(t=" + std::to_string(tokens) + ",w=" + std::to_string(width) +
         ",l=" + std::to_string(layers) + ")";
}

void validate_config(const ConfigTuple& cfg, const ModelConfig& mcfg) {
  if (cfg.tokens < 1) throw InvalidConfig("config: tokens must be >= 1");
  if (std::find(mcfg.widths.begin(), mcfg.widths.end(), cfg.width) == mcfg.widths.end()) {
    throw InvalidConfig("config: width " + std::to_string(cfg.width) + " not in the width set");
  }
  if (cfg.layers < 1 || cfg.layers > mcfg.depth) {
    throw InvalidConfig("config: layers " + std::to_string(cfg.layers) + " outside [1, " +
                        std::to_string(mcfg.depth) + "]");
  }
}

// ---------------------------------------------------------------------------

template <typename S>
AdaPerceiverT<S>::AdaPerceiverT(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  train_mask_ = BlockMask::create(cfg_.token_grans);
  rope_ = RopeParams{cfg_.head_dim(), cfg_.rope_theta};

  Rng rng(seed);
  const Index d = cfg_.d;
  const Index h = cfg_.ffn_hidden();

  auto trunc = [&](Shape shape) {
    std::vector<S> w(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : w) v = static_cast<S>(rng.truncated_normal(0.02));
    return TensorT<S>::from(std::move(shape), std::move(w), true);
  };
  auto zeros = [&](Shape shape) { return TensorT<S>::zeros(std::move(shape), true); };
  auto ones = [&](Shape shape) { return TensorT<S>::full(std::move(shape), S(1), true); };
  auto make_attn = [&]() {
    AttentionParamsT<S> p;
    p.heads = cfg_.heads;
    p.dim = static_cast<int>(d);
    p.wq = trunc({d, d});
    p.bq = zeros({d});
    p.wk = trunc({d, d});
    p.bk = zeros({d});
    p.wv = trunc({d, d});
    p.bv = zeros({d});
    p.wo = trunc({d, d});
    p.bo = zeros({d});
    return p;
  };

  patch_weight_ = trunc({d, cfg_.patch_dim()});
  patch_bias_ = zeros({d});
  if (cfg_.embed_ffn) {
    embed_norm_gain_ = ones({d});
    embed_norm_bias_ = zeros({d});
    embed_up_.weight = trunc({h, d});
    embed_up_.bias = zeros({h});
    embed_down_.weight = trunc({d, h});
    embed_down_.bias = zeros({d});
  }
  latent_ = trunc({1, d});
  encode_attn_ = make_attn();
  blocks_.resize(static_cast<size_t>(cfg_.depth));
  for (auto& b : blocks_) {
    b.norm1_gain = ones({d});
    b.norm1_bias = zeros({d});
    b.attn = make_attn();
    b.scale1 = TensorT<S>::full({d}, static_cast<S>(cfg_.layer_scale_init), true);
    b.norm2_gain = ones({d});
    b.norm2_bias = zeros({d});
    b.ffn_up.weight = trunc({h, d});
    b.ffn_up.bias = zeros({h});
    b.ffn_down.weight = trunc({d, h});
    b.ffn_down.bias = zeros({d});
    b.scale2 = TensorT<S>::full({d}, static_cast<S>(cfg_.layer_scale_init), true);
  }
  output_token_ = trunc({1, d});
  readout_attn_ = make_attn();
  out_norm_gain_ = ones({d});
  out_norm_bias_ = zeros({d});
  head_weight_ = trunc({cfg_.classes, d});
  head_bias_ = zeros({cfg_.classes});
}

template <typename S>
std::vector<std::pair<std::string, TensorT<S>*>> AdaPerceiverT<S>::named_parameters() {
  std::vector<std::pair<std::string, TensorT<S>*>> out;
  auto add = [&](const std::string& name, TensorT<S>& t) {
    if (t.defined()) out.emplace_back(name, &t);
  };
  auto add_attn = [&](const std::string& p, AttentionParamsT<S>& a) {
    add(p + ".wq", a.wq);
    add(p + ".bq", a.bq);
    add(p + ".wk", a.wk);
    add(p + ".bk", a.bk);
    add(p + ".wv", a.wv);
    add(p + ".bv", a.bv);
    add(p + ".wo", a.wo);
    add(p + ".bo", a.bo);
  };
  add("patch.weight", patch_weight_);
  add("patch.bias", patch_bias_);
  if (cfg_.embed_ffn) {
    add("embed_ffn.norm.gain", embed_norm_gain_);
    add("embed_ffn.norm.bias", embed_norm_bias_);
    add("embed_ffn.up.weight", embed_up_.weight);
    add("embed_ffn.up.bias", embed_up_.bias);
    add("embed_ffn.down.weight", embed_down_.weight);
    add("embed_ffn.down.bias", embed_down_.bias);
  }
  add("latent", latent_);
  add_attn("encode", encode_attn_);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    auto& b = blocks_[i];
    add(p + ".norm1.gain", b.norm1_gain);
    add(p + ".norm1.bias", b.norm1_bias);
    add_attn(p + ".attn", b.attn);
    add(p + ".scale1", b.scale1);
    add(p + ".norm2.gain", b.norm2_gain);
    add(p + ".norm2.bias", b.norm2_bias);
    add(p + ".ffn.up.weight", b.ffn_up.weight);
    add(p + ".ffn.up.bias", b.ffn_up.bias);
    add(p + ".ffn.down.weight", b.ffn_down.weight);
    add(p + ".ffn.down.bias", b.ffn_down.bias);
    add(p + ".scale2", b.scale2);
  }
  add("output_token", output_token_);
  add_attn("readout", readout_attn_);
  add("out_norm.gain", out_norm_gain_);
  add("out_norm.bias", out_norm_bias_);
  add("head.weight", head_weight_);
  add("head.bias", head_bias_);
  return out;
}

template <typename S>
std::vector<std::pair<std::string, const TensorT<S>*>> AdaPerceiverT<S>::named_parameters() const {
  auto mut = const_cast<AdaPerceiverT<S>*>(this)->named_parameters();
  std::vector<std::pair<std::string, const TensorT<S>*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(n, t);
  return out;
}

template <typename S>
Index AdaPerceiverT<S>::param_count() const {
  Index n = 0;
  for (const auto& [name, t] : named_parameters()) n += t->numel();
  return n;
}

template <typename S>
Index AdaPerceiverT<S>::readout_param_count() const {
  Index n = output_token_.numel() + out_norm_gain_.numel() + out_norm_bias_.numel() +
            head_weight_.numel() + head_bias_.numel();
  for (const auto* t : {&readout_attn_.wq, &readout_attn_.bq, &readout_attn_.wk,
                        &readout_attn_.bk, &readout_attn_.wv, &readout_attn_.bv,
                        &readout_attn_.wo, &readout_attn_.bo}) {
    n += t->numel();
  }
  return n;
}

template <typename S>
void AdaPerceiverT<S>::set_requires_grad(bool v) {
  for (auto& [name, t] : named_parameters()) t->set_requires_grad(v);
}

template <typename S>
TensorT<S> AdaPerceiverT<S>::patchify(const TensorT<S>& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels ||
      images.dim(2) != cfg_.image_size || images.dim(3) != cfg_.image_size) {
    throw BadImageShape("patchify: expected [B, " + std::to_string(cfg_.in_channels) + ", " +
                        std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) +
                        "], got " + shape_str(images.shape()));
  }
  const Index b = images.dim(0);
  const Index p = cfg_.patch_size;
  const Index side = cfg_.patches_per_side();
  const Index c = cfg_.in_channels;
  const Index hw = cfg_.image_size;
  const Index pd = cfg_.patch_dim();
  std::vector<S> out(static_cast<size_t>(b * side * side * pd));
  const S* src = images.value().data();
  // patch rows scan row-major over (py, px); features are (channel, dy, dx)
  for (Index bi = 0; bi < b; ++bi) {
    for (Index py = 0; py < side; ++py) {
      for (Index px = 0; px < side; ++px) {
        S* dst = out.data() + ((bi * side * side) + py * side + px) * pd;
        for (Index ch = 0; ch < c; ++ch) {
          for (Index dy = 0; dy < p; ++dy) {
            const S* row = src + ((bi * c + ch) * hw + (py * p + dy)) * hw + px * p;
            std::copy(row, row + p, dst + (ch * p + dy) * p);
          }
        }
      }
    }
  }
  return TensorT<S>::from({b, side * side, pd}, std::move(out));
}

template <typename S>
TensorT<S> AdaPerceiverT<S>::embed_inputs(TapeT<S>* tape, const TensorT<S>& patches) const {
  auto x = ops::linear(tape, patches, patch_weight_, patch_bias_);
  if (cfg_.embed_ffn) {
    auto hn = ops::layer_norm(tape, x, embed_norm_gain_, embed_norm_bias_,
                              static_cast<S>(cfg_.norm_eps));
    auto up = ops::linear(tape, hn, embed_up_.weight, embed_up_.bias);
    auto act = ops::gelu(tape, up);
    auto down = ops::linear(tape, act, embed_down_.weight, embed_down_.bias);
    x = ops::add(tape, x, down);
  }
  return x;
}

template <typename S>
TensorT<S> AdaPerceiverT<S>::encode(TapeT<S>* tape, const TensorT<S>& input_tokens,
                                    int n_latents) const {
  if (n_latents < 1) throw InvalidConfig("encode: n_latents must be >= 1");
  const Index b = input_tokens.dim(0);
  auto z = ops::broadcast_to(tape, latent_, {b, static_cast<Index>(n_latents), cfg_.d});
  return cross_attention(tape, z, input_tokens, encode_attn_, &rope_);
}

template <typename S>
TensorT<S> AdaPerceiverT<S>::block_forward(TapeT<S>* tape, int layer, const TensorT<S>& z,
                                           const BlockMask& mask, std::span<const int> kept,
                                           const SlicedFfn* sliced) const {
  const auto& b = blocks_[static_cast<size_t>(layer)];
  auto h1 = ops::layer_norm(tape, z, b.norm1_gain, b.norm1_bias, static_cast<S>(cfg_.norm_eps));
  auto attn = block_masked_attention(tape, h1, mask, b.attn, rope_);
  attn = ops::mul(tape, attn, ops::broadcast_to(tape, b.scale1, attn.shape()));
  auto z1 = ops::add(tape, z, attn);

  auto h2 = ops::layer_norm(tape, z1, b.norm2_gain, b.norm2_bias, static_cast<S>(cfg_.norm_eps));
  TensorT<S> f;
  if (sliced != nullptr) {
    auto up = ops::linear(tape, h2, sliced->up.weight, sliced->up.bias);
    f = ops::linear(tape, ops::gelu(tape, up), sliced->down.weight, sliced->down.bias);
  } else {
    f = mat_ffn(tape, h2, b.ffn_up, b.ffn_down, kept);
  }
  f = ops::mul(tape, f, ops::broadcast_to(tape, b.scale2, f.shape()));
  return ops::add(tape, z1, f);
}

template <typename S>
typename AdaPerceiverT<S>::BlockRun AdaPerceiverT<S>::forward_blocks(
    TapeT<S>* tape, const TensorT<S>& z0, const BlockMask& mask, std::span<const int> kept,
    int layers, bool capture_depths, const SlicedFfn* sliced) const {
  BlockRun run;
  auto z = z0;
  for (int l = 1; l <= layers; ++l) {
    z = block_forward(tape, l - 1, z, mask, kept, sliced);
    if (capture_depths &&
        std::find(cfg_.depths.begin(), cfg_.depths.end(), l) != cfg_.depths.end()) {
      run.captured.emplace_back(l, z);
    }
  }
  run.final_state = z;
  return run;
}

template <typename S>
TensorT<S> AdaPerceiverT<S>::decode_readout(TapeT<S>* tape, const TensorT<S>& latents) const {
  const Index b = latents.dim(0);
  auto o = ops::broadcast_to(tape, output_token_, {b, Index{1}, cfg_.d});
  auto r = cross_attention(tape, o, latents, readout_attn_, nullptr);
  auto n = ops::layer_norm(tape, r, out_norm_gain_, out_norm_bias_, static_cast<S>(cfg_.norm_eps));
  auto logits = ops::linear(tape, n, head_weight_, head_bias_);
  return ops::reshape(tape, logits, {b, static_cast<Index>(cfg_.classes)});
}

template <typename S>
TrainingOutputsT<S> AdaPerceiverT<S>::forward_training(TapeT<S>* tape, const TensorT<S>& patches,
                                                       const BlockMask& mask,
                                                       std::span<const int> sample_widths,
                                                       Rng& rng) const {
  const Index b = patches.dim(0);
  if (static_cast<Index>(sample_widths.size()) != b) {
    throw ShapeMismatch("forward_training: need one width per sample");
  }
  std::vector<int> kept(static_cast<size_t>(b));
  for (Index i = 0; i < b; ++i) {
    kept[static_cast<size_t>(i)] = hidden_kept(sample_widths[static_cast<size_t>(i)], cfg_.ffn_ratio);
  }

  auto tokens = embed_inputs(tape, patches);
  auto z0 = encode(tape, tokens, cfg_.max_latents);
  auto run = forward_blocks(tape, z0, mask, kept, cfg_.depth, /*capture_depths=*/true);

  TrainingOutputsT<S> out;
  for (int t : cfg_.token_grans) {
    auto zt = ops::slice(tape, run.final_state, 1, 0, t);
    out.token_outputs.emplace_back(t, decode_readout(tape, zt));
  }
  // depth readouts draw t_l ~ Uniform(T) in D order, directly after the width
  // draws in the training RNG stream
  for (const auto& [layer, zl] : run.captured) {
    const int tl = cfg_.token_grans[rng.uniform_int(cfg_.token_grans.size())];
    auto ztl = ops::slice(tape, zl, 1, 0, tl);
    out.depth_outputs.push_back({layer, tl, decode_readout(tape, ztl)});
  }
  return out;
}

template <typename S>
typename AdaPerceiverT<S>::SlicedFfn AdaPerceiverT<S>::make_sliced_ffn(int layer, int width) const {
  const auto& b = blocks_[static_cast<size_t>(layer)];
  SlicedFfn s;
  s.kept = hidden_kept(width, cfg_.ffn_ratio);
  s.up = slice_for_inference(b.ffn_up, s.kept, /*input_side=*/false);
  s.down = slice_for_inference(b.ffn_down, s.kept, /*input_side=*/true);
  return s;
}

template <typename S>
BlockMask AdaPerceiverT<S>::inference_mask(int tokens, bool bidirectional) const {
  return bidirectional ? BlockMask::all_true(tokens) : train_mask_.restricted_to(tokens);
}

template <typename S>
TensorT<S> AdaPerceiverT<S>::encode_for_config(const TensorT<S>& patches,
                                               const ConfigTuple& cfg) const {
  validate_config(cfg, cfg_);
  auto tokens = embed_inputs(nullptr, patches);
  return encode(nullptr, tokens, cfg.tokens);
}

template <typename S>
TensorT<S> AdaPerceiverT<S>::forward_config(const TensorT<S>& patches, const ConfigTuple& cfg,
                                            bool bidirectional) const {
  validate_config(cfg, cfg_);
  auto z = encode_for_config(patches, cfg);
  const auto mask = inference_mask(cfg.tokens, bidirectional);
  for (int l = 0; l < cfg.layers; ++l) {
    const auto sliced = make_sliced_ffn(l, cfg.width);
    z = block_forward(nullptr, l, z, mask, {}, &sliced);
  }
  return decode_readout(nullptr, z);
}

template struct TrainingOutputsT<float>;
template struct TrainingOutputsT<double>;
template class AdaPerceiverT<float>;
template class AdaPerceiverT<double>;

}  // namespace adaperceiver
