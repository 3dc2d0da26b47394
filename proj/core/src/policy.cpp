#include "adaperceiver/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace adaperceiver {

namespace {

template <typename S>
double row_cross_entropy(const TensorT<S>& logits, Index row, int label) {
  const Index c = logits.dim(1);
  const S* z = logits.value().data() + row * c;
  double mx = z[0];
  for (Index j = 1; j < c; ++j) mx = std::max<double>(mx, z[j]);
  double sum = 0;
  for (Index j = 0; j < c; ++j) sum += std::exp(static_cast<double>(z[j]) - mx);
  return mx + std::log(sum) - static_cast<double>(z[label]);
}

template <typename S>
std::pair<int, double> row_argmax_conf(const TensorT<S>& logits, Index row) {
  const Index c = logits.dim(1);
  std::vector<S> vals(static_cast<size_t>(c));
  for (Index j = 0; j < c; ++j) vals[static_cast<size_t>(j)] = logits.at({row, j});
  auto probs = softmax_row(vals);
  int best = 0;
  for (Index j = 1; j < c; ++j) {
    if (probs[static_cast<size_t>(j)] > probs[static_cast<size_t>(best)]) best = static_cast<int>(j);
  }
  return {best, static_cast<double>(probs[static_cast<size_t>(best)])};
}

}  // namespace

template <typename S>
std::vector<EarlyExitResult> early_exit_infer_batch(const AdaPerceiverT<S>& model,
                                                    const TensorT<S>& images, int tokens,
                                                    int width, double tau,
                                                    const CostConvention& conv) {
  const auto& mcfg = model.config();
  if (tau < 0) throw InvalidConfig("early_exit: tau must be nonnegative");
  const ConfigTuple probe{tokens, width, mcfg.depth};
  validate_config(probe, mcfg);

  const Index b = images.dim(0);
  auto patches = model.patchify(images);
  auto z = model.encode_for_config(patches, probe);
  const auto mask = model.inference_mask(tokens, false);

  std::vector<EarlyExitResult> results(static_cast<size_t>(b));
  std::vector<uint8_t> exited(static_cast<size_t>(b), 0);

  const auto& depths = mcfg.depths;
  int readouts_done = 0;
  for (int layer = 1; layer <= mcfg.depth && layer <= depths.back(); ++layer) {
    const auto sliced = model.make_sliced_ffn(layer - 1, width);
    z = model.block_forward(nullptr, layer - 1, z, mask, {}, &sliced);
    if (std::find(depths.begin(), depths.end(), layer) == depths.end()) continue;

    auto logits = model.decode_readout(nullptr, z);
    ++readouts_done;
    const bool last = layer == depths.back();
    for (Index i = 0; i < b; ++i) {
      if (exited[static_cast<size_t>(i)]) continue;
      auto [pred, conf] = row_argmax_conf(logits, i);
      if (conf >= tau || last) {
        auto& r = results[static_cast<size_t>(i)];
        r.prediction = pred;
        r.confidence = conf;
        r.exit_depth = layer;
        r.flops = flops_forward({tokens, width, layer}, mcfg, 1, readouts_done, conv).total();
        exited[static_cast<size_t>(i)] = 1;
      }
    }
  }
  return results;
}

template <typename S>
EarlyExitResult early_exit_infer(const AdaPerceiverT<S>& model, const TensorT<S>& image,
                                 int tokens, double tau, const CostConvention& conv) {
  return early_exit_infer_batch(model, image, tokens, model.config().widths.back(), tau,
                                conv)[0];
}

// ---------------------------------------------------------------------------
// PolicyNetwork

template <typename S>
PolicyNetworkT<S>::PolicyNetworkT(const ModelConfig& mcfg, uint64_t seed)
    : token_grans_(mcfg.token_grans), dim_(mcfg.d), seq_len_(mcfg.input_tokens()) {
  Rng rng(seed);
  const Index d = dim_;
  const Index n = seq_len_;
  auto trunc = [&](Shape shape) {
    std::vector<S> w(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : w) v = static_cast<S>(rng.truncated_normal(0.02));
    return TensorT<S>::from(std::move(shape), std::move(w), true);
  };
  auto zeros = [&](Shape shape) { return TensorT<S>::zeros(std::move(shape), true); };
  auto ones = [&](Shape shape) { return TensorT<S>::full(std::move(shape), S(1), true); };
  auto make_mixer = [&]() {
    Mixer m;
    m.norm1_gain = ones({d});
    m.norm1_bias = zeros({d});
    m.tok_w1 = trunc({2 * n, n});
    m.tok_b1 = zeros({2 * n});
    m.tok_w2 = trunc({n, 2 * n});
    m.tok_b2 = zeros({n});
    m.norm2_gain = ones({d});
    m.norm2_bias = zeros({d});
    m.ch_w1 = trunc({2 * d, d});
    m.ch_b1 = zeros({2 * d});
    m.ch_w2 = trunc({d, 2 * d});
    m.ch_b2 = zeros({d});
    return m;
  };
  mixer1_ = make_mixer();
  mixer2_ = make_mixer();
  fuse_norm_gain = ones({d});
  fuse_norm_bias = zeros({d});
  fuse_w1 = trunc({d, d});
  fuse_b1 = zeros({d});
  fuse_w2 = trunc({d, d});
  fuse_b2 = zeros({d});
  head_w = trunc({static_cast<Index>(token_grans_.size()), d});
}

template <typename S>
TensorT<S> PolicyNetworkT<S>::mixer_forward(TapeT<S>* tape, const Mixer& m,
                                            const TensorT<S>& x) const {
  const S eps = S(1e-5);
  // token mixing over the sequence axis
  auto h = ops::layer_norm(tape, x, m.norm1_gain, m.norm1_bias, eps);
  auto ht = ops::transpose(tape, h, 1, 2);  // [B, d, I]
  ht = ops::linear(tape, ht, m.tok_w1, m.tok_b1);
  ht = ops::gelu(tape, ht);
  ht = ops::linear(tape, ht, m.tok_w2, m.tok_b2);
  auto x1 = ops::add(tape, x, ops::transpose(tape, ht, 1, 2));
  // channel mixing
  auto h2 = ops::layer_norm(tape, x1, m.norm2_gain, m.norm2_bias, eps);
  h2 = ops::linear(tape, h2, m.ch_w1, m.ch_b1);
  h2 = ops::gelu(tape, h2);
  h2 = ops::linear(tape, h2, m.ch_w2, m.ch_b2);
  return ops::add(tape, x1, h2);
}

template <typename S>
TensorT<S> PolicyNetworkT<S>::forward(TapeT<S>* tape, const TensorT<S>& input_tokens) const {
  if (input_tokens.rank() != 3 || input_tokens.dim(1) != seq_len_ ||
      input_tokens.dim(2) != dim_) {
    throw ShapeMismatch("policy forward: expected [B, " + std::to_string(seq_len_) + ", " +
                        std::to_string(dim_) + "], got " + shape_str(input_tokens.shape()));
  }
  auto x = mixer_forward(tape, mixer1_, input_tokens);
  x = mixer_forward(tape, mixer2_, x);
  auto pooled = ops::reduce_mean(tape, x, 1, false);  // [B, d]
  auto h = ops::layer_norm(tape, pooled, fuse_norm_gain, fuse_norm_bias, S(1e-5));
  h = ops::gelu(tape, ops::linear(tape, h, fuse_w1, fuse_b1));
  h = ops::gelu(tape, ops::linear(tape, h, fuse_w2, fuse_b2));
  return ops::matmul(tape, h, ops::transpose(tape, head_w));
}

template <typename S>
std::vector<std::pair<std::string, TensorT<S>*>> PolicyNetworkT<S>::named_parameters() {
  std::vector<std::pair<std::string, TensorT<S>*>> out;
  auto add = [&](const std::string& n, TensorT<S>& t) { out.emplace_back(n, &t); };
  auto add_mixer = [&](const std::string& p, Mixer& m) {
    add(p + ".norm1.gain", m.norm1_gain);
    add(p + ".norm1.bias", m.norm1_bias);
    add(p + ".tok.w1", m.tok_w1);
    add(p + ".tok.b1", m.tok_b1);
    add(p + ".tok.w2", m.tok_w2);
    add(p + ".tok.b2", m.tok_b2);
    add(p + ".norm2.gain", m.norm2_gain);
    add(p + ".norm2.bias", m.norm2_bias);
    add(p + ".ch.w1", m.ch_w1);
    add(p + ".ch.b1", m.ch_b1);
    add(p + ".ch.w2", m.ch_w2);
    add(p + ".ch.b2", m.ch_b2);
  };
  add_mixer("mixer1", mixer1_);
  add_mixer("mixer2", mixer2_);
  add("fuse.norm.gain", fuse_norm_gain);
  add("fuse.norm.bias", fuse_norm_bias);
  add("fuse.w1", fuse_w1);
  add("fuse.b1", fuse_b1);
  add("fuse.w2", fuse_w2);
  add("fuse.b2", fuse_b2);
  add("head.weight", head_w);
  return out;
}

template <typename S>
void PolicyNetworkT<S>::set_requires_grad(bool v) {
  for (auto& [n, t] : named_parameters()) t->set_requires_grad(v);
}

// ---------------------------------------------------------------------------
// REINFORCE

template <typename S>
ReinforceMetrics reinforce_update(const AdaPerceiverT<S>& model, PolicyNetworkT<S>& policy,
                                  AdamWT<S>& optimizer, const TensorT<S>& images,
                                  const std::vector<int>& labels, Rng& rng,
                                  const ReinforceConfig& cfg) {
  if (cfg.lambda < 0) throw InvalidConfig("reinforce: lambda must be nonnegative");
  const auto& mcfg = model.config();
  const Index b = images.dim(0);
  auto patches = model.patchify(images);
  auto tokens = model.embed_inputs(nullptr, patches);  // frozen classifier features

  TapeT<S> tape;
  auto logits = policy.forward(&tape, tokens);
  const int n_actions = policy.num_actions();

  // sample actions and collect entropies from the current policy
  std::vector<int> actions(static_cast<size_t>(b));
  double entropy_sum = 0;
  for (Index i = 0; i < b; ++i) {
    std::vector<S> row(static_cast<size_t>(n_actions));
    for (int a = 0; a < n_actions; ++a) row[static_cast<size_t>(a)] = logits.at({i, a});
    auto probs = softmax_row(row);
    for (auto p : probs) {
      if (p > 0) entropy_sum -= static_cast<double>(p) * std::log(static_cast<double>(p));
    }
    const double u = rng.uniform();
    double acc = 0;
    int chosen = n_actions - 1;
    for (int a = 0; a < n_actions; ++a) {
      acc += static_cast<double>(probs[static_cast<size_t>(a)]);
      if (u < acc) {
        chosen = a;
        break;
      }
    }
    actions[static_cast<size_t>(i)] = chosen;
  }

  // run the classifier at the chosen granularities, grouped by action
  std::vector<double> reward(static_cast<size_t>(b));
  for (int a = 0; a < n_actions; ++a) {
    std::vector<Index> members;
    for (Index i = 0; i < b; ++i) {
      if (actions[static_cast<size_t>(i)] == a) members.push_back(i);
    }
    if (members.empty()) continue;
    std::vector<TensorT<S>> rows;
    rows.reserve(members.size());
    for (Index i : members) rows.push_back(ops::slice<S>(nullptr, patches, 0, i, 1));
    auto group = members.size() == 1 ? rows[0] : ops::concat<S>(nullptr, rows, 0);
    const ConfigTuple run_cfg{policy.token_grans()[static_cast<size_t>(a)], mcfg.widths.back(),
                              mcfg.depth};
    auto cls_logits = model.forward_config(group, run_cfg);
    for (size_t k = 0; k < members.size(); ++k) {
      const Index i = members[k];
      const double ce =
          row_cross_entropy(cls_logits, static_cast<Index>(k), labels[static_cast<size_t>(i)]);
      reward[static_cast<size_t>(i)] = -ce - cfg.lambda * static_cast<double>(a);
    }
  }

  double mean_reward = 0;
  for (double r : reward) mean_reward += r;
  mean_reward /= static_cast<double>(b);

  std::vector<S> advantages(static_cast<size_t>(b));
  for (Index i = 0; i < b; ++i) {
    advantages[static_cast<size_t>(i)] =
        static_cast<S>(reward[static_cast<size_t>(i)] - policy.baseline());
  }
  auto loss = ops::policy_gradient_loss(&tape, logits, actions, advantages,
                                        static_cast<S>(cfg.entropy_coef));
  tape.backward(loss);
  optimizer.step(cfg.lr);

  policy.set_baseline(cfg.baseline_beta * policy.baseline() +
                      (1.0 - cfg.baseline_beta) * mean_reward);

  ReinforceMetrics m;
  m.mean_reward = mean_reward;
  m.mean_entropy = entropy_sum / static_cast<double>(b);
  m.baseline = policy.baseline();
  m.loss = static_cast<double>(loss.item());
  return m;
}

// ---------------------------------------------------------------------------
// oracle

double OracleTable::accuracy() const {
  if (correct.empty()) return 0;
  double acc = 0;
  for (uint8_t c : correct) acc += c;
  return acc / static_cast<double>(correct.size());
}

double OracleTable::mean_flops() const {
  if (flops.empty()) return 0;
  double f = 0;
  for (double v : flops) f += v;
  return f / static_cast<double>(flops.size());
}

template <typename S>
OracleTable oracle_build(const AdaPerceiverT<S>& model, const Dataset& data,
                         const std::vector<ConfigTuple>& configs, int n_output_tokens,
                         const CostConvention& conv) {
  if (configs.empty()) throw InvalidConfig("oracle_build: no configurations");
  const auto& mcfg = model.config();
  const Index n = data.count();

  // order configurations by cost
  std::vector<size_t> order(configs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<double> cost(configs.size());
  for (size_t c = 0; c < configs.size(); ++c) {
    cost[c] = flops_forward(configs[c], mcfg, n_output_tokens, 1, conv).total();
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return cost[a] < cost[b]; });

  // correctness per (config, input)
  std::vector<std::vector<uint8_t>> ok(configs.size(), std::vector<uint8_t>(static_cast<size_t>(n), 0));
  const Index batch = 256;
  for (size_t c = 0; c < configs.size(); ++c) {
    for (Index start = 0; start < n; start += batch) {
      const Index bsz = std::min(batch, n - start);
      std::vector<int64_t> idx(static_cast<size_t>(bsz));
      for (Index i = 0; i < bsz; ++i) idx[static_cast<size_t>(i)] = start + i;
      auto images = batch_images<S>(data, idx);
      auto logits = model.forward_config(model.patchify(images), configs[c]);
      for (Index i = 0; i < bsz; ++i) {
        auto [pred, confv] = row_argmax_conf(logits, i);
        ok[c][static_cast<size_t>(start + i)] =
            pred == data.labels[static_cast<size_t>(start + i)] ? 1 : 0;
      }
    }
  }

  OracleTable table;
  table.assignment.resize(static_cast<size_t>(n));
  table.correct.resize(static_cast<size_t>(n));
  table.flops.resize(static_cast<size_t>(n));
  const size_t most_expensive = order.back();
  for (Index i = 0; i < n; ++i) {
    bool found = false;
    for (size_t rank = 0; rank < order.size() && !found; ++rank) {
      const size_t c = order[rank];
      if (ok[c][static_cast<size_t>(i)]) {
        table.assignment[static_cast<size_t>(i)] = configs[c];
        table.correct[static_cast<size_t>(i)] = 1;
        table.flops[static_cast<size_t>(i)] = cost[c];
        found = true;
      }
    }
    if (!found) {
      table.assignment[static_cast<size_t>(i)] = configs[most_expensive];
      table.correct[static_cast<size_t>(i)] = 0;
      table.flops[static_cast<size_t>(i)] = cost[most_expensive];
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// run_policy

PolicyKind policy_kind_from_name(const std::string& name) {
  if (name == "baseline") return PolicyKind::kBaseline;
  if (name == "early_exit" || name == "ee") return PolicyKind::kEarlyExit;
  if (name == "reinforce" || name == "rl") return PolicyKind::kReinforce;
  if (name == "oracle") return PolicyKind::kOracle;
  throw UnknownPolicy("policy '" + name + "'");
}

std::string policy_kind_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kBaseline: return "baseline";
    case PolicyKind::kEarlyExit: return "early_exit";
    case PolicyKind::kReinforce: return "reinforce";
    case PolicyKind::kOracle: return "oracle";
  }
  return "?";
}

template <typename S>
PolicyRunResult<S> run_policy(const AdaPerceiverT<S>& model, const Dataset& data,
                              const PolicyRunParams<S>& params) {
  const auto& mcfg = model.config();
  const Index n = data.count();
  PolicyRunResult<S> out;
  auto& records = out.records;
  records.reserve(static_cast<size_t>(n));

  const auto& depths = mcfg.depths;
  auto depth_slot = [&](int layer) {
    return static_cast<int>(std::find(depths.begin(), depths.end(), layer) - depths.begin());
  };

  switch (params.kind) {
    case PolicyKind::kBaseline: {
      validate_config(params.base_config, mcfg);
      const double flops = flops_forward(params.base_config, mcfg, 1, 1, params.conv).total();
      for (Index start = 0; start < n; start += params.batch_size) {
        const Index bsz = std::min(params.batch_size, n - start);
        std::vector<int64_t> idx(static_cast<size_t>(bsz));
        for (Index i = 0; i < bsz; ++i) idx[static_cast<size_t>(i)] = start + i;
        auto images = batch_images<S>(data, idx);
        auto logits = model.forward_config(model.patchify(images), params.base_config);
        for (Index i = 0; i < bsz; ++i) {
          auto [pred, conf] = row_argmax_conf(logits, i);
          records.push_back({start + i, params.base_config,
                             pred == data.labels[static_cast<size_t>(start + i)], conf, flops});
        }
      }
      out.summary.name = "baseline" + params.base_config.str();
      break;
    }
    case PolicyKind::kEarlyExit: {
      out.summary.exit_histogram.assign(depths.size(), 0);
      for (Index start = 0; start < n; start += params.batch_size) {
        const Index bsz = std::min(params.batch_size, n - start);
        std::vector<int64_t> idx(static_cast<size_t>(bsz));
        for (Index i = 0; i < bsz; ++i) idx[static_cast<size_t>(i)] = start + i;
        auto images = batch_images<S>(data, idx);
        auto results = early_exit_infer_batch(model, images, params.base_config.tokens,
                                              params.base_config.width, params.tau, params.conv);
        for (Index i = 0; i < bsz; ++i) {
          const auto& r = results[static_cast<size_t>(i)];
          out.summary.exit_histogram[static_cast<size_t>(depth_slot(r.exit_depth))]++;
          records.push_back({start + i,
                             {params.base_config.tokens, params.base_config.width, r.exit_depth},
                             r.prediction == data.labels[static_cast<size_t>(start + i)],
                             r.confidence, r.flops});
        }
      }
      out.summary.name = "ee(t=" + std::to_string(params.base_config.tokens) +
                         ",w=" + std::to_string(params.base_config.width) +
                         ",tau=" + std::to_string(params.tau) + ")";
      break;
    }
    case PolicyKind::kReinforce: {
      if (params.policy_net == nullptr) throw UnknownPolicy("reinforce run without a policy net");
      if (!params.reinforce_tau.has_value()) {
        // greedy fixed-depth run at the selected granularity
        for (Index start = 0; start < n; start += params.batch_size) {
          const Index bsz = std::min(params.batch_size, n - start);
          std::vector<int64_t> idx(static_cast<size_t>(bsz));
          for (Index i = 0; i < bsz; ++i) idx[static_cast<size_t>(i)] = start + i;
          auto images = batch_images<S>(data, idx);
          auto patches = model.patchify(images);
          auto tokens = model.embed_inputs(nullptr, patches);
          auto logits = params.policy_net->forward(nullptr, tokens);
          for (Index i = 0; i < bsz; ++i) {
            auto [action, conf] = row_argmax_conf(logits, i);
            const ConfigTuple cfg{params.policy_net->token_grans()[static_cast<size_t>(action)],
                                  mcfg.widths.back(), mcfg.depth};
            auto row = ops::slice<S>(nullptr, patches, 0, i, 1);
            auto cls = model.forward_config(row, cfg);
            auto [pred, cconf] = row_argmax_conf(cls, 0);
            records.push_back({start + i, cfg,
                               pred == data.labels[static_cast<size_t>(start + i)], cconf,
                               flops_forward(cfg, mcfg, 1, 1, params.conv).total()});
          }
        }
        out.summary.name = "rl(tokens)";
      } else {
        out.summary.exit_histogram.assign(depths.size(), 0);
        for (Index start = 0; start < n; start += params.batch_size) {
          const Index bsz = std::min(params.batch_size, n - start);
          std::vector<int64_t> idx(static_cast<size_t>(bsz));
          for (Index i = 0; i < bsz; ++i) idx[static_cast<size_t>(i)] = start + i;
          auto images = batch_images<S>(data, idx);
          auto patches = model.patchify(images);
          auto tokens = model.embed_inputs(nullptr, patches);
          auto logits = params.policy_net->forward(nullptr, tokens);
          for (Index i = 0; i < bsz; ++i) {
            auto [action, aconf] = row_argmax_conf(logits, i);
            const int t = params.policy_net->token_grans()[static_cast<size_t>(action)];
            auto row_img = ops::slice<S>(nullptr, images, 0, i, 1);
            auto r = early_exit_infer_batch(model, row_img, t, mcfg.widths.back(),
                                            *params.reinforce_tau, params.conv)[0];
            out.summary.exit_histogram[static_cast<size_t>(depth_slot(r.exit_depth))]++;
            records.push_back({start + i, {t, mcfg.widths.back(), r.exit_depth},
                               r.prediction == data.labels[static_cast<size_t>(start + i)],
                               r.confidence, r.flops});
          }
        }
        out.summary.name = "rl(tokens,tau=" + std::to_string(*params.reinforce_tau) + ")";
      }
      break;
    }
    case PolicyKind::kOracle: {
      auto table = oracle_build(model, data, params.oracle_configs, 1, params.conv);
      for (Index i = 0; i < n; ++i) {
        records.push_back({i, table.assignment[static_cast<size_t>(i)],
                           table.correct[static_cast<size_t>(i)] != 0, 0.0,
                           table.flops[static_cast<size_t>(i)]});
      }
      out.summary.name = "oracle";
      break;
    }
  }

  double acc = 0, fl = 0;
  for (const auto& r : records) {
    acc += r.correct ? 1 : 0;
    fl += r.flops;
  }
  out.summary.accuracy = records.empty() ? 0 : acc / static_cast<double>(records.size());
  out.summary.mean_flops = records.empty() ? 0 : fl / static_cast<double>(records.size());
  return out;
}

template class PolicyNetworkT<float>;
template class PolicyNetworkT<double>;
template std::vector<EarlyExitResult> early_exit_infer_batch<float>(const AdaPerceiverT<float>&,
                                                                    const TensorT<float>&, int,
                                                                    int, double,
                                                                    const CostConvention&);
template std::vector<EarlyExitResult> early_exit_infer_batch<double>(const AdaPerceiverT<double>&,
                                                                     const TensorT<double>&, int,
                                                                     int, double,
                                                                     const CostConvention&);
template EarlyExitResult early_exit_infer<float>(const AdaPerceiverT<float>&,
                                                 const TensorT<float>&, int, double,
                                                 const CostConvention&);
template EarlyExitResult early_exit_infer<double>(const AdaPerceiverT<double>&,
                                                  const TensorT<double>&, int, double,
                                                  const CostConvention&);
template ReinforceMetrics reinforce_update<float>(const AdaPerceiverT<float>&,
                                                  PolicyNetworkT<float>&, AdamWT<float>&,
                                                  const TensorT<float>&, const std::vector<int>&,
                                                  Rng&, const ReinforceConfig&);
template ReinforceMetrics reinforce_update<double>(const AdaPerceiverT<double>&,
                                                   PolicyNetworkT<double>&, AdamWT<double>&,
                                                   const TensorT<double>&, const std::vector<int>&,
                                                   Rng&, const ReinforceConfig&);
template OracleTable oracle_build<float>(const AdaPerceiverT<float>&, const Dataset&,
                                         const std::vector<ConfigTuple>&, int,
                                         const CostConvention&);
template OracleTable oracle_build<double>(const AdaPerceiverT<double>&, const Dataset&,
                                          const std::vector<ConfigTuple>&, int,
                                          const CostConvention&);
template PolicyRunResult<float> run_policy<float>(const AdaPerceiverT<float>&, const Dataset&,
                                                  const PolicyRunParams<float>&);
template PolicyRunResult<double> run_policy<double>(const AdaPerceiverT<double>&, const Dataset&,
                                                    const PolicyRunParams<double>&);

}  // namespace adaperceiver
