#include "adaperceiver/training.hpp"

#include <algorithm>
#include <cmath>

namespace adaperceiver {

std::string stage_name(TrainStage s) {
  switch (s) {
    case TrainStage::kTokenOnly: return "token_only";
    case TrainStage::kTokenDepth: return "token_depth";
    case TrainStage::kAll: return "all";
  }
  return "?";
}

TrainStage stage_from_name(const std::string& name) {
  if (name == "token_only") return TrainStage::kTokenOnly;
  if (name == "token_depth") return TrainStage::kTokenDepth;
  if (name == "all") return TrainStage::kAll;
  throw InvalidConfig("unknown training stage '" + name + "'");
}

template <typename S>
TensorT<S> token_loss(TapeT<S>* tape, const TrainingOutputsT<S>& outputs,
                      const std::vector<int>& labels, S smoothing) {
  if (outputs.token_outputs.empty()) throw ShapeMismatch("token_loss: no readouts");
  TensorT<S> total;
  for (const auto& [gran, logits] : outputs.token_outputs) {
    auto ce = ops::cross_entropy(tape, logits, labels, smoothing);
    total = total.defined() ? ops::add(tape, total, ce) : ce;
  }
  return total;
}

template <typename S>
TensorT<S> depth_loss(TapeT<S>* tape, const TrainingOutputsT<S>& outputs,
                      const std::vector<int>& labels, const LossWeights& weights, S smoothing) {
  if (outputs.depth_outputs.empty()) throw ShapeMismatch("depth_loss: no readouts");
  TensorT<S> total;
  for (const auto& dep : outputs.depth_outputs) {
    auto ce = ops::cross_entropy(tape, dep.logits, labels, smoothing);
    auto weighted = ops::scale(tape, ce, static_cast<S>(weights.depth_weight(dep.layer)));
    total = total.defined() ? ops::add(tape, total, weighted) : weighted;
  }
  return total;
}

std::vector<int> sample_widths(Index batch, const std::vector<int>& widths, Rng& rng) {
  if (widths.empty()) throw InvalidConfig("sample_widths: empty width set");
  std::vector<int> out(static_cast<size_t>(batch));
  for (auto& w : out) w = widths[rng.uniform_int(widths.size())];
  return out;
}

// ---------------------------------------------------------------------------
// AdamW

template <typename S>
AdamWT<S>::AdamWT(std::vector<TensorT<S>*> params, const AdamWConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  decay_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i]->value().size(), S(0));
    v_[i].assign(params_[i]->value().size(), S(0));
    decay_[i] = params_[i]->rank() >= 2 ? 1 : 0;
  }
}

template <typename S>
void AdamWT<S>::step(double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i]->mutable_value();
    const auto& g = params_[i]->grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const double wd = decay_[i] ? cfg_.weight_decay : 0.0;
    for (size_t e = 0; e < p.size(); ++e) {
      const double ge = static_cast<double>(g[e]);
      m[e] = static_cast<S>(cfg_.beta1 * m[e] + (1.0 - cfg_.beta1) * ge);
      v[e] = static_cast<S>(cfg_.beta2 * v[e] + (1.0 - cfg_.beta2) * ge * ge);
      const double mhat = static_cast<double>(m[e]) / bc1;
      const double vhat = static_cast<double>(v[e]) / bc2;
      const double upd = mhat / (std::sqrt(vhat) + cfg_.eps) + wd * static_cast<double>(p[e]);
      p[e] = static_cast<S>(p[e] - lr * upd);
    }
  }
}

template <typename S>
void AdamWT<S>::reset() {
  step_ = 0;
  for (auto& m : m_) std::fill(m.begin(), m.end(), S(0));
  for (auto& v : v_) std::fill(v.begin(), v.end(), S(0));
}

double LrSchedule::at(int64_t step) const {
  if (step < warmup_steps) {
    const double t = static_cast<double>(step) / static_cast<double>(warmup_steps);
    return warmup_lr + (peak - warmup_lr) * t;
  }
  const int64_t rest = std::max<int64_t>(total_steps - warmup_steps, 1);
  const double t = static_cast<double>(step - warmup_steps) / static_cast<double>(rest);
  return min_lr + 0.5 * (peak - min_lr) * (1.0 + std::cos(3.14159265358979323846 * std::min(t, 1.0)));
}

// ---------------------------------------------------------------------------
// evaluation

template <typename S>
double evaluate_accuracy(const AdaPerceiverT<S>& model, const Dataset& data,
                         const ConfigTuple& cfg, Index batch_size, bool bidirectional) {
  Index correct = 0;
  const Index n = data.count();
  for (Index start = 0; start < n; start += batch_size) {
    const Index b = std::min(batch_size, n - start);
    std::vector<int64_t> idx(static_cast<size_t>(b));
    for (Index i = 0; i < b; ++i) idx[static_cast<size_t>(i)] = start + i;
    auto images = batch_images<S>(data, idx);
    auto logits = model.forward_config(model.patchify(images), cfg, bidirectional);
    for (Index i = 0; i < b; ++i) {
      Index best = 0;
      for (Index c = 1; c < logits.dim(1); ++c) {
        if (logits.at({i, c}) > logits.at({i, best})) best = c;
      }
      if (static_cast<int>(best) == data.labels[static_cast<size_t>(start + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

template <typename S>
std::vector<TensorT<S>*> parameter_list(AdaPerceiverT<S>& model) {
  std::vector<TensorT<S>*> out;
  for (auto& [name, t] : model.named_parameters()) out.push_back(t);
  return out;
}

}  // namespace

template <typename S>
TrainerT<S>::TrainerT(AdaPerceiverT<S>& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), optimizer_(parameter_list(model), cfg.adam), stage_rng_(cfg.seed) {
  if (cfg_.stages.empty()) throw InvalidConfig("trainer: empty stage schedule");
  if (cfg_.val_probes.empty()) {
    const auto& mc = model_.config();
    cfg_.val_probes = {{mc.token_grans.back(), mc.widths.back(), mc.depth},
                       {mc.token_grans.front(), mc.widths.front(), mc.depth}};
  }
  model_.set_requires_grad(true);
}

template <typename S>
StepMetrics TrainerT<S>::train_step(const TensorT<S>& images, const std::vector<int>& labels,
                                    TrainStage stage, double lr) {
  const Index batch = images.dim(0);
  // RNG order per step: width draws (one per sample), then the depth-readout
  // granularity draws inside forward_training (one per captured depth).
  std::vector<int> widths;
  if (stage == TrainStage::kAll) {
    widths = sample_widths(batch, model_.config().widths, stage_rng_);
  } else {
    widths.assign(static_cast<size_t>(batch), model_.config().widths.back());
  }

  TapeT<S> tape;
  auto patches = model_.patchify(images);
  auto outputs = model_.forward_training(&tape, patches, model_.training_mask(), widths, stage_rng_);

  auto tok = token_loss(&tape, outputs, labels, static_cast<S>(cfg_.label_smoothing));
  TensorT<S> joint = tok;
  double depth_val = 0.0;
  if (stage != TrainStage::kTokenOnly) {
    LossWeights lw{model_.config().depth};
    auto dep = depth_loss(&tape, outputs, labels, lw, static_cast<S>(cfg_.label_smoothing));
    depth_val = static_cast<double>(dep.item());
    joint = ops::add(&tape, tok, dep);
  }

  StepMetrics m;
  m.stage = stage;
  m.joint_loss = static_cast<double>(joint.item());
  m.token_loss = static_cast<double>(tok.item());
  m.depth_loss = depth_val;
  m.lr = lr;
  if (!std::isfinite(m.joint_loss)) {
    throw NonFiniteLoss("joint loss " + std::to_string(m.joint_loss) + " at global step " +
                        std::to_string(global_step_) + " (token " + std::to_string(m.token_loss) +
                        ", depth " + std::to_string(m.depth_loss) + ")");
  }

  tape.backward(joint);

  // global-norm clipping in fixed parameter order
  double sq = 0.0;
  auto params = parameter_list(model_);
  for (auto* p : params) {
    for (S g : p->grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  m.grad_norm = std::sqrt(sq);
  if (!std::isfinite(m.grad_norm)) {
    throw NonFiniteLoss("non-finite gradient norm at global step " + std::to_string(global_step_));
  }
  if (cfg_.grad_clip > 0 && m.grad_norm > cfg_.grad_clip) {
    const S scale = static_cast<S>(cfg_.grad_clip / m.grad_norm);
    for (auto* p : params) {
      for (S& g : p->grad()) g *= scale;
    }
  }
  optimizer_.step(lr);
  m.step = global_step_++;
  return m;
}

template <typename S>
std::vector<EpochSummary> TrainerT<S>::train(const Dataset& train_set, const Dataset& val_set,
                                             const Callbacks& callbacks, int start_stage) {
  std::vector<EpochSummary> summaries;
  const Index n = train_set.count();
  const Index steps_per_epoch = n / cfg_.batch_size;
  if (steps_per_epoch < 1) throw InvalidConfig("trainer: dataset smaller than one batch");

  int epoch_counter = 0;
  for (int si = start_stage; si < static_cast<int>(cfg_.stages.size()); ++si) {
    const auto& spec = cfg_.stages[static_cast<size_t>(si)];
    // per-stage stream: a resumed run re-derives the identical sequence
    stage_rng_ = Rng(cfg_.seed).fork(static_cast<uint64_t>(si));
    if (cfg_.reset_optimizer_between_stages) optimizer_.reset();

    LrSchedule sched;
    sched.peak = spec.lr;
    sched.warmup_lr = cfg_.warmup_lr;
    sched.min_lr = cfg_.min_lr;
    sched.total_steps = static_cast<int64_t>(spec.epochs) * steps_per_epoch;
    sched.warmup_steps =
        std::max<int64_t>(1, static_cast<int64_t>(cfg_.warmup_frac * sched.total_steps));

    int64_t stage_step = 0;
    for (int e = 0; e < spec.epochs; ++e) {
      // epoch order: one permutation draw, then per-step width and
      // granularity draws
      auto perm = stage_rng_.permutation(n);
      double loss_sum = 0.0;
      for (Index b = 0; b < steps_per_epoch; ++b) {
        std::span<const int64_t> idx(perm.data() + b * cfg_.batch_size,
                                     static_cast<size_t>(cfg_.batch_size));
        auto images = batch_images<S>(train_set, idx);
        auto labels = batch_labels(train_set, idx);
        auto metrics = train_step(images, labels, spec.stage, sched.at(stage_step++));
        metrics.stage_index = si;
        loss_sum += metrics.joint_loss;
        if (callbacks.on_step) callbacks.on_step(metrics);
      }

      EpochSummary summary;
      summary.stage_index = si;
      summary.stage = spec.stage;
      summary.epoch = epoch_counter++;
      summary.mean_joint_loss = loss_sum / static_cast<double>(steps_per_epoch);
      for (const auto& probe : cfg_.val_probes) {
        summary.val_accuracy.emplace_back(probe, evaluate_accuracy(model_, val_set, probe));
      }
      summaries.push_back(summary);
      if (callbacks.on_epoch) callbacks.on_epoch(summary);
    }
    if (callbacks.on_stage_end) callbacks.on_stage_end(si);
  }
  return summaries;
}

template class AdamWT<float>;
template class AdamWT<double>;
template class TrainerT<float>;
template class TrainerT<double>;
template TensorT<float> token_loss<float>(TapeT<float>*, const TrainingOutputsT<float>&,
                                          const std::vector<int>&, float);
template TensorT<double> token_loss<double>(TapeT<double>*, const TrainingOutputsT<double>&,
                                            const std::vector<int>&, double);
template TensorT<float> depth_loss<float>(TapeT<float>*, const TrainingOutputsT<float>&,
                                          const std::vector<int>&, const LossWeights&, float);
template TensorT<double> depth_loss<double>(TapeT<double>*, const TrainingOutputsT<double>&,
                                            const std::vector<int>&, const LossWeights&, double);
template double evaluate_accuracy<float>(const AdaPerceiverT<float>&, const Dataset&,
                                         const ConfigTuple&, Index, bool);
template double evaluate_accuracy<double>(const AdaPerceiverT<double>&, const Dataset&,
                                          const ConfigTuple&, Index, bool);

}  // namespace adaperceiver
