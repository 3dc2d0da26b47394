#pragma once

#include <functional>
#include <string>
#include <vector>

#include "adaperceiver/dataset.hpp"
#include "adaperceiver/model.hpp"

namespace adaperceiver {

// Curriculum stages. Earlier stages fix the width to max(W); only the final
// stage samples widths per example.
enum class TrainStage { kTokenOnly, kTokenDepth, kAll };

std::string stage_name(TrainStage s);
TrainStage stage_from_name(const std::string& name);

// Linear ramp over depths: depth l contributes weight l / L.
struct LossWeights {
  int total_depth = 1;
  double depth_weight(int l) const { return static_cast<double>(l) / total_depth; }
};

// Sum over granularities of batch-averaged cross-entropy.
template <typename S>
TensorT<S> token_loss(TapeT<S>* tape, const TrainingOutputsT<S>& outputs,
                      const std::vector<int>& labels, S smoothing = S(0));

// Sum over captured depths of ramp-weighted, batch-averaged cross-entropy.
template <typename S>
TensorT<S> depth_loss(TapeT<S>* tape, const TrainingOutputsT<S>& outputs,
                      const std::vector<int>& labels, const LossWeights& weights,
                      S smoothing = S(0));

// i.i.d. uniform width per sample (per-batch sampling converges slower).
std::vector<int> sample_widths(Index batch, const std::vector<int>& widths, Rng& rng);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.003;  // decoupled; applied to rank >= 2 tensors only
};

template <typename S>
class AdamWT {
 public:
  AdamWT(std::vector<TensorT<S>*> params, const AdamWConfig& cfg);
  void step(double lr);
  void reset();
  int64_t step_count() const { return step_; }

 private:
  std::vector<TensorT<S>*> params_;
  std::vector<uint8_t> decay_;
  std::vector<std::vector<S>> m_, v_;
  AdamWConfig cfg_;
  int64_t step_ = 0;
};

// Linear warmup to peak, then cosine to min_lr over the remaining steps.
struct LrSchedule {
  double peak = 1e-3;
  double warmup_lr = 1e-6;
  double min_lr = 1e-5;
  int64_t warmup_steps = 100;
  int64_t total_steps = 1;
  double at(int64_t step) const;
};

struct StageSpec {
  TrainStage stage = TrainStage::kAll;
  int epochs = 1;
  double lr = 1e-3;
};

struct TrainConfig {
  int batch_size = 64;
  double label_smoothing = 0.0;
  double grad_clip = 3.0;
  AdamWConfig adam;
  double warmup_frac = 0.05;  // fraction of stage steps, at least 1 step
  double warmup_lr = 1e-6;
  double min_lr = 1e-5;
  uint64_t seed = 0;
  bool reset_optimizer_between_stages = true;
  std::vector<StageSpec> stages = {{TrainStage::kTokenOnly, 3, 3e-3},
                                   {TrainStage::kTokenDepth, 3, 3e-3},
                                   {TrainStage::kAll, 4, 2e-3}};
  // configurations probed on the validation split after each epoch
  std::vector<ConfigTuple> val_probes;
};

struct StepMetrics {
  int64_t step = 0;       // global step, across stages
  int stage_index = 0;
  TrainStage stage = TrainStage::kTokenOnly;
  double joint_loss = 0;
  double token_loss = 0;
  double depth_loss = 0;  // exactly 0 when the stage gates it off
  double grad_norm = 0;   // pre-clip global norm
  double lr = 0;
};

struct EpochSummary {
  int stage_index = 0;
  TrainStage stage = TrainStage::kTokenOnly;
  int epoch = 0;  // global epoch counter
  double mean_joint_loss = 0;
  std::vector<std::pair<ConfigTuple, double>> val_accuracy;
};

// Batched greedy-decoding accuracy of one configuration over a dataset.
template <typename S>
double evaluate_accuracy(const AdaPerceiverT<S>& model, const Dataset& data,
                         const ConfigTuple& cfg, Index batch_size = 256,
                         bool bidirectional = false);

template <typename S>
class TrainerT {
 public:
  struct Callbacks {
    std::function<void(const StepMetrics&)> on_step;
    std::function<void(const EpochSummary&)> on_epoch;
    // called after the last epoch of each stage, before the optimizer reset
    std::function<void(int stage_index)> on_stage_end;
  };

  TrainerT(AdaPerceiverT<S>& model, const TrainConfig& cfg);

  // One optimization step on an explicit batch. Throws NonFiniteLoss.
  StepMetrics train_step(const TensorT<S>& images, const std::vector<int>& labels,
                         TrainStage stage, double lr);

  // Full schedule over the dataset. start_stage allows resuming from a stage
  // checkpoint: stage RNG streams are derived from (seed, stage_index), so a
  // resumed run reproduces the original stream exactly.
  std::vector<EpochSummary> train(const Dataset& train_set, const Dataset& val_set,
                                  const Callbacks& callbacks = {}, int start_stage = 0);

  int64_t global_step() const { return global_step_; }

 private:
  AdaPerceiverT<S>& model_;
  TrainConfig cfg_;
  AdamWT<S> optimizer_;
  Rng stage_rng_;  // re-forked at each stage boundary
  int64_t global_step_ = 0;
};

using Trainer = TrainerT<float>;

extern template class AdamWT<float>;
extern template class AdamWT<double>;
extern template class TrainerT<float>;
extern template class TrainerT<double>;
extern template TensorT<float> token_loss<float>(TapeT<float>*, const TrainingOutputsT<float>&,
                                                 const std::vector<int>&, float);
extern template TensorT<double> token_loss<double>(TapeT<double>*, const TrainingOutputsT<double>&,
                                                   const std::vector<int>&, double);
extern template TensorT<float> depth_loss<float>(TapeT<float>*, const TrainingOutputsT<float>&,
                                                 const std::vector<int>&, const LossWeights&,
                                                 float);
extern template TensorT<double> depth_loss<double>(TapeT<double>*, const TrainingOutputsT<double>&,
                                                   const std::vector<int>&, const LossWeights&,
                                                   double);
extern template double evaluate_accuracy<float>(const AdaPerceiverT<float>&, const Dataset&,
                                                const ConfigTuple&, Index, bool);
extern template double evaluate_accuracy<double>(const AdaPerceiverT<double>&, const Dataset&,
                                                 const ConfigTuple&, Index, bool);

}  // namespace adaperceiver
