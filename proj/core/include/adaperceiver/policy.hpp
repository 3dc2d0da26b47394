#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adaperceiver/costmodel.hpp"
#include "adaperceiver/dataset.hpp"
#include "adaperceiver/model.hpp"
#include "adaperceiver/training.hpp"

namespace adaperceiver {

// Per-input, per-configuration outcome; the substrate for policy evaluation
// and Pareto tables.
struct EvalRecord {
  int64_t input_id = 0;
  ConfigTuple config;
  bool correct = false;
  double confidence = 0.0;  // max softmax probability
  double flops = 0.0;
};

struct EarlyExitResult {
  int prediction = -1;
  int exit_depth = 0;
  double confidence = 0.0;
  double flops = 0.0;
};

// Confidence-threshold early exit: read out after every depth in D in order,
// exit at the first readout whose max-softmax reaches tau, otherwise run the
// full depth. FLOPs account for the executed blocks plus every readout
// performed. Batch in, one result per sample.
template <typename S>
std::vector<EarlyExitResult> early_exit_infer_batch(const AdaPerceiverT<S>& model,
                                                    const TensorT<S>& images, int tokens,
                                                    int width, double tau,
                                                    const CostConvention& conv = {});

template <typename S>
EarlyExitResult early_exit_infer(const AdaPerceiverT<S>& model, const TensorT<S>& image,
                                 int tokens, double tau, const CostConvention& conv = {});

// Token-count selection network: two MLP-Mixer blocks over the input tokens,
// mean-pool, a small fusion MLP, and a bias-free head over |T| actions. The
// EMA reward baseline used by REINFORCE lives here too.
template <typename S>
class PolicyNetworkT {
 public:
  PolicyNetworkT(const ModelConfig& mcfg, uint64_t seed);

  // input_tokens: [B, I, d] from the classifier's patch embedding.
  TensorT<S> forward(TapeT<S>* tape, const TensorT<S>& input_tokens) const;

  std::vector<std::pair<std::string, TensorT<S>*>> named_parameters();
  void set_requires_grad(bool v);
  int num_actions() const { return static_cast<int>(token_grans_.size()); }
  const std::vector<int>& token_grans() const { return token_grans_; }

  double baseline() const { return baseline_; }
  void set_baseline(double b) { baseline_ = b; }

 private:
  struct Mixer {
    TensorT<S> norm1_gain, norm1_bias;
    TensorT<S> tok_w1, tok_b1, tok_w2, tok_b2;  // over the sequence axis
    TensorT<S> norm2_gain, norm2_bias;
    TensorT<S> ch_w1, ch_b1, ch_w2, ch_b2;      // over channels
  };
  TensorT<S> mixer_forward(TapeT<S>* tape, const Mixer& m, const TensorT<S>& x) const;

  std::vector<int> token_grans_;
  int dim_ = 0;
  int seq_len_ = 0;
  Mixer mixer1_, mixer2_;
  TensorT<S> fuse_norm_gain, fuse_norm_bias;
  TensorT<S> fuse_w1, fuse_b1, fuse_w2, fuse_b2;
  TensorT<S> head_w;  // [|T|, d], no bias
  double baseline_ = 0.0;
};

struct ReinforceConfig {
  double lambda = 0.05;        // cost coefficient on the action index
  double baseline_beta = 0.9;  // EMA decay, baseline starts at 0
  double entropy_coef = 0.0;
  double lr = 1e-3;
  AdamWConfig adam;
};

struct ReinforceMetrics {
  double mean_reward = 0.0;
  double mean_entropy = 0.0;
  double baseline = 0.0;  // after the update
  double loss = 0.0;
};

// One REINFORCE step against the frozen classifier: sample t_i ~ pi(.|x_i),
// run (t_i, max W, L), reward -CE - lambda * action index, advantage against
// the EMA baseline, then update the baseline from the batch mean reward.
template <typename S>
ReinforceMetrics reinforce_update(const AdaPerceiverT<S>& model, PolicyNetworkT<S>& policy,
                                  AdamWT<S>& optimizer, const TensorT<S>& images,
                                  const std::vector<int>& labels, Rng& rng,
                                  const ReinforceConfig& cfg);

// Oracle assignment: cheapest configuration that classifies the input
// correctly; inputs no configuration gets right are charged the most
// expensive configuration and counted wrong.
struct OracleTable {
  std::vector<ConfigTuple> assignment;  // by input id
  std::vector<uint8_t> correct;
  std::vector<double> flops;
  double accuracy() const;
  double mean_flops() const;
};

template <typename S>
OracleTable oracle_build(const AdaPerceiverT<S>& model, const Dataset& data,
                         const std::vector<ConfigTuple>& configs, int n_output_tokens = 1,
                         const CostConvention& conv = {});

enum class PolicyKind { kBaseline, kEarlyExit, kReinforce, kOracle };

PolicyKind policy_kind_from_name(const std::string& name);
std::string policy_kind_name(PolicyKind kind);

template <typename S>
struct PolicyRunParams {
  PolicyKind kind = PolicyKind::kBaseline;
  ConfigTuple base_config;                    // baseline / early-exit
  double tau = 0.9;                           // early-exit threshold
  const PolicyNetworkT<S>* policy_net = nullptr;  // reinforce
  std::optional<double> reinforce_tau;        // compose EE on the RL choice
  std::vector<ConfigTuple> oracle_configs;
  CostConvention conv;
  Index batch_size = 256;
};

struct PolicySummary {
  std::string name;
  double accuracy = 0.0;
  double mean_flops = 0.0;
  std::vector<int> exit_histogram;  // early exit: count per depth in D
};

template <typename S>
struct PolicyRunResult {
  PolicySummary summary;
  std::vector<EvalRecord> records;
};

template <typename S>
PolicyRunResult<S> run_policy(const AdaPerceiverT<S>& model, const Dataset& data,
                              const PolicyRunParams<S>& params);

extern template class PolicyNetworkT<float>;
extern template class PolicyNetworkT<double>;
extern template std::vector<EarlyExitResult> early_exit_infer_batch<float>(
    const AdaPerceiverT<float>&, const TensorT<float>&, int, int, double, const CostConvention&);
extern template EarlyExitResult early_exit_infer<float>(const AdaPerceiverT<float>&,
                                                        const TensorT<float>&, int, double,
                                                        const CostConvention&);
extern template ReinforceMetrics reinforce_update<float>(const AdaPerceiverT<float>&,
                                                         PolicyNetworkT<float>&, AdamWT<float>&,
                                                         const TensorT<float>&,
                                                         const std::vector<int>&, Rng&,
                                                         const ReinforceConfig&);
extern template OracleTable oracle_build<float>(const AdaPerceiverT<float>&, const Dataset&,
                                                const std::vector<ConfigTuple>&, int,
                                                const CostConvention&);
extern template PolicyRunResult<float> run_policy<float>(const AdaPerceiverT<float>&,
                                                         const Dataset&,
                                                         const PolicyRunParams<float>&);

}  // namespace adaperceiver
