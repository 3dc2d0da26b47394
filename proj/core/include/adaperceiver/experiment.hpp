#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adaperceiver/policy.hpp"
#include "adaperceiver/serialize.hpp"

namespace adaperceiver {

struct ParetoRow {
  std::string id;
  ConfigTuple config;
  double accuracy = 0.0;
  double mean_flops = 0.0;
  bool pareto = false;
  std::vector<int> exit_histogram;
};

struct GridResult {
  std::vector<ParetoRow> rows;        // sorted by mean flops ascending
  std::vector<EvalRecord> records;    // grouped per configuration, input order
};

// Evaluates every configuration once over the dataset. Configurations fan
// out over worker threads against the read-only model (thread count from
// `threads`, else the ADAPERCEIVER_THREADS environment variable, else the
// hardware concurrency); results are assembled in configuration order, so
// output is independent of the thread count.
template <typename S>
GridResult eval_grid(const AdaPerceiverT<S>& model, const Dataset& data,
                     const std::vector<ConfigTuple>& configs, const CostConvention& conv = {},
                     int threads = 0);

// flagged iff no other row has accuracy >= this row's and flops < this row's
void compute_pareto_flags(std::vector<ParetoRow>& rows);

void write_pareto_csv(const std::string& path, const std::vector<ParetoRow>& rows);
void write_records_csv(const std::string& path, const std::vector<EvalRecord>& records);
void write_policy_csv(const std::string& path, const std::vector<PolicySummary>& summaries);
void write_oracle_json(const std::string& path, const OracleTable& table);

// ---------------------------------------------------------------------------

struct PolicySuiteConfig {
  std::vector<int> baseline_tokens;  // empty: every trained granularity
  std::vector<double> ee_taus = {0.9};
  int ee_tokens = 0;                 // 0: max granularity
  bool run_reinforce = true;
  ReinforceConfig reinforce;
  int reinforce_updates = 300;
  int reinforce_batch = 64;
  std::optional<double> reinforce_eval_tau = 0.9;
  bool run_oracle = true;
  bool oracle_over_depths = false;   // extend the oracle grid with T x {maxW} x D
};

// Whole-experiment description; the JSON schema mirrors the field names
// one-to-one (see README). seed fixes dataset, init, and training streams.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig training;
  DatasetSpec dataset;
  PolicySuiteConfig policies;
  uint64_t seed = 42;
  std::string outdir = "out";
};

std::string experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json_text(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

int thread_count_override(int requested);

}  // namespace adaperceiver
