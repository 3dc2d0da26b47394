#include "adaperceiver/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <mutex>
#include <fstream>
#include <thread>

#include "json.hpp"

namespace adaperceiver {

using nlohmann::json;

int thread_count_override(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("ADAPERCEIVER_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

template <typename S>
GridResult eval_grid(const AdaPerceiverT<S>& model, const Dataset& data,
                     const std::vector<ConfigTuple>& configs, const CostConvention& conv,
                     int threads) {
  if (configs.empty()) throw InvalidConfig("eval_grid: no configurations");
  for (const auto& c : configs) validate_config(c, model.config());

  struct PerConfig {
    ParetoRow row;
    std::vector<EvalRecord> records;
  };
  std::vector<PerConfig> results(configs.size());

  const int n_workers = std::min<int>(thread_count_override(threads),
                                      static_cast<int>(configs.size()));
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&]() {
    try {
      while (true) {
        const size_t ci = next.fetch_add(1);
        if (ci >= configs.size()) break;
        PolicyRunParams<S> params;
        params.kind = PolicyKind::kBaseline;
        params.base_config = configs[ci];
        params.conv = conv;
        auto run = run_policy(model, data, params);
        PerConfig pc;
        pc.row.id = configs[ci].str();
        pc.row.config = configs[ci];
        pc.row.accuracy = run.summary.accuracy;
        pc.row.mean_flops = run.summary.mean_flops;
        pc.records = std::move(run.records);
        results[ci] = std::move(pc);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  GridResult out;
  // deterministic assembly: configuration order for records, flops order for rows
  for (auto& pc : results) {
    out.rows.push_back(pc.row);
    out.records.insert(out.records.end(), pc.records.begin(), pc.records.end());
  }
  std::stable_sort(out.rows.begin(), out.rows.end(),
                   [](const ParetoRow& a, const ParetoRow& b) {
                     return a.mean_flops < b.mean_flops;
                   });
  compute_pareto_flags(out.rows);
  return out;
}

void compute_pareto_flags(std::vector<ParetoRow>& rows) {
  for (auto& r : rows) {
    bool dominated = false;
    for (const auto& s : rows) {
      if (&s == &r) continue;
      if (s.accuracy >= r.accuracy && s.mean_flops < r.mean_flops) {
        dominated = true;
        break;
      }
    }
    r.pareto = !dominated;
  }
}

namespace {

std::string hist_field(const std::vector<int>& hist) {
  std::string s;
  for (size_t i = 0; i < hist.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(hist[i]);
  }
  return s;
}

}  // namespace

void write_pareto_csv(const std::string& path, const std::vector<ParetoRow>& rows) {
  CsvWriter w(path, {"id", "tokens", "width", "layers", "accuracy", "mean_gflops", "pareto"});
  for (const auto& r : rows) {
    w.row({r.id, CsvWriter::field(static_cast<int64_t>(r.config.tokens)),
           CsvWriter::field(static_cast<int64_t>(r.config.width)),
           CsvWriter::field(static_cast<int64_t>(r.config.layers)),
           CsvWriter::field(r.accuracy), CsvWriter::field(r.mean_flops / 1e9),
           r.pareto ? "1" : "0"});
  }
}

void write_records_csv(const std::string& path, const std::vector<EvalRecord>& records) {
  CsvWriter w(path, {"input_id", "t", "w", "l", "correct", "confidence", "flops"});
  for (const auto& r : records) {
    w.row({CsvWriter::field(r.input_id), CsvWriter::field(static_cast<int64_t>(r.config.tokens)),
           CsvWriter::field(static_cast<int64_t>(r.config.width)),
           CsvWriter::field(static_cast<int64_t>(r.config.layers)), r.correct ? "1" : "0",
           CsvWriter::field(r.confidence), CsvWriter::field(r.flops)});
  }
}

void write_policy_csv(const std::string& path, const std::vector<PolicySummary>& summaries) {
  CsvWriter w(path, {"policy", "accuracy", "gflops", "exit_hist"});
  for (const auto& s : summaries) {
    w.row({s.name, CsvWriter::field(s.accuracy), CsvWriter::field(s.mean_flops / 1e9),
           hist_field(s.exit_histogram)});
  }
}

void write_oracle_json(const std::string& path, const OracleTable& table) {
  json map = json::object();
  for (size_t i = 0; i < table.assignment.size(); ++i) {
    const auto& c = table.assignment[i];
    map[std::to_string(i)] = json{{"t", c.tokens}, {"w", c.width}, {"l", c.layers}};
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  const std::string text = map.dump(2);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.put('\n');
}

// ---------------------------------------------------------------------------
// experiment config JSON

namespace {

json stages_json(const std::vector<StageSpec>& stages) {
  json arr = json::array();
  for (const auto& s : stages) {
    arr.push_back(json{{"stage", stage_name(s.stage)}, {"epochs", s.epochs}, {"lr", s.lr}});
  }
  return arr;
}

json training_json(const TrainConfig& t) {
  return json{{"batch_size", t.batch_size},
              {"label_smoothing", t.label_smoothing},
              {"grad_clip", t.grad_clip},
              {"weight_decay", t.adam.weight_decay},
              {"beta1", t.adam.beta1},
              {"beta2", t.adam.beta2},
              {"adam_eps", t.adam.eps},
              {"warmup_frac", t.warmup_frac},
              {"warmup_lr", t.warmup_lr},
              {"min_lr", t.min_lr},
              {"reset_optimizer_between_stages", t.reset_optimizer_between_stages},
              {"stages", stages_json(t.stages)}};
}

json dataset_json(const DatasetSpec& d) {
  return json{{"name", d.name},
              {"images_path", d.images_path},
              {"labels_path", d.labels_path},
              {"train_count", d.train_count},
              {"val_count", d.val_count},
              {"test_count", d.test_count},
              {"seed", d.seed},
              {"mean", d.mean},
              {"stddev", d.stddev},
              {"classes", d.classes},
              {"image_size", d.image_size},
              {"noise_min", d.noise_min},
              {"noise_max", d.noise_max}};
}

json policies_json(const PolicySuiteConfig& p) {
  json r{{"baseline_tokens", p.baseline_tokens},
         {"ee_taus", p.ee_taus},
         {"ee_tokens", p.ee_tokens},
         {"run_reinforce", p.run_reinforce},
         {"reinforce_lambda", p.reinforce.lambda},
         {"reinforce_baseline_beta", p.reinforce.baseline_beta},
         {"reinforce_entropy_coef", p.reinforce.entropy_coef},
         {"reinforce_lr", p.reinforce.lr},
         {"reinforce_updates", p.reinforce_updates},
         {"reinforce_batch", p.reinforce_batch},
         {"run_oracle", p.run_oracle},
         {"oracle_over_depths", p.oracle_over_depths}};
  if (p.reinforce_eval_tau.has_value()) r["reinforce_eval_tau"] = *p.reinforce_eval_tau;
  else r["reinforce_eval_tau"] = nullptr;
  return r;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json j{{"model", json::parse(model_config_to_json(cfg.model))},
         {"training", training_json(cfg.training)},
         {"dataset", dataset_json(cfg.dataset)},
         {"policies", policies_json(cfg.policies)},
         {"seed", cfg.seed},
         {"outdir", cfg.outdir}};
  return j.dump(2) + "\n";
}

ExperimentConfig experiment_config_from_json_text(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig cfg;
  if (j.contains("model")) cfg.model = model_config_from_json_text(j.at("model").dump());
  if (j.contains("training")) {
    const auto& t = j.at("training");
    maybe(t, "batch_size", cfg.training.batch_size);
    maybe(t, "label_smoothing", cfg.training.label_smoothing);
    maybe(t, "grad_clip", cfg.training.grad_clip);
    maybe(t, "weight_decay", cfg.training.adam.weight_decay);
    maybe(t, "beta1", cfg.training.adam.beta1);
    maybe(t, "beta2", cfg.training.adam.beta2);
    maybe(t, "adam_eps", cfg.training.adam.eps);
    maybe(t, "warmup_frac", cfg.training.warmup_frac);
    maybe(t, "warmup_lr", cfg.training.warmup_lr);
    maybe(t, "min_lr", cfg.training.min_lr);
    maybe(t, "reset_optimizer_between_stages", cfg.training.reset_optimizer_between_stages);
    if (t.contains("stages")) {
      cfg.training.stages.clear();
      for (const auto& s : t.at("stages")) {
        StageSpec spec;
        spec.stage = stage_from_name(s.at("stage").get<std::string>());
        spec.epochs = s.at("epochs").get<int>();
        spec.lr = s.at("lr").get<double>();
        cfg.training.stages.push_back(spec);
      }
    }
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    maybe(d, "name", cfg.dataset.name);
    maybe(d, "images_path", cfg.dataset.images_path);
    maybe(d, "labels_path", cfg.dataset.labels_path);
    maybe(d, "train_count", cfg.dataset.train_count);
    maybe(d, "val_count", cfg.dataset.val_count);
    maybe(d, "test_count", cfg.dataset.test_count);
    maybe(d, "seed", cfg.dataset.seed);
    maybe(d, "mean", cfg.dataset.mean);
    maybe(d, "stddev", cfg.dataset.stddev);
    maybe(d, "classes", cfg.dataset.classes);
    maybe(d, "image_size", cfg.dataset.image_size);
    maybe(d, "noise_min", cfg.dataset.noise_min);
    maybe(d, "noise_max", cfg.dataset.noise_max);
  }
  if (j.contains("policies")) {
    const auto& p = j.at("policies");
    maybe(p, "baseline_tokens", cfg.policies.baseline_tokens);
    maybe(p, "ee_taus", cfg.policies.ee_taus);
    maybe(p, "ee_tokens", cfg.policies.ee_tokens);
    maybe(p, "run_reinforce", cfg.policies.run_reinforce);
    maybe(p, "reinforce_lambda", cfg.policies.reinforce.lambda);
    maybe(p, "reinforce_baseline_beta", cfg.policies.reinforce.baseline_beta);
    maybe(p, "reinforce_entropy_coef", cfg.policies.reinforce.entropy_coef);
    maybe(p, "reinforce_lr", cfg.policies.reinforce.lr);
    maybe(p, "reinforce_updates", cfg.policies.reinforce_updates);
    maybe(p, "reinforce_batch", cfg.policies.reinforce_batch);
    maybe(p, "run_oracle", cfg.policies.run_oracle);
    maybe(p, "oracle_over_depths", cfg.policies.oracle_over_depths);
    if (p.contains("reinforce_eval_tau")) {
      if (p.at("reinforce_eval_tau").is_null()) cfg.policies.reinforce_eval_tau.reset();
      else cfg.policies.reinforce_eval_tau = p.at("reinforce_eval_tau").get<double>();
    }
  }
  maybe(j, "seed", cfg.seed);
  maybe(j, "outdir", cfg.outdir);
  cfg.model.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return experiment_config_from_json_text(text);
}

template GridResult eval_grid<float>(const AdaPerceiverT<float>&, const Dataset&,
                                     const std::vector<ConfigTuple>&, const CostConvention&, int);
template GridResult eval_grid<double>(const AdaPerceiverT<double>&, const Dataset&,
                                      const std::vector<ConfigTuple>&, const CostConvention&, int);

}  // namespace adaperceiver
