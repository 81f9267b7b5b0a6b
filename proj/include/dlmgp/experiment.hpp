#pragma once

// Experiment configuration (JSON), the split -> normalize -> train/select ->
// evaluate pipeline over repetitions, model persistence, and long-format
// curve tables.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlmgp/data.hpp"
#include "dlmgp/estimator.hpp"
#include "dlmgp/likelihood.hpp"
#include "dlmgp/objective.hpp"
#include "dlmgp/trainer.hpp"

namespace dlmgp {

using Json = nlohmann::json;

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | file
  std::string name = "sine";         // generator name for synthetic data
  std::string path;
  DataFormat format = DataFormat::kCsv;
  Task task = Task::kRegression;
  std::string label_column;
  Index n = 500;
  double noise_sd = 0.3;
  // Synthetic data are drawn once with this seed; without it each
  // repetition draws fresh data with its own seed.
  std::optional<std::uint64_t> data_seed;
};

struct ModelConfig {
  Index num_inducing = 20;
  KernelKind kernel = KernelKind::kIsotropicRbf;
  std::optional<MeanKind> mean;  // default: constant for binary, zero otherwise
};

struct ExperimentConfig {
  std::string label;  // series name in curve tables; defaults to objective/estimator
  DatasetConfig dataset;
  Likelihood likelihood;
  ObjectiveSpec objective;
  EstimatorConfig estimator;
  TrainConfig train;
  ModelConfig model;
  bool select_beta = false;
  int repetitions = 1;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> split_seeds;  // overrides seed + r when given
  std::string out_dir;

  std::uint64_t repetition_seed(int r) const;
  std::string series_label() const;
  void validate() const;
};

// Missing fields take defaults; training defaults depend on the task and on
// whether a minibatch size is set.
ExperimentConfig config_from_json(const Json& j);
Json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

// Dataset for repetition seed `seed` (synthetic or loaded from file).
Dataset materialize_dataset(const DatasetConfig& cfg, std::uint64_t seed);

struct RepetitionRecord {
  int repetition = 0;
  std::uint64_t seed = 0;
  double beta = 0.0;
  std::optional<Metrics> metrics;
  bool converged = false;
  int iterations = 0;
  bool failed = false;
  std::string failure;
  std::vector<BetaRecord> beta_records;  // select-beta runs only
  SamplerTelemetry telemetry;
  std::optional<TrainResult> result;
  NormalizationStats stats;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RepetitionRecord> repetitions;
  Json metrics;  // the content of metrics.json
};

// Runs every repetition. Training failures are recorded per repetition;
// sampling failures propagate as SamplingError. When cfg.out_dir is set,
// writes config.resolved.json, metrics.json, telemetry.json,
// traces/rep<r>.csv and models/rep<r>.json.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Trained model, posterior, likelihood and normalization statistics.
Json model_to_json(const TrainResult& result, const NormalizationStats& stats,
                   Task task);
struct SavedModel {
  KernelModel model;
  VariationalPosterior q;
  Likelihood lik;
  NormalizationStats stats;
  Task task = Task::kRegression;
};
SavedModel model_from_json(const Json& j);

Json metrics_to_json(const Metrics& m);

// Long-format rows (series, x_kind, x, metric, y) from metrics.json contents:
// beta sweeps give (beta, validation score) rows and monitored runs give
// (iteration, test NLL) rows. Empty input yields the header only.
void emit_curves(const std::vector<Json>& results, std::ostream& out);

void write_trace_csv(const std::vector<TracePoint>& trace, std::ostream& out);

}  // namespace dlmgp
