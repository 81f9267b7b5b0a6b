#pragma once

// Dataset ingestion (CSV with a header, libsvm), seeded train/validation/test
// splits with training-split normalization, and small synthetic generators.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dlmgp/kernel.hpp"
#include "dlmgp/objective.hpp"

namespace dlmgp {

enum class Task { kRegression, kBinary, kCount };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

struct Dataset {
  std::string name;
  Task task = Task::kRegression;
  RowMatrix features;
  VectorXd labels;
  std::string provenance;

  Index size() const { return labels.size(); }
  // Throws InputError on NaN/Inf or labels outside the task's domain.
  void validate() const;
};

enum class DataFormat { kCsv, kLibsvm };

DataFormat data_format_from_string(const std::string& name);
std::string to_string(DataFormat format);

// `label_column` names the CSV label column; when empty, a column called "y"
// or "label" is used, otherwise the last column. Non-numeric CSV columns are
// dummy coded with one indicator per category except the first one seen.
// Binary labels may be given as {0, 1} or {-1, 1}.
Dataset parse_csv(std::istream& in, Task task, const std::string& label_column,
                  const std::string& name = "csv");
Dataset parse_libsvm(std::istream& in, Task task,
                     const std::string& name = "libsvm");
Dataset load_dataset(const std::string& path, DataFormat format, Task task,
                     const std::string& label_column = "");

struct NormalizationStats {
  VectorXd feature_mean;
  VectorXd feature_scale;  // standard deviation, 1 for constant columns
  double label_mean = 0.0;
  double label_scale = 1.0;
  bool labels_normalized = false;
};

struct DataSplit {
  TrainingData train;
  TrainingData validation;
  TrainingData test;
  NormalizationStats stats;
  // Fraction of label 1 in each split (binary tasks only).
  double train_positive_rate = 0.0;
};

// Regression: 67/8/25 train/validation/test. Binary and count: 10%
// validation, test min(1000, 25%), rest training. Rows are shuffled with
// `seed`; features (and regression labels) are z-scored with statistics
// computed on the training rows only.
DataSplit split_and_normalize(const Dataset& data, std::uint64_t seed);

NormalizationStats compute_stats(const TrainingData& train, bool normalize_labels);
void apply_stats(const NormalizationStats& stats, TrainingData& data);

// y = sin(3x) + N(0, noise_sd^2), x ~ U(-2, 2).
Dataset make_sine_regression(Index n, double noise_sd, std::uint64_t seed);
// label = [sin(3x) + N(0, noise_sd^2) > 0], x ~ U(-2, 2).
Dataset make_sine_probit(Index n, double noise_sd, std::uint64_t seed);
// Two interleaved half circles in 2-D with Gaussian jitter.
Dataset make_two_moons(Index n, double noise_sd, std::uint64_t seed);
// y ~ Poisson(exp(1 + sin(2x))), x ~ U(-2, 2).
Dataset make_log_rate_poisson(Index n, std::uint64_t seed);

// Generate by name: sine, sine-probit, two-moons, poisson.
Dataset make_synthetic(const std::string& kind, Index n, double noise_sd,
                       std::uint64_t seed);

}  // namespace dlmgp
