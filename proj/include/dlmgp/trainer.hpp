#pragma once

// Adam training loop with the window convergence rule, minibatching, joint or
// fixed-hyperparameter modes, beta selection on validation data, and test
// metrics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dlmgp/data.hpp"
#include "dlmgp/estimator.hpp"
#include "dlmgp/kernel.hpp"
#include "dlmgp/likelihood.hpp"
#include "dlmgp/objective.hpp"
#include "dlmgp/sampler.hpp"

namespace dlmgp {

enum class TrainMode { kJoint, kFixedHyper };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double learning_rate = 1e-1;
  int max_iters = 5000;
  int convergence_window = 50;  // I
  double convergence_tol = 1e-4;
  int batch_size = 0;  // 0 means full batch
  TrainMode mode = TrainMode::kJoint;
  std::uint64_t seed = 0;
  AdamConfig adam;
  // dlm-square joint mode: Adam steps on hyperparameters per closed-form solve.
  int square_hyper_steps = 10;
  // Record monitor metrics every this many iterations (0 disables).
  int monitor_every = 0;
  // Optimize q(u) through v = L_uu^{-1} u, i.e. m = L_uu m_w and L = L_uu L_w,
  // where L_uu is the Cholesky factor of K_uu. The objective is unchanged.
  bool whiten = true;

  // Task-dependent defaults: regression 5000 iterations and I = 50,
  // otherwise 3000 and 20; learning rate 1e-1 full batch, 1e-3 stochastic.
  static TrainConfig defaults(Task task, bool stochastic);
  void validate() const;
};

struct TracePoint {
  int iter = 0;
  double objective = 0.0;
  double wall_ms = 0.0;
};

struct MetricPoint {
  int iter = 0;
  double nll = 0.0;
};

struct Metrics {
  double nll = 0.0;
  std::optional<double> mse;
  std::optional<double> error_rate;
  std::optional<double> mre;
};

struct TrainResult {
  KernelModel model;
  VariationalPosterior q;
  Likelihood lik;
  std::vector<TracePoint> trace;
  std::vector<MetricPoint> monitor;
  bool converged = false;
  int converged_iter = -1;
  int iterations = 0;
  bool diverged = false;
  std::string failure;
  double wall_ms = 0.0;
  SamplerTelemetry telemetry;
};

struct TrainInit {
  KernelModel model;
  // Defaults to m = 0, V = K_uu.
  std::optional<VariationalPosterior> q;
  // Held-out data for the monitor trace.
  const TrainingData* monitor = nullptr;
  Task monitor_task = Task::kRegression;
};

// Runs Adam on (m, L) and, in joint mode, on the log lengthscales, log
// signal variance, log noise variance, constant mean and inducing inputs. A
// non-finite objective or gradient stops training with diverged = true.
// dlm-square solves for m in closed form: once in fixed-hyper mode, and
// alternating with hyperparameter steps in joint mode.
TrainResult train(const TrainingData& data, const Likelihood& lik,
                  const ObjectiveSpec& spec, const EstimatorConfig& est,
                  const TrainConfig& cfg, const TrainInit& init);

Metrics evaluate(const KernelModel& model, const VariationalPosterior& q,
                 const Likelihood& lik, const TrainingData& test, Task task);

struct BetaRecord {
  double beta = 0.0;
  double score = 0.0;  // validation NLL, or MSE for dlm-square
  bool failed = false;
  std::string failure;
  bool converged = false;
  int iterations = 0;
};

struct BetaSelection {
  double best_beta = 0.0;
  std::vector<BetaRecord> records;
  std::optional<TrainResult> best;
};

// Trains one model per beta in beta_grid(n_train) and keeps the one with the
// lowest validation score; equal scores favour the larger beta. A beta whose
// training fails is recorded and skipped.
BetaSelection select_beta(const TrainingData& train_data,
                          const TrainingData& validation, Task task,
                          const Likelihood& lik, const ObjectiveSpec& spec,
                          const EstimatorConfig& est, const TrainConfig& cfg,
                          const TrainInit& init);

// Score used by select_beta.
double validation_score(const TrainResult& result, const TrainingData& data,
                        Task task, ObjectiveKind kind);

}  // namespace dlmgp
