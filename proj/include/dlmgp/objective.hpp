#pragma once

// Training objectives for sparse variational GPs:
//   elbo        sum_i E_q[-log p(y_i|f_i)]  + beta * KL(q(u) || p(u))
//   dlm-log     sum_i -log E_q[p(y_i|f_i)]  + beta * KL(q(u) || p(u))
//   dlm-square  1/2 sum_i (mu_i - y_i)^2    + beta/2 * m' K_uu^{-1} m
// With mean scaling, the whole objective is divided by n.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlmgp/estimator.hpp"
#include "dlmgp/kernel.hpp"
#include "dlmgp/likelihood.hpp"
#include "dlmgp/sampler.hpp"

namespace dlmgp {

struct TrainingData {
  RowMatrix x;
  VectorXd y;

  Index size() const { return y.size(); }
  TrainingData subset(std::span<const Index> rows) const;
};

enum class ObjectiveKind { kElbo, kDlmLog, kDlmSquare };
enum class LossScaling { kSum, kMean };

std::string to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& name);
std::string to_string(LossScaling scaling);
LossScaling loss_scaling_from_string(const std::string& name);

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::kDlmLog;
  double beta = 1.0;
  LossScaling scaling = LossScaling::kMean;
  // Gauss-Hermite order for objective values without a closed form.
  int quadrature_nodes = 20;

  void validate() const;
};

// The Gaussian likelihood's variance is a model parameter; this returns `lik`
// with that variance substituted.
Likelihood bind_likelihood(const Likelihood& lik, const KernelModel& model);

double elbo_objective(const TrainingData& data, const KernelModel& model,
                      const VariationalPosterior& q, const Likelihood& lik,
                      const ObjectiveSpec& spec);
double dlm_log_objective(const TrainingData& data, const KernelModel& model,
                         const VariationalPosterior& q, const Likelihood& lik,
                         const ObjectiveSpec& spec);
double dlm_square_objective(const TrainingData& data, const KernelModel& model,
                            const VariationalPosterior& q,
                            const ObjectiveSpec& spec);

// Dispatch on spec.kind.
double objective_value(const TrainingData& data, const KernelModel& model,
                       const VariationalPosterior& q, const Likelihood& lik,
                       const ObjectiveSpec& spec);

// Minimizer of the square-loss objective in m. Throws NumericalError when the
// system is singular (only possible with beta = 0).
VectorXd dlm_square_solve(const TrainingData& data, const KernelModel& model,
                          const ObjectiveSpec& spec);

// Gradient of dlm_square_objective with respect to m.
VectorXd dlm_square_gradient(const TrainingData& data, const KernelModel& model,
                             const VectorXd& m, const ObjectiveSpec& spec);

// n, n/2, n/4, ... while >= 0.01, then 0.01.
std::vector<double> beta_grid(double n);

struct ObjectiveGradient {
  double value = 0.0;  // deterministic objective on the batch (scaled)
  VectorXd d_mean;
  MatrixXd d_chol;  // lower triangular
  // Present only when hyperparameter gradients were requested.
  std::optional<HyperGradient> hyper;
  double d_log_noise_variance = 0.0;
  double d_mean_constant = 0.0;
};

struct GradientRequest {
  bool hyperparameters = false;
  // Rows of `data` forming the minibatch; empty means the full data set.
  std::span<const Index> batch;
  std::uint64_t epoch = 0;
  SamplerTelemetry* telemetry = nullptr;
};

// Objective value and gradient with respect to (m, L) and optionally the log
// hyperparameters, mean constant and inducing inputs. On a minibatch the
// data term is rescaled by n/|batch| and the regularizer is kept whole.
// Stochastic estimators draw from per-point streams keyed by the row index.
ObjectiveGradient objective_gradient(const TrainingData& data,
                                     const KernelModel& model,
                                     const VariationalPosterior& q,
                                     const Likelihood& lik,
                                     const ObjectiveSpec& spec,
                                     const EstimatorConfig& est,
                                     const GradientRequest& request);

}  // namespace dlmgp
