#include "dlmgp/objective.hpp"

#include <cmath>
#include <numeric>

#include "dlmgp/errors.hpp"

namespace dlmgp {

TrainingData TrainingData::subset(std::span<const Index> rows) const {
  TrainingData out;
  out.x.resize(static_cast<Index>(rows.size()), x.cols());
  out.y.resize(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.x.row(static_cast<Index>(r)) = x.row(rows[r]);
    out.y(static_cast<Index>(r)) = y(rows[r]);
  }
  return out;
}

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kElbo: return "elbo";
    case ObjectiveKind::kDlmLog: return "dlm-log";
    case ObjectiveKind::kDlmSquare: return "dlm-square";
  }
  return "unknown";
}

ObjectiveKind objective_kind_from_string(const std::string& name) {
  for (auto kind : {ObjectiveKind::kElbo, ObjectiveKind::kDlmLog,
                    ObjectiveKind::kDlmSquare}) {
    if (to_string(kind) == name) return kind;
  }
  throw InputError("unknown objective '" + name + "'");
}

std::string to_string(LossScaling scaling) {
  return scaling == LossScaling::kSum ? "sum" : "mean";
}

LossScaling loss_scaling_from_string(const std::string& name) {
  if (name == "sum") return LossScaling::kSum;
  if (name == "mean") return LossScaling::kMean;
  throw InputError("unknown loss scaling '" + name + "'");
}

void ObjectiveSpec::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw InputError("beta must be a finite non-negative number");
  }
  if (quadrature_nodes < 2) {
    throw InputError("objective quadrature needs at least 2 nodes");
  }
}

Likelihood bind_likelihood(const Likelihood& lik, const KernelModel& model) {
  Likelihood out = lik;
  if (out.kind == LikelihoodKind::kGaussian) out.variance = model.noise_variance;
  return out;
}

namespace {

double scale_factor(const ObjectiveSpec& spec, Index n) {
  return spec.scaling == LossScaling::kMean ? 1.0 / static_cast<double>(n) : 1.0;
}

double square_regularizer(const KuuFactor& factor, const VectorXd& m) {
  return 0.5 * m.dot(factor.solve(m));
}

template <class Term>
double sum_terms(const TrainingData& data, const KernelModel& model,
                 const VariationalPosterior& q, Term term,
                 const KuuFactor& factor) {
  const ProjectionBatch batch = project_batch(model, factor, data.x);
  const MarginalMoments mom = marginal_moments(batch, q);
  double total = 0.0;
  for (Index i = 0; i < data.size(); ++i) {
    total += term(mom.mean(i), mom.variance(i), data.y(i));
  }
  return total;
}

}  // namespace

double elbo_objective(const TrainingData& data, const KernelModel& model,
                      const VariationalPosterior& q, const Likelihood& lik,
                      const ObjectiveSpec& spec) {
  const KuuFactor factor(model);
  const Likelihood bound = bind_likelihood(lik, model);
  const double data_term = sum_terms(
      data, model, q,
      [&](double mu, double v, double y) {
        return expected_neg_log_lik(bound, mu, v, y, spec.quadrature_nodes).value;
      },
      factor);
  return scale_factor(spec, data.size()) *
         (data_term + spec.beta * kl_gaussian(q, factor));
}

double dlm_log_objective(const TrainingData& data, const KernelModel& model,
                         const VariationalPosterior& q, const Likelihood& lik,
                         const ObjectiveSpec& spec) {
  const KuuFactor factor(model);
  const Likelihood bound = bind_likelihood(lik, model);
  const double data_term = sum_terms(
      data, model, q,
      [&](double mu, double v, double y) {
        return log_predictive(bound, mu, v, y, spec.quadrature_nodes);
      },
      factor);
  return scale_factor(spec, data.size()) *
         (data_term + spec.beta * kl_gaussian(q, factor));
}

double dlm_square_objective(const TrainingData& data, const KernelModel& model,
                            const VariationalPosterior& q,
                            const ObjectiveSpec& spec) {
  const KuuFactor factor(model);
  const ProjectionBatch batch = project_batch(model, factor, data.x);
  const VectorXd resid =
      (batch.a.transpose() * q.mean).array() + batch.b1 - data.y.array();
  const double value =
      0.5 * resid.squaredNorm() + spec.beta * square_regularizer(factor, q.mean);
  return scale_factor(spec, data.size()) * value;
}

double objective_value(const TrainingData& data, const KernelModel& model,
                       const VariationalPosterior& q, const Likelihood& lik,
                       const ObjectiveSpec& spec) {
  switch (spec.kind) {
    case ObjectiveKind::kElbo: return elbo_objective(data, model, q, lik, spec);
    case ObjectiveKind::kDlmLog:
      return dlm_log_objective(data, model, q, lik, spec);
    case ObjectiveKind::kDlmSquare:
      return dlm_square_objective(data, model, q, spec);
  }
  return 0.0;
}

VectorXd dlm_square_solve(const TrainingData& data, const KernelModel& model,
                          const ObjectiveSpec& spec) {
  const KuuFactor factor(model);
  const ProjectionBatch batch = project_batch(model, factor, data.x);
  const MatrixXd& phi_t = batch.a;  // Phi' = K_uu^{-1} K_uf
  MatrixXd system = phi_t * phi_t.transpose();
  if (spec.beta > 0.0) system += spec.beta * factor.inverse();
  system = 0.5 * (system + system.transpose()).eval();
  const VectorXd rhs = phi_t * (data.y.array() - batch.b1).matrix();

  Eigen::LLT<MatrixXd> llt(system);
  const double diag_max = system.diagonal().cwiseAbs().maxCoeff();
  bool singular = llt.info() != Eigen::Success || !(diag_max > 0.0);
  if (!singular) {
    const double min_pivot = llt.matrixL().toDenseMatrix().diagonal().minCoeff();
    singular = min_pivot * min_pivot < 1e-14 * diag_max;
  }
  if (singular) {
    throw NumericalError(
        "square-loss system is singular; use beta > 0 to regularize");
  }
  VectorXd m = llt.solve(rhs);
  for (int refine = 0; refine < 3; ++refine) {
    const VectorXd residual = rhs - system * m;
    m += llt.solve(residual);
  }
  return m;
}

VectorXd dlm_square_gradient(const TrainingData& data, const KernelModel& model,
                             const VectorXd& m, const ObjectiveSpec& spec) {
  const KuuFactor factor(model);
  const ProjectionBatch batch = project_batch(model, factor, data.x);
  const VectorXd resid =
      (batch.a.transpose() * m).array() + batch.b1 - data.y.array();
  VectorXd grad = batch.a * resid;
  if (spec.beta > 0.0) grad += spec.beta * factor.solve(m);
  return scale_factor(spec, data.size()) * grad;
}

std::vector<double> beta_grid(double n) {
  if (!(n > 0.0)) throw InputError("beta grid needs a positive data size");
  std::vector<double> grid;
  for (double b = n; b >= 0.01; b /= 2.0) grid.push_back(b);
  if (grid.empty() || grid.back() != 0.01) grid.push_back(0.01);
  return grid;
}

ObjectiveGradient objective_gradient(const TrainingData& data,
                                     const KernelModel& model,
                                     const VariationalPosterior& q,
                                     const Likelihood& lik,
                                     const ObjectiveSpec& spec,
                                     const EstimatorConfig& est,
                                     const GradientRequest& request) {
  const Index n = data.size();
  std::vector<Index> rows;
  if (request.batch.empty()) {
    rows.resize(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Index{0});
  } else {
    rows.assign(request.batch.begin(), request.batch.end());
  }
  const auto nb = static_cast<Index>(rows.size());
  const TrainingData part =
      request.batch.empty() ? data : data.subset(rows);

  const double reg_scale = scale_factor(spec, n);
  const double data_scale =
      reg_scale * static_cast<double>(n) / static_cast<double>(nb);

  const KuuFactor factor(model);
  const Likelihood bound = bind_likelihood(lik, model);
  const ProjectionBatch batch = project_batch(model, factor, part.x);
  const MarginalMoments mom = marginal_moments(batch, q);

  MomentAdjoint adjoint{VectorXd::Zero(nb), VectorXd::Zero(nb)};
  double data_value = 0.0;
  double d_lik_variance = 0.0;

  switch (spec.kind) {
    case ObjectiveKind::kElbo: {
      const bool analytic = est.kind == EstimatorKind::kExact ||
                            bound.kind == LikelihoodKind::kGaussian;
      for (Index i = 0; i < nb; ++i) {
        const double mu = mom.mean(i), v = mom.variance(i), y = part.y(i);
        const ExpectedLoss loss =
            expected_neg_log_lik(bound, mu, v, y, spec.quadrature_nodes);
        data_value += loss.value;
        MomentGradient g{loss.d_mu, loss.d_var, loss.d_lik_variance};
        if (!analytic) {
          Xoshiro256 rng = make_stream(
              est.rng_seed, request.epoch,
              static_cast<std::uint64_t>(rows[static_cast<std::size_t>(i)]));
          g = reparam_expected_loss_gradient(bound, y, mu, v, est.samples, rng);
        }
        adjoint.d_mu(i) = g.d_mu;
        adjoint.d_var(i) = g.d_var;
        d_lik_variance += g.d_lik_variance;
      }
      break;
    }
    case ObjectiveKind::kDlmLog: {
      std::vector<std::uint64_t> ids(rows.begin(), rows.end());
      const std::span<const double> ys(part.y.data(), static_cast<std::size_t>(nb));
      const std::span<const double> mus(mom.mean.data(), static_cast<std::size_t>(nb));
      const std::span<const double> vs(mom.variance.data(),
                                       static_cast<std::size_t>(nb));
      const std::vector<MomentGradient> grads = log_expectation_gradients(
          bound, ys, mus, vs, ids, est, request.epoch, request.telemetry);
      for (Index i = 0; i < nb; ++i) {
        data_value += log_predictive(bound, mom.mean(i), mom.variance(i),
                                     part.y(i), spec.quadrature_nodes);
        const MomentGradient& g = grads[static_cast<std::size_t>(i)];
        adjoint.d_mu(i) = g.d_mu;
        adjoint.d_var(i) = g.d_var;
        d_lik_variance += g.d_lik_variance;
      }
      break;
    }
    case ObjectiveKind::kDlmSquare: {
      for (Index i = 0; i < nb; ++i) {
        const double r = mom.mean(i) - part.y(i);
        data_value += 0.5 * r * r;
        adjoint.d_mu(i) = r;
      }
      break;
    }
  }

  adjoint.d_mu *= data_scale;
  adjoint.d_var *= data_scale;
  PosteriorAndKernelGradient back = backprop_moments(batch, q, factor, adjoint);

  ObjectiveGradient out;
  out.d_mean = std::move(back.d_mean);
  out.d_chol = std::move(back.d_chol);
  MatrixXd d_kuu = std::move(back.d_kuu);

  double reg_value = 0.0;
  if (spec.kind == ObjectiveKind::kDlmSquare) {
    const VectorXd kinv_m = factor.solve(q.mean);
    reg_value = 0.5 * q.mean.dot(kinv_m);
    if (spec.beta > 0.0) {
      const double w = spec.beta * reg_scale;
      out.d_mean += w * kinv_m;
      d_kuu -= 0.5 * w * kinv_m * kinv_m.transpose();
    }
  } else {
    const KlGradient kl = kl_gaussian_with_gradient(q, factor);
    reg_value = kl.value;
    if (spec.beta > 0.0) {
      const double w = spec.beta * reg_scale;
      out.d_mean += w * kl.d_mean;
      out.d_chol += w * kl.d_chol;
      d_kuu += w * kl.d_kuu;
    }
  }
  out.value = data_scale * data_value + reg_scale * spec.beta * reg_value;

  if (request.hyperparameters) {
    out.hyper = kernel_backward(model, part.x, batch.kuf, back.d_kuf, factor,
                                d_kuu, back.d_kff_sum);
    if (bound.kind == LikelihoodKind::kGaussian &&
        spec.kind != ObjectiveKind::kDlmSquare) {
      out.d_log_noise_variance =
          data_scale * d_lik_variance * model.noise_variance;
    }
    if (model.mean_kind == MeanKind::kConstant) {
      out.d_mean_constant = back.d_mean_offset;
    }
  }
  return out;
}

}  // namespace dlmgp
