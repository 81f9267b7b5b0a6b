#include "dlmgp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "dlmgp/errors.hpp"
#include "dlmgp/random.hpp"

namespace dlmgp {

std::string to_string(TrainMode mode) {
  return mode == TrainMode::kJoint ? "joint" : "fixed-hyper";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "joint") return TrainMode::kJoint;
  if (name == "fixed-hyper") return TrainMode::kFixedHyper;
  throw InputError("unknown training mode '" + name + "'");
}

TrainConfig TrainConfig::defaults(Task task, bool stochastic) {
  TrainConfig cfg;
  cfg.learning_rate = stochastic ? 1e-3 : 1e-1;
  cfg.max_iters = task == Task::kRegression ? 5000 : 3000;
  cfg.convergence_window = task == Task::kRegression ? 50 : 20;
  return cfg;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InputError("learning rate must be positive");
  if (max_iters < 1) throw InputError("max_iters must be at least 1");
  if (convergence_window < 2) {
    throw InputError("convergence window must be at least 2");
  }
  if (!(convergence_tol >= 0.0)) {
    throw InputError("convergence tolerance must be non-negative");
  }
  if (batch_size < 0) throw InputError("batch size must be non-negative");
  if (square_hyper_steps < 1) {
    throw InputError("square_hyper_steps must be at least 1");
  }
  if (monitor_every < 0) throw InputError("monitor_every must be non-negative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
    throw InputError("invalid Adam settings");
  }
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Flat parameter vector:
//   [m; lower(L) with log diagonal; log lengthscales; log signal variance;
//    log noise variance; mean constant; Z row-major]
// with the variational and hyperparameter blocks each optional.
struct Layout {
  Index m = 0;
  Index d = 0;
  Index n_ls = 0;
  bool variational = true;
  bool hypers = false;
  bool noise = false;
  bool mean_constant = false;

  Index tri() const { return m * (m + 1) / 2; }
  Index size() const {
    Index s = 0;
    if (variational) s += m + tri();
    if (hypers) {
      s += n_ls + 1 + (noise ? 1 : 0) + (mean_constant ? 1 : 0) + m * d;
    }
    return s;
  }
};

Layout make_layout(const KernelModel& model, const Likelihood& lik,
                   const ObjectiveSpec& spec, bool variational, bool hypers) {
  Layout l;
  l.m = model.num_inducing();
  l.d = model.input_dim();
  l.n_ls = model.lengthscales.size();
  l.variational = variational;
  l.hypers = hypers;
  l.noise = lik.kind == LikelihoodKind::kGaussian &&
            spec.kind != ObjectiveKind::kDlmSquare;
  l.mean_constant = model.mean_kind == MeanKind::kConstant;
  return l;
}

VectorXd pack(const Layout& l, const KernelModel& model,
              const VariationalPosterior& q) {
  VectorXd theta(l.size());
  Index p = 0;
  if (l.variational) {
    theta.segment(p, l.m) = q.mean;
    p += l.m;
    for (Index c = 0; c < l.m; ++c) {
      theta(p++) = std::log(q.chol(c, c));
      for (Index r = c + 1; r < l.m; ++r) theta(p++) = q.chol(r, c);
    }
  }
  if (l.hypers) {
    for (Index k = 0; k < l.n_ls; ++k) theta(p++) = std::log(model.lengthscales(k));
    theta(p++) = std::log(model.signal_variance);
    if (l.noise) theta(p++) = std::log(model.noise_variance);
    if (l.mean_constant) theta(p++) = model.mean_constant;
    for (Index j = 0; j < l.m; ++j) {
      for (Index k = 0; k < l.d; ++k) theta(p++) = model.inducing(j, k);
    }
  }
  return theta;
}

void unpack(const Layout& l, const VectorXd& theta, KernelModel& model,
            VariationalPosterior& q) {
  Index p = 0;
  if (l.variational) {
    q.mean = theta.segment(p, l.m);
    p += l.m;
    q.chol = MatrixXd::Zero(l.m, l.m);
    for (Index c = 0; c < l.m; ++c) {
      q.chol(c, c) = std::exp(theta(p++));
      for (Index r = c + 1; r < l.m; ++r) q.chol(r, c) = theta(p++);
    }
  }
  if (l.hypers) {
    for (Index k = 0; k < l.n_ls; ++k) model.lengthscales(k) = std::exp(theta(p++));
    model.signal_variance = std::exp(theta(p++));
    if (l.noise) model.noise_variance = std::exp(theta(p++));
    if (l.mean_constant) model.mean_constant = theta(p++);
    for (Index j = 0; j < l.m; ++j) {
      for (Index k = 0; k < l.d; ++k) model.inducing(j, k) = theta(p++);
    }
  }
}

VectorXd flatten_gradient(const Layout& l, const ObjectiveGradient& g,
                          const VariationalPosterior& q) {
  VectorXd grad(l.size());
  Index p = 0;
  if (l.variational) {
    grad.segment(p, l.m) = g.d_mean;
    p += l.m;
    for (Index c = 0; c < l.m; ++c) {
      grad(p++) = g.d_chol(c, c) * q.chol(c, c);
      for (Index r = c + 1; r < l.m; ++r) grad(p++) = g.d_chol(r, c);
    }
  }
  if (l.hypers) {
    const HyperGradient& h = *g.hyper;
    for (Index k = 0; k < l.n_ls; ++k) grad(p++) = h.d_log_lengthscales(k);
    grad(p++) = h.d_log_signal_variance;
    if (l.noise) grad(p++) = g.d_log_noise_variance;
    if (l.mean_constant) grad(p++) = g.d_mean_constant;
    for (Index j = 0; j < l.m; ++j) {
      for (Index k = 0; k < l.d; ++k) grad(p++) = h.d_inducing(j, k);
    }
  }
  return grad;
}

// Replaces the (m, L) gradients in g by gradients for the whitened
// parameters w and folds the dependence of L_uu on the kernel into g.hyper.
void pull_back_whitened(const KernelModel& model, const KuuFactor& factor,
                        const VariationalPosterior& w, ObjectiveGradient& g) {
  WhitenedGradient wg = whitened_gradient(w, factor, g.d_mean, g.d_chol);
  if (g.hyper) {
    const RowMatrix none(0, model.input_dim());
    const MatrixXd empty(model.num_inducing(), 0);
    const HyperGradient extra =
        kernel_backward(model, none, empty, empty, factor, wg.d_kuu, 0.0);
    g.hyper->d_log_lengthscales += extra.d_log_lengthscales;
    g.hyper->d_log_signal_variance += extra.d_log_signal_variance;
    g.hyper->d_inducing += extra.d_inducing;
  }
  g.d_mean = std::move(wg.d_mean);
  g.d_chol = std::move(wg.d_chol);
}

class Adam {
 public:
  Adam(Index size, double lr, const AdamConfig& cfg)
      : lr_(lr), cfg_(cfg), m_(VectorXd::Zero(size)), v_(VectorXd::Zero(size)) {}

  void step(VectorXd& theta, const VectorXd& grad) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    theta.array() -=
        lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
  }

 private:
  double lr_;
  AdamConfig cfg_;
  VectorXd m_;
  VectorXd v_;
  long t_ = 0;
};

bool window_converged(const std::vector<TracePoint>& trace, int window,
                      double tol) {
  if (trace.size() < static_cast<std::size_t>(window)) return false;
  double lo = trace.back().objective;
  double hi = lo;
  for (std::size_t k = trace.size() - static_cast<std::size_t>(window);
       k < trace.size(); ++k) {
    lo = std::min(lo, trace[k].objective);
    hi = std::max(hi, trace[k].objective);
  }
  return hi - lo <= tol;
}

// Optimizer steps can push log-parameters to +-inf; that is divergence, not
// bad input.
void check_iterate(const VectorXd& theta, const KernelModel& model) {
  if (!theta.allFinite()) throw NumericalError("parameters are not finite");
  try {
    model.validate();
  } catch (const InputError& e) {
    throw NumericalError(std::string("hyperparameters left the valid range: ") + e.what());
  }
}

void mark_diverged(TrainResult& result, const std::string& why) {
  result.diverged = true;
  result.failure = why;
}

void maybe_monitor(TrainResult& result, const TrainConfig& cfg,
                   const TrainInit& init, int iter) {
  if (cfg.monitor_every <= 0 || init.monitor == nullptr) return;
  if (iter % cfg.monitor_every != 0) return;
  const Metrics metrics =
      evaluate(result.model, result.q, result.lik, *init.monitor, init.monitor_task);
  result.monitor.push_back({iter, metrics.nll});
}

void train_square(const TrainingData& data, const ObjectiveSpec& spec,
                  const EstimatorConfig& est, const TrainConfig& cfg,
                  TrainResult& result, Clock::time_point start) {
  auto solve_and_record = [&](int round) {
    result.q.mean = dlm_square_solve(data, result.model, spec);
    const double value = dlm_square_objective(data, result.model, result.q, spec);
    if (!std::isfinite(value)) throw NumericalError("objective is not finite");
    result.trace.push_back({round, value, elapsed_ms(start)});
  };

  if (cfg.mode == TrainMode::kFixedHyper) {
    solve_and_record(0);
    result.converged = true;
    result.converged_iter = 0;
    result.iterations = 1;
    return;
  }

  const Layout layout = make_layout(result.model, result.lik, spec, false, true);
  VectorXd theta = pack(layout, result.model, result.q);
  Adam adam(theta.size(), cfg.learning_rate, cfg.adam);
  const int rounds = std::max(1, cfg.max_iters / cfg.square_hyper_steps);
  GradientRequest request;
  request.hyperparameters = true;
  for (int round = 0; round < rounds; ++round) {
    solve_and_record(round);
    result.iterations = round + 1;
    if (window_converged(result.trace, cfg.convergence_window,
                         cfg.convergence_tol)) {
      result.converged = true;
      result.converged_iter = round;
      return;
    }
    for (int s = 0; s < cfg.square_hyper_steps; ++s) {
      const ObjectiveGradient g = objective_gradient(
          data, result.model, result.q, result.lik, spec, est, request);
      const VectorXd grad = flatten_gradient(layout, g, result.q);
      if (!grad.allFinite()) throw NumericalError("gradient is not finite");
      adam.step(theta, grad);
      unpack(layout, theta, result.model, result.q);
      check_iterate(theta, result.model);
    }
  }
  solve_and_record(rounds);
}

}  // namespace

TrainResult train(const TrainingData& data, const Likelihood& lik,
                  const ObjectiveSpec& spec, const EstimatorConfig& est,
                  const TrainConfig& cfg, const TrainInit& init) {
  spec.validate();
  est.validate();
  cfg.validate();
  init.model.validate();
  if (data.size() == 0) throw InputError("training data is empty");
  if (data.x.cols() != init.model.input_dim()) {
    throw InputError("training inputs and inducing inputs differ in dimension");
  }
  for (Index i = 0; i < data.size(); ++i) check_observation(lik, data.y(i));

  const auto start = Clock::now();
  TrainResult result;
  result.model = init.model;
  result.lik = bind_likelihood(lik, init.model);
  {
    const KuuFactor factor(result.model);
    result.q = init.q ? *init.q : VariationalPosterior::prior(factor);
  }
  if (result.q.size() != result.model.num_inducing()) {
    throw InputError("initial posterior does not match the number of inducing inputs");
  }

  try {
    if (spec.kind == ObjectiveKind::kDlmSquare) {
      train_square(data, spec, est, cfg, result, start);
    } else {
      const bool joint = cfg.mode == TrainMode::kJoint;
      const Layout layout = make_layout(result.model, lik, spec, true, joint);
      // `w` holds the optimized variational parameters; it is q itself when
      // whitening is off.
      VariationalPosterior w = result.q;
      if (cfg.whiten) w = whiten(result.q, KuuFactor(result.model));
      VectorXd theta = pack(layout, result.model, w);
      Adam adam(theta.size(), cfg.learning_rate, cfg.adam);
      GradientRequest request;
      request.hyperparameters = joint;
      request.telemetry = &result.telemetry;

      const Index n = data.size();
      const bool stochastic = cfg.batch_size > 0 && cfg.batch_size < n;
      std::vector<Index> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), Index{0});
      const Index batch = stochastic ? cfg.batch_size : n;
      const Index per_epoch = (n + batch - 1) / batch;

      for (int it = 0; it < cfg.max_iters; ++it) {
        request.epoch = static_cast<std::uint64_t>(it);
        const Index slot = it % per_epoch;
        if (stochastic && slot == 0) {
          const double value =
              objective_value(data, result.model, result.q, result.lik, spec);
          if (!std::isfinite(value)) throw NumericalError("objective is not finite");
          result.trace.push_back({it, value, elapsed_ms(start)});
          if (window_converged(result.trace, cfg.convergence_window,
                               cfg.convergence_tol)) {
            result.converged = true;
            result.converged_iter = it;
            break;
          }
          Xoshiro256 rng = make_stream(cfg.seed, static_cast<std::uint64_t>(it),
                                       0xBA7C);
          std::shuffle(order.begin(), order.end(), rng);
        }
        if (stochastic) {
          const Index begin = slot * batch;
          const Index count = std::min(batch, n - begin);
          request.batch = std::span<const Index>(
              order.data() + begin, static_cast<std::size_t>(count));
        }
        maybe_monitor(result, cfg, init, it);
        ObjectiveGradient g = objective_gradient(
            data, result.model, result.q, result.lik, spec, est, request);
        if (!std::isfinite(g.value)) throw NumericalError("objective is not finite");
        if (!stochastic) {
          result.trace.push_back({it, g.value, elapsed_ms(start)});
          if (window_converged(result.trace, cfg.convergence_window,
                               cfg.convergence_tol)) {
            result.converged = true;
            result.converged_iter = it;
            result.iterations = it;
            break;
          }
        }
        if (cfg.whiten) pull_back_whitened(result.model, KuuFactor(result.model), w, g);
        const VectorXd grad = flatten_gradient(layout, g, w);
        if (!grad.allFinite()) throw NumericalError("gradient is not finite");
        adam.step(theta, grad);
        unpack(layout, theta, result.model, w);
        check_iterate(theta, result.model);
        result.q = cfg.whiten ? unwhiten(w, KuuFactor(result.model)) : w;
        result.lik = bind_likelihood(lik, result.model);
        result.iterations = it + 1;
      }
    }
  } catch (const NumericalError& e) {
    mark_diverged(result, e.what());
  }
  result.wall_ms = elapsed_ms(start);
  return result;
}

Metrics evaluate(const KernelModel& model, const VariationalPosterior& q,
                 const Likelihood& lik, const TrainingData& test, Task task) {
  const Index n = test.size();
  if (n == 0) throw InputError("evaluation data is empty");
  const Likelihood bound = bind_likelihood(lik, model);
  const KuuFactor factor(model);
  const ProjectionBatch batch = project_batch(model, factor, test.x);
  const MarginalMoments mom = marginal_moments(batch, q);
  constexpr int kNodes = 64;

  Metrics out;
  double nll = 0.0;
  double sq = 0.0;
  double errors = 0.0;
  double rel = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double mu = mom.mean(i);
    const double v = mom.variance(i);
    const double y = test.y(i);
    nll += log_predictive(bound, mu, v, y, kNodes);
    switch (task) {
      case Task::kRegression: {
        const double pred = predictive_mean(bound, mu, v).value_or(mu);
        sq += (pred - y) * (pred - y);
        break;
      }
      case Task::kBinary: {
        const double p1 = std::exp(-log_predictive(bound, mu, v, 1.0, kNodes));
        const double label = p1 >= 0.5 ? 1.0 : 0.0;
        if (label != y) errors += 1.0;
        break;
      }
      case Task::kCount: {
        const auto analytic = predictive_mean(bound, mu, v);
        const double pred =
            analytic ? *analytic : quadrature_predictive_mean(bound, mu, v, kNodes);
        rel += std::abs(pred - y) / std::max(1.0, y);
        break;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.nll = nll * inv;
  if (task == Task::kRegression) out.mse = sq * inv;
  if (task == Task::kBinary) out.error_rate = errors * inv;
  if (task == Task::kCount) out.mre = rel * inv;
  return out;
}

double validation_score(const TrainResult& result, const TrainingData& data,
                        Task task, ObjectiveKind kind) {
  if (kind == ObjectiveKind::kDlmSquare) {
    const KuuFactor factor(result.model);
    const ProjectionBatch batch = project_batch(result.model, factor, data.x);
    const MarginalMoments mom = marginal_moments(batch, result.q);
    return (mom.mean - data.y).squaredNorm() / static_cast<double>(data.size());
  }
  return evaluate(result.model, result.q, result.lik, data, task).nll;
}

BetaSelection select_beta(const TrainingData& train_data,
                          const TrainingData& validation, Task task,
                          const Likelihood& lik, const ObjectiveSpec& spec,
                          const EstimatorConfig& est, const TrainConfig& cfg,
                          const TrainInit& init) {
  if (validation.size() == 0) throw InputError("validation set is empty");
  BetaSelection out;
  bool have_best = false;
  double best_score = 0.0;
  for (double beta : beta_grid(static_cast<double>(train_data.size()))) {
    ObjectiveSpec cell = spec;
    cell.beta = beta;
    BetaRecord record;
    record.beta = beta;
    TrainResult result = train(train_data, lik, cell, est, cfg, init);
    record.converged = result.converged;
    record.iterations = result.iterations;
    if (result.diverged) {
      record.failed = true;
      record.failure = result.failure;
    } else {
      try {
        record.score = validation_score(result, validation, task, spec.kind);
        if (!std::isfinite(record.score)) {
          record.failed = true;
          record.failure = "validation score is not finite";
        }
      } catch (const NumericalError& e) {
        record.failed = true;
        record.failure = e.what();
      }
    }
    if (!record.failed && (!have_best || record.score < best_score)) {
      have_best = true;
      best_score = record.score;
      out.best_beta = beta;
      out.best = std::move(result);
    }
    out.records.push_back(std::move(record));
  }
  if (!have_best) throw NumericalError("training failed for every beta");
  return out;
}

}  // namespace dlmgp
