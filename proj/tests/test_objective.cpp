#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dlmgp/diagnostics.hpp"
#include "dlmgp/errors.hpp"
#include "dlmgp/objective.hpp"
#include "dlmgp/random.hpp"

using namespace dlmgp;

namespace {

const double kLog2Pi = std::log(2.0 * M_PI);

TrainingData regression_data(Index n, Index d, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  TrainingData data;
  data.x.resize(n, d);
  data.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index k = 0; k < d; ++k) {
      data.x(i, k) = 2.0 * rng.uniform() - 1.0;
      s += data.x(i, k);
    }
    data.y(i) = std::sin(3.0 * s) + 0.2 * rng.normal();
  }
  return data;
}

TrainingData binary_data(Index n, std::uint64_t seed) {
  TrainingData data = regression_data(n, 1, seed);
  for (Index i = 0; i < n; ++i) data.y(i) = data.y(i) > 0.0 ? 1.0 : 0.0;
  return data;
}

TrainingData count_data(Index n, std::uint64_t seed) {
  TrainingData data = regression_data(n, 1, seed);
  Xoshiro256 rng(seed + 1);
  for (Index i = 0; i < n; ++i) {
    const double rate = std::exp(0.8 * data.y(i));
    // Knuth's method is fine for these small rates.
    double p = 1.0;
    int k = -1;
    const double limit = std::exp(-rate);
    do {
      ++k;
      p *= rng.uniform();
    } while (p > limit);
    data.y(i) = k;
  }
  return data;
}

KernelModel model_for(const TrainingData& data, Index m, std::uint64_t seed) {
  KernelModel model;
  const Index d = data.x.cols();
  model.kind = d > 1 ? KernelKind::kArdRbf : KernelKind::kIsotropicRbf;
  model.lengthscales = VectorXd::Constant(d > 1 ? d : 1, 0.6);
  if (d > 1) model.lengthscales(1) = 0.9;
  model.signal_variance = 1.4;
  model.noise_variance = 0.3;
  model.jitter = 1e-6;
  Xoshiro256 rng(seed);
  model.inducing.resize(m, d);
  for (Index j = 0; j < m; ++j) {
    for (Index k = 0; k < d; ++k) model.inducing(j, k) = 2.0 * rng.uniform() - 1.0;
  }
  return model;
}

VariationalPosterior random_posterior(Index m, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  VariationalPosterior q;
  q.mean = VectorXd(m);
  q.chol = MatrixXd::Zero(m, m);
  for (Index i = 0; i < m; ++i) {
    q.mean(i) = 0.5 * rng.normal();
    for (Index j = 0; j < i; ++j) q.chol(i, j) = 0.1 * rng.normal();
    q.chol(i, i) = 0.3 + 0.2 * std::abs(rng.normal());
  }
  return q;
}

// Flattens every trainable quantity for finite differencing.
struct Flat {
  Index m, d, nls;
  bool constant_mean;

  Index size() const { return m + m * (m + 1) / 2 + nls + 1 + m * d + 2; }

  VectorXd pack(const KernelModel& model, const VariationalPosterior& q) const {
    VectorXd p(size());
    Index k = 0;
    for (Index i = 0; i < m; ++i) p(k++) = q.mean(i);
    for (Index c = 0; c < m; ++c)
      for (Index r = c; r < m; ++r) p(k++) = q.chol(r, c);
    for (Index t = 0; t < nls; ++t) p(k++) = std::log(model.lengthscales(t));
    p(k++) = std::log(model.signal_variance);
    for (Index j = 0; j < m; ++j)
      for (Index t = 0; t < d; ++t) p(k++) = model.inducing(j, t);
    p(k++) = std::log(model.noise_variance);
    p(k++) = model.mean_constant;
    return p;
  }

  void unpack(const VectorXd& p, KernelModel& model, VariationalPosterior& q) const {
    Index k = 0;
    for (Index i = 0; i < m; ++i) q.mean(i) = p(k++);
    for (Index c = 0; c < m; ++c)
      for (Index r = c; r < m; ++r) q.chol(r, c) = p(k++);
    for (Index t = 0; t < nls; ++t) model.lengthscales(t) = std::exp(p(k++));
    model.signal_variance = std::exp(p(k++));
    for (Index j = 0; j < m; ++j)
      for (Index t = 0; t < d; ++t) model.inducing(j, t) = p(k++);
    model.noise_variance = std::exp(p(k++));
    model.mean_constant = p(k++);
  }

  VectorXd gradient(const ObjectiveGradient& g) const {
    VectorXd a(size());
    Index k = 0;
    for (Index i = 0; i < m; ++i) a(k++) = g.d_mean(i);
    for (Index c = 0; c < m; ++c)
      for (Index r = c; r < m; ++r) a(k++) = g.d_chol(r, c);
    for (Index t = 0; t < nls; ++t) a(k++) = g.hyper->d_log_lengthscales(t);
    a(k++) = g.hyper->d_log_signal_variance;
    for (Index j = 0; j < m; ++j)
      for (Index t = 0; t < d; ++t) a(k++) = g.hyper->d_inducing(j, t);
    a(k++) = g.d_log_noise_variance;
    a(k++) = g.d_mean_constant;
    return a;
  }
};

void check_gradient(const TrainingData& data, KernelModel model, const Likelihood& lik,
                    const ObjectiveSpec& spec, double tol) {
  model.jitter = 1e-4;
  model.mean_kind = MeanKind::kConstant;
  model.mean_constant = 0.2;
  const Index m = model.num_inducing();
  const VariationalPosterior q = random_posterior(m, 77);
  const Flat flat{m, model.input_dim(), model.lengthscales.size(), true};
  EstimatorConfig est;
  est.kind = EstimatorKind::kExact;
  GradientRequest req;
  req.hyperparameters = true;
  const ObjectiveGradient g = objective_gradient(data, model, q, lik, spec, est, req);
  EXPECT_NEAR(g.value, objective_value(data, model, q, lik, spec), 1e-8);
  auto f = [&](const VectorXd& p) {
    KernelModel mm = model;
    VariationalPosterior qq = q;
    flat.unpack(p, mm, qq);
    return objective_value(data, mm, qq, lik, spec);
  };
  const FdReport report = fd_gradient_check(f, flat.pack(model, q), flat.gradient(g), 1e-5);
  EXPECT_LE(report.max_relative_error, tol)
      << to_string(spec.kind) << " worst index " << report.worst_index;
}

}  // namespace

TEST(ObjectiveSpec, Validation) {
  ObjectiveSpec spec;
  EXPECT_NO_THROW(spec.validate());
  spec.beta = -1.0;
  EXPECT_THROW(spec.validate(), InputError);
  EXPECT_EQ(objective_kind_from_string("dlm-square"), ObjectiveKind::kDlmSquare);
  EXPECT_EQ(loss_scaling_from_string("sum"), LossScaling::kSum);
  EXPECT_THROW(objective_kind_from_string("mle"), InputError);
}

TEST(ElboObjective, ZeroResidualZeroVarianceGivesHalfLog2Pi) {
  const ExpectedLoss e = expected_neg_log_lik(Likelihood::gaussian(1.0), 0.7, 0.0, 0.7);
  EXPECT_NEAR(e.value, 0.5 * kLog2Pi, 1e-14);

  // Whole-objective version: inducing inputs at the data, a negligible
  // posterior spread, predictions equal to the labels.
  TrainingData data = regression_data(6, 1, 1);
  KernelModel model = model_for(data, 6, 2);
  model.inducing = data.x;
  model.jitter = 1e-12;
  model.noise_variance = 1.0;
  const KuuFactor factor(model);
  VariationalPosterior q;
  const ProjectionBatch batch = project_batch(model, factor, data.x);
  q.mean = batch.a.transpose().fullPivLu().solve(data.y);
  q.chol = 1e-9 * MatrixXd::Identity(6, 6);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kElbo;
  spec.beta = 0.0;
  spec.scaling = LossScaling::kSum;
  EXPECT_NEAR(elbo_objective(data, model, q, Likelihood::gaussian(1.0), spec),
              6 * 0.5 * kLog2Pi, 1e-6);
  spec.kind = ObjectiveKind::kDlmLog;
  EXPECT_NEAR(dlm_log_objective(data, model, q, Likelihood::gaussian(1.0), spec),
              elbo_objective(data, model, q, Likelihood::gaussian(1.0), spec), 1e-6);
}

TEST(ElboObjective, DominatesDlmLogObjective) {
  const TrainingData reg = regression_data(30, 2, 3);
  const TrainingData bin = binary_data(30, 4);
  const TrainingData cnt = count_data(30, 5);
  ObjectiveSpec spec;
  spec.beta = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const VariationalPosterior q = random_posterior(4, seed);
    for (auto [data, lik] : {std::pair{&reg, Likelihood::gaussian(0.3)},
                             std::pair{&bin, Likelihood::probit()},
                             std::pair{&cnt, Likelihood::poisson_exp()}}) {
      const KernelModel model = model_for(*data, 4, 10 + seed);
      EXPECT_GE(elbo_objective(*data, model, q, lik, spec),
                dlm_log_objective(*data, model, q, lik, spec) - 1e-12);
    }
  }
}

TEST(ElboObjective, MatchesDenseGaussianProcessOracle) {
  // n = M with inducing inputs at the data: the standard (uncollapsed) ELBO
  // computed with dense matrices from scratch.
  const TrainingData data = regression_data(7, 2, 6);
  KernelModel model = model_for(data, 7, 7);
  model.inducing = data.x;
  model.jitter = 1e-6;
  const VariationalPosterior q = random_posterior(7, 8);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kElbo;
  spec.beta = 1.0;
  spec.scaling = LossScaling::kSum;

  const Index n = 7;
  MatrixXd k(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      double s = 0.0;
      for (Index t = 0; t < 2; ++t) {
        const double r = (data.x(i, t) - data.x(j, t)) / model.lengthscales(t);
        s += r * r;
      }
      k(i, j) = model.signal_variance * std::exp(-0.5 * s);
    }
  }
  const MatrixXd kuu = k + model.jitter * MatrixXd::Identity(n, n);
  const MatrixXd kuu_inv = kuu.inverse();
  const MatrixXd a = kuu_inv * k;  // columns a_i
  const MatrixXd v = q.chol * q.chol.transpose();
  const double s2 = model.noise_variance;
  double expected = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double mu = a.col(i).dot(q.mean);
    const double var = a.col(i).dot(v * a.col(i)) + k(i, i) - k.col(i).dot(a.col(i));
    const double r = data.y(i) - mu;
    expected += 0.5 * std::log(2 * M_PI * s2) + (r * r + var) / (2 * s2);
  }
  const double kl = 0.5 * ((kuu_inv * v).trace() + q.mean.dot(kuu_inv * q.mean) - n +
                           std::log(kuu.determinant()) - std::log(v.determinant()));
  EXPECT_NEAR(elbo_objective(data, model, q, Likelihood::gaussian(0.3), spec), expected + kl,
              1e-6);
}

TEST(DlmLogObjective, ZeroMeanProbitGivesLog2) {
  const TrainingData data = binary_data(25, 9);
  const KernelModel model = model_for(data, 5, 10);
  VariationalPosterior q = random_posterior(5, 11);
  q.mean.setZero();
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmLog;
  spec.beta = 0.0;
  spec.scaling = LossScaling::kSum;
  EXPECT_NEAR(dlm_log_objective(data, model, q, Likelihood::probit(), spec), 25 * std::log(2.0),
              1e-12);
  spec.scaling = LossScaling::kMean;
  EXPECT_NEAR(dlm_log_objective(data, model, q, Likelihood::probit(), spec), std::log(2.0),
              1e-12);
}

TEST(DlmLogObjective, RegularizerMinimumIsThePrior) {
  // The KL term and its gradient vanish at q = p(u); any move away raises it.
  const TrainingData data = binary_data(20, 12);
  const KernelModel model = model_for(data, 4, 13);
  const KuuFactor factor(model);
  const VariationalPosterior prior = VariationalPosterior::prior(factor);
  const KlGradient kl = kl_gaussian_with_gradient(prior, factor);
  EXPECT_NEAR(kl.value, 0.0, 1e-10);
  EXPECT_LT(kl.d_mean.norm() + kl.d_chol.norm(), 1e-6);
  const VariationalPosterior other = random_posterior(4, 14);
  EXPECT_GT(kl_gaussian(other, factor), 0.0);
}

TEST(DlmSquareObjective, ZeroPredictorGivesHalfSquaredNorm) {
  TrainingData data = regression_data(15, 1, 15);
  data.y.array() -= data.y.mean();
  const KernelModel model = model_for(data, 4, 16);
  VariationalPosterior q = random_posterior(4, 17);
  q.mean.setZero();
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmSquare;
  spec.beta = 3.0;
  spec.scaling = LossScaling::kSum;
  EXPECT_NEAR(dlm_square_objective(data, model, q, spec), 0.5 * data.y.squaredNorm(), 1e-12);
}

TEST(DlmSquareObjective, MatchesDenseEvaluation) {
  const TrainingData data = regression_data(20, 2, 18);
  const KernelModel model = model_for(data, 5, 19);
  const VariationalPosterior q = random_posterior(5, 20);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmSquare;
  spec.beta = 0.7;
  spec.scaling = LossScaling::kSum;
  const KernelMatrices km = kernel_matrices(model, data.x);
  const MatrixXd kuu_inv = km.kuu.inverse();
  const VectorXd pred = km.kfu * kuu_inv * q.mean;
  const double expected =
      0.5 * (pred - data.y).squaredNorm() + 0.5 * spec.beta * q.mean.dot(kuu_inv * q.mean);
  EXPECT_NEAR(dlm_square_objective(data, model, q, spec), expected, 1e-10);
}

TEST(DlmSquareSolve, InterpolatesWithoutRegularization) {
  TrainingData data = regression_data(5, 1, 21);
  KernelModel model = model_for(data, 5, 22);
  model.inducing = data.x;
  model.lengthscales(0) = 0.3;
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmSquare;
  spec.beta = 0.0;
  spec.scaling = LossScaling::kSum;
  VariationalPosterior q = random_posterior(5, 23);
  q.mean = dlm_square_solve(data, model, spec);
  EXPECT_NEAR(dlm_square_objective(data, model, q, spec), 0.0, 1e-10);
}

TEST(DlmSquareSolve, SingularSystemIsNumericalError) {
  TrainingData data = regression_data(2, 1, 24);
  const KernelModel model = model_for(data, 4, 25);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmSquare;
  spec.beta = 0.0;
  EXPECT_THROW(dlm_square_solve(data, model, spec), NumericalError);
}

TEST(DlmSquareSolve, LargeBetaShrinksToZero) {
  const TrainingData data = regression_data(30, 1, 26);
  const KernelModel model = model_for(data, 5, 27);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmSquare;
  spec.scaling = LossScaling::kSum;
  double previous = INFINITY;
  for (double beta : {1.0, 1e3, 1e6, 1e9}) {
    spec.beta = beta;
    const double norm = dlm_square_solve(data, model, spec).norm();
    EXPECT_LT(norm, previous);
    previous = norm;
  }
  EXPECT_LT(previous, 1e-6);
}

TEST(DlmSquareSolve, StationaryAndMatchesGradientDescent) {
  const TrainingData data = regression_data(40, 1, 28);
  KernelModel model = model_for(data, 5, 29);
  model.jitter = 1e-6;
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmSquare;
  spec.beta = 1.0;
  spec.scaling = LossScaling::kSum;
  const VectorXd solved = dlm_square_solve(data, model, spec);

  const KernelMatrices km = kernel_matrices(model, data.x);
  const MatrixXd phi = km.kfu * km.kuu.inverse();
  const double rhs_norm = (phi.transpose() * data.y).norm();
  EXPECT_LE(dlm_square_gradient(data, model, solved, spec).norm(), 1e-8 * (1.0 + rhs_norm));

  // Plain gradient descent with step 1/L on the quadratic.
  const MatrixXd hess = phi.transpose() * phi + spec.beta * km.kuu.inverse();
  const double lip = Eigen::SelfAdjointEigenSolver<MatrixXd>(hess).eigenvalues().maxCoeff();
  const VectorXd rhs = phi.transpose() * data.y;
  VectorXd m = VectorXd::Zero(5);
  for (int it = 0; it < 50000000; ++it) {
    const VectorXd g = hess * m - rhs;
    if (g.norm() < 1e-11) break;
    m -= g / lip;
  }
  EXPECT_LE((m - solved).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Objectives, InvariantToDataOrder) {
  const TrainingData data = regression_data(25, 2, 30);
  const KernelModel model = model_for(data, 5, 31);
  const VariationalPosterior q = random_posterior(5, 32);
  std::vector<Index> perm(25);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[17]);
  const TrainingData shuffled = data.subset(perm);
  for (ObjectiveKind kind :
       {ObjectiveKind::kElbo, ObjectiveKind::kDlmLog, ObjectiveKind::kDlmSquare}) {
    ObjectiveSpec spec;
    spec.kind = kind;
    spec.beta = 0.5;
    const double a = objective_value(data, model, q, Likelihood::gaussian(0.3), spec);
    const double b = objective_value(shuffled, model, q, Likelihood::gaussian(0.3), spec);
    EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, std::abs(a))) << to_string(kind);
  }
}

TEST(BetaGrid, HalvesDownToHundredth) {
  const std::vector<double> grid = beta_grid(1000.0);
  ASSERT_EQ(grid.size(), 18u);
  EXPECT_EQ(grid.front(), 1000.0);
  for (std::size_t k = 1; k + 1 < grid.size(); ++k) EXPECT_EQ(grid[k], grid[k - 1] / 2);
  EXPECT_NEAR(grid[16], 1000.0 / 65536.0, 1e-15);
  EXPECT_EQ(grid.back(), 0.01);
  EXPECT_EQ(beta_grid(0.005), std::vector<double>{0.01});
  EXPECT_THROW(beta_grid(0.0), InputError);
}

TEST(ObjectiveGradient, ElboGaussianMatchesFiniteDifferences) {
  const TrainingData data = regression_data(12, 2, 40);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kElbo;
  spec.beta = 0.8;
  check_gradient(data, model_for(data, 4, 41), Likelihood::gaussian(0.3), spec, 1e-5);
}

TEST(ObjectiveGradient, ElboProbitMatchesFiniteDifferences) {
  const TrainingData data = binary_data(12, 42);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kElbo;
  spec.scaling = LossScaling::kSum;
  check_gradient(data, model_for(data, 4, 43), Likelihood::probit(), spec, 1e-5);
}

TEST(ObjectiveGradient, DlmLogGaussianMatchesFiniteDifferences) {
  const TrainingData data = regression_data(12, 2, 44);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmLog;
  spec.beta = 2.0;
  check_gradient(data, model_for(data, 4, 45), Likelihood::gaussian(0.3), spec, 1e-5);
}

TEST(ObjectiveGradient, DlmLogProbitMatchesFiniteDifferences) {
  const TrainingData data = binary_data(12, 46);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmLog;
  spec.beta = 0.3;
  spec.scaling = LossScaling::kSum;
  check_gradient(data, model_for(data, 4, 47), Likelihood::probit(), spec, 1e-5);
}

TEST(ObjectiveGradient, DlmLogPoissonMatchesFiniteDifferences) {
  const TrainingData data = count_data(12, 48);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmLog;
  spec.quadrature_nodes = 64;
  check_gradient(data, model_for(data, 4, 49), Likelihood::poisson_exp(), spec, 1e-5);
}

TEST(ObjectiveGradient, DlmSquareMatchesFiniteDifferences) {
  const TrainingData data = regression_data(12, 2, 50);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmSquare;
  spec.beta = 1.5;
  check_gradient(data, model_for(data, 4, 51), Likelihood::gaussian(0.3), spec, 1e-5);
}

TEST(ObjectiveGradient, MinibatchesAverageToFullBatch) {
  const TrainingData data = binary_data(24, 52);
  const KernelModel model = model_for(data, 4, 53);
  const VariationalPosterior q = random_posterior(4, 54);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmLog;
  spec.beta = 0.5;
  EstimatorConfig est;
  GradientRequest full;
  const ObjectiveGradient g = objective_gradient(data, model, q, Likelihood::probit(), spec, est, full);
  VectorXd mean_acc = VectorXd::Zero(4);
  double value_acc = 0.0;
  std::vector<Index> rows(24);
  std::iota(rows.begin(), rows.end(), Index{0});
  for (int b = 0; b < 4; ++b) {
    GradientRequest req;
    req.batch = std::span<const Index>(rows.data() + 6 * b, 6);
    const ObjectiveGradient gb =
        objective_gradient(data, model, q, Likelihood::probit(), spec, est, req);
    mean_acc += gb.d_mean / 4.0;
    value_acc += gb.value / 4.0;
  }
  EXPECT_LT((mean_acc - g.d_mean).norm(), 1e-12);
  EXPECT_NEAR(value_acc, g.value, 1e-12);
}

TEST(ObjectiveGradient, StochasticEstimatorIsReproducible) {
  const TrainingData data = binary_data(20, 55);
  const KernelModel model = model_for(data, 4, 56);
  const VariationalPosterior q = random_posterior(4, 57);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::kDlmLog;
  EstimatorConfig est;
  est.kind = EstimatorKind::kUps;
  est.rng_seed = 9;
  GradientRequest req;
  req.epoch = 2;
  SamplerTelemetry t;
  req.telemetry = &t;
  const ObjectiveGradient a = objective_gradient(data, model, q, Likelihood::probit(), spec, est, req);
  const ObjectiveGradient b = objective_gradient(data, model, q, Likelihood::probit(), spec, est, req);
  EXPECT_EQ(a.d_mean, b.d_mean);
  EXPECT_EQ(a.d_chol, b.d_chol);
  EXPECT_EQ(t.accepted, 2u * 20u * static_cast<std::uint64_t>(est.samples));
}
