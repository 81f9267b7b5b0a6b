#pragma once

// Empirical checks of estimator behaviour and likelihood bounds: bias against
// a reference gradient, descent-condition constants, derivative bound checks
// over a grid, finite-difference gradient checks, and the theoretical
// sample-size / smoothing schedules.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dlmgp/estimator.hpp"
#include "dlmgp/kernel.hpp"
#include "dlmgp/likelihood.hpp"

namespace dlmgp {

// Observations sharing one variational posterior. The gradient of interest is
// the sum over points of -log E_q[p(y_i|f_i)] with respect to (m, L).
struct BiasFixture {
  Likelihood lik;
  VariationalPosterior q;
  std::vector<MarginalProjection> points;
  std::vector<double> y;
};

// Projections of every row of x under (model, q) at the model's current
// parameters.
BiasFixture make_bias_fixture(const KernelModel& model,
                              const VariationalPosterior& q,
                              const Likelihood& lik, const RowMatrix& x,
                              const VectorXd& y);

enum class ReferenceKind { kExact, kBmc };

std::string to_string(ReferenceKind kind);
ReferenceKind reference_kind_from_string(const std::string& name);

struct BiasOptions {
  EstimatorConfig estimator;
  ReferenceKind reference = ReferenceKind::kExact;
  int reference_samples = 10000;
  int repeats = 1000;
  std::uint64_t seed = 0;
};

struct BiasReport {
  EstimatorKind kind = EstimatorKind::kExact;
  int samples = 0;
  ReferenceKind reference = ReferenceKind::kExact;
  int reference_samples = 0;  // 0 for an exact reference
  int repeats = 0;
  // Coordinates are [grad_m; lower(grad_L) column by column].
  VectorXd reference_gradient;
  VectorXd mean_estimate;
  VectorXd bias;
  VectorXd standard_error;
  double bias_norm = 0.0;
  double bias_norm_m = 0.0;
  double bias_norm_chol = 0.0;
  // Descent-condition constants with s = mean estimate:
  //   c1 = g'E[g_hat] / |g|^2, c2 = |E[g_hat]| / |g|.
  double c1_mean = 0.0;
  double c2_mean = 0.0;
  // Same constants per individual estimate: c1 is the minimum and c2 the
  // maximum over repeats.
  double c1_worst = 0.0;
  double c2_worst = 0.0;
  // Smallest (1/L) sum_l p(y|f_l) seen in bMC-type estimates; NaN otherwise.
  double min_mean_likelihood = 0.0;
  std::uint64_t zero_likelihood_events = 0;
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;
};

// Throws InputError if options.repeats < 30.
BiasReport estimate_bias(const BiasFixture& fixture, const BiasOptions& options);

// Flattened single estimate of the fixture gradient.
VectorXd fixture_gradient(const BiasFixture& fixture, const EstimatorConfig& cfg,
                          std::uint64_t seed, std::uint64_t repeat,
                          SamplerTelemetry* telemetry = nullptr);
VectorXd fixture_exact_gradient(const BiasFixture& fixture, int quadrature_nodes = 64);

struct BoundExtrema {
  double y = 0.0;
  double max_phi = 0.0;
  double argmax_phi = 0.0;
  double max_d1 = 0.0;
  double argmax_d1 = 0.0;
  double min_d1 = 0.0;
  double argmin_d1 = 0.0;
  double max_d2 = 0.0;
  double argmax_d2 = 0.0;
  double min_d2 = 0.0;
  double argmin_d2 = 0.0;
  DerivativeBounds bounds;
};

struct BoundCheck {
  bool pass = true;
  // Smallest of bound - value (upper bounds) and value - bound (lower bounds)
  // over all y and grid points.
  double worst_slack = 0.0;
  std::string worst_quantity;
  double worst_y = 0.0;
  double worst_f = 0.0;
  std::vector<BoundExtrema> per_y;
};

// Evenly spaced grid on [lo, hi] with `count` points.
std::vector<double> uniform_grid(double lo, double hi, std::size_t count);

// Checks 0 <= p <= B, b' <= p' <= B', b'' <= p'' <= B'' at every (y, f).
// A bound counts as violated when the slack is below -tol * max(1, |bound|).
BoundCheck check_bounds(const Likelihood& lik, std::span<const double> ys,
                        std::span<const double> grid, double tol = 1e-12);

struct FdReport {
  double max_relative_error = 0.0;
  Index worst_index = -1;
  VectorXd numeric;
};

// Central differences of `f` at `params` compared with `analytic`, using
// |a - b| / max(1, |a|, |b|) per coordinate.
FdReport fd_gradient_check(const std::function<double(const VectorXd&)>& f,
                           const VectorXd& params, const VectorXd& analytic,
                           double step = 1e-5);

enum class GammaSchedule { kInverse, kConstant };
enum class DeltaSchedule { kInverseSquare, kGammaFourth };

struct ScheduleOptions {
  GammaSchedule gamma = GammaSchedule::kInverse;
  double gamma0 = 0.5;  // gamma_t = gamma0 / t, or gamma0 if constant
  DeltaSchedule delta = DeltaSchedule::kInverseSquare;
  double delta_total = 0.1;
  int horizon = 10;
  std::int64_t n_data = 100;
  double bound_constant = 1.0;  // M in the sample-size bound
  double zeta = 1e-3;           // assumed lower bound on E[p]
};

struct ScheduleRow {
  int t = 0;
  double gamma = 0.0;
  double delta = 0.0;
  double sample_bound = 0.0;  // log(6n/delta_t) / (2 gamma_t^2) * M
  std::int64_t samples = 0;   // smallest integer exceeding sample_bound
  double growth_proxy = 0.0;  // t^2 log(n t)
  double nu = 0.0;            // gamma_t * zeta
};

std::vector<ScheduleRow> schedule_calculator(const ScheduleOptions& options);

}  // namespace dlmgp
