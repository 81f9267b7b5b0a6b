#include "dlmgp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dlmgp/errors.hpp"
#include "dlmgp/random.hpp"

namespace dlmgp {

BiasFixture make_bias_fixture(const KernelModel& model,
                              const VariationalPosterior& q,
                              const Likelihood& lik, const RowMatrix& x,
                              const VectorXd& y) {
  const KuuFactor factor(model);
  const ProjectionBatch batch = project_batch(model, factor, x);
  BiasFixture out;
  out.lik = lik;
  out.q = q;
  for (Index i = 0; i < x.rows(); ++i) {
    out.points.push_back(batch.point(i));
    out.y.push_back(y(i));
  }
  return out;
}

std::string to_string(ReferenceKind kind) {
  return kind == ReferenceKind::kExact ? "exact" : "bmc";
}

ReferenceKind reference_kind_from_string(const std::string& name) {
  if (name == "exact") return ReferenceKind::kExact;
  if (name == "bmc") return ReferenceKind::kBmc;
  throw InputError("unknown reference '" + name + "'");
}

namespace {

VectorXd flatten(const PointGradient& g) {
  const Index m = g.grad_m.size();
  VectorXd out(m + m * (m + 1) / 2);
  out.head(m) = g.grad_m;
  Index p = m;
  for (Index c = 0; c < m; ++c) {
    for (Index r = c; r < m; ++r) out(p++) = g.grad_chol(r, c);
  }
  return out;
}

}  // namespace

VectorXd fixture_gradient(const BiasFixture& fixture, const EstimatorConfig& cfg,
                          std::uint64_t seed, std::uint64_t repeat,
                          SamplerTelemetry* telemetry) {
  VectorXd total;
  for (std::size_t i = 0; i < fixture.points.size(); ++i) {
    Xoshiro256 rng = make_stream(seed, repeat, i);
    const double y = fixture.y[i];
    const MarginalProjection& proj = fixture.points[i];
    PointGradient g;
    switch (cfg.kind) {
      case EstimatorKind::kExact:
        g = reparam_gradient_exact(y, fixture.lik, fixture.q, proj,
                                   cfg.exact_quadrature_nodes);
        break;
      case EstimatorKind::kBmc:
        g = bmc_gradient(y, fixture.lik, fixture.q, proj, cfg, rng, telemetry);
        break;
      case EstimatorKind::kSmoothBmc:
        g = smooth_bmc_gradient(y, fixture.lik, fixture.q, proj, cfg, rng,
                                telemetry);
        break;
      case EstimatorKind::kUps:
        g = ups_gradient(y, fixture.lik, fixture.q, proj, cfg, rng, telemetry);
        break;
    }
    const VectorXd flat = flatten(g);
    if (total.size() == 0) {
      total = flat;
    } else {
      total += flat;
    }
  }
  return total;
}

VectorXd fixture_exact_gradient(const BiasFixture& fixture, int quadrature_nodes) {
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::kExact;
  cfg.exact_quadrature_nodes = quadrature_nodes;
  return fixture_gradient(fixture, cfg, 0, 0);
}

BiasReport estimate_bias(const BiasFixture& fixture, const BiasOptions& options) {
  if (options.repeats < 30) throw InputError("bias estimation needs >= 30 repeats");
  if (fixture.points.empty()) throw InputError("bias fixture has no points");
  options.estimator.validate();

  BiasReport report;
  report.kind = options.estimator.kind;
  report.samples = options.estimator.samples;
  report.reference = options.reference;
  report.repeats = options.repeats;

  if (options.reference == ReferenceKind::kExact) {
    report.reference_gradient =
        fixture_exact_gradient(fixture, options.estimator.exact_quadrature_nodes);
  } else {
    EstimatorConfig ref = options.estimator;
    ref.kind = EstimatorKind::kBmc;
    ref.samples = options.reference_samples;
    report.reference_samples = options.reference_samples;
    report.reference_gradient =
        fixture_gradient(fixture, ref, options.seed ^ 0xA5A5A5A5ULL, 0);
  }

  const VectorXd& g = report.reference_gradient;
  const Index dim = g.size();
  const double g_norm2 = g.squaredNorm();
  // Welford running mean and sum of squared deviations.
  VectorXd mean = VectorXd::Zero(dim);
  VectorXd m2 = VectorXd::Zero(dim);
  double c1_worst = std::numeric_limits<double>::infinity();
  double c2_worst = 0.0;
  SamplerTelemetry telemetry;
  for (int r = 0; r < options.repeats; ++r) {
    const VectorXd est = fixture_gradient(fixture, options.estimator, options.seed,
                                          static_cast<std::uint64_t>(r), &telemetry);
    const VectorXd delta = est - mean;
    mean += delta / static_cast<double>(r + 1);
    m2 += delta.cwiseProduct(est - mean);
    if (g_norm2 > 0.0) {
      c1_worst = std::min(c1_worst, g.dot(est) / g_norm2);
      c2_worst = std::max(c2_worst, est.norm() / std::sqrt(g_norm2));
    }
  }
  const double reps = static_cast<double>(options.repeats);
  report.mean_estimate = mean;
  report.bias = report.mean_estimate - g;
  report.standard_error = (m2.cwiseMax(0.0) / ((reps - 1.0) * reps)).cwiseSqrt();
  report.bias_norm = report.bias.norm();
  const Index m = fixture.q.size();
  report.bias_norm_m = report.bias.head(m).norm();
  report.bias_norm_chol = report.bias.tail(dim - m).norm();
  if (g_norm2 > 0.0) {
    report.c1_mean = g.dot(report.mean_estimate) / g_norm2;
    report.c2_mean = report.mean_estimate.norm() / std::sqrt(g_norm2);
    report.c1_worst = c1_worst;
    report.c2_worst = c2_worst;
  }
  report.min_mean_likelihood = telemetry.has_min_mean_likelihood
                                   ? telemetry.min_mean_likelihood
                                   : std::numeric_limits<double>::quiet_NaN();
  report.zero_likelihood_events = telemetry.zero_likelihood_events;
  report.accepted = telemetry.accepted;
  report.rejected = telemetry.rejected;
  return report;
}

std::vector<double> uniform_grid(double lo, double hi, std::size_t count) {
  if (count < 2 || !(hi > lo)) throw InputError("invalid grid");
  std::vector<double> grid(count);
  const double step = (hi - lo) / static_cast<double>(count - 1);
  for (std::size_t k = 0; k < count; ++k) {
    grid[k] = lo + step * static_cast<double>(k);
  }
  return grid;
}

BoundCheck check_bounds(const Likelihood& lik, std::span<const double> ys,
                        std::span<const double> grid, double tol) {
  BoundCheck out;
  out.worst_slack = std::numeric_limits<double>::infinity();
  auto consider = [&](double slack, double bound, const char* what, double y,
                      double f) {
    if (slack < out.worst_slack) {
      out.worst_slack = slack;
      out.worst_quantity = what;
      out.worst_y = y;
      out.worst_f = f;
    }
    if (slack < -tol * std::max(1.0, std::abs(bound))) out.pass = false;
  };
  for (double y : ys) {
    check_observation(lik, y);
    BoundExtrema ext;
    ext.y = y;
    ext.bounds = derivative_bounds(lik, y);
    const DerivativeBounds& b = ext.bounds;
    ext.max_phi = ext.max_d1 = ext.max_d2 = -std::numeric_limits<double>::infinity();
    ext.min_d1 = ext.min_d2 = std::numeric_limits<double>::infinity();
    for (double f : grid) {
      const PhiValues p = phi(lik, y, f);
      if (p.value > ext.max_phi) { ext.max_phi = p.value; ext.argmax_phi = f; }
      if (p.d1 > ext.max_d1) { ext.max_d1 = p.d1; ext.argmax_d1 = f; }
      if (p.d1 < ext.min_d1) { ext.min_d1 = p.d1; ext.argmin_d1 = f; }
      if (p.d2 > ext.max_d2) { ext.max_d2 = p.d2; ext.argmax_d2 = f; }
      if (p.d2 < ext.min_d2) { ext.min_d2 = p.d2; ext.argmin_d2 = f; }
      consider(p.value, 0.0, "phi >= 0", y, f);
      consider(b.upper - p.value, b.upper, "phi <= B", y, f);
      consider(p.d1 - b.lower_d1, b.lower_d1, "phi' >= b'", y, f);
      consider(b.upper_d1 - p.d1, b.upper_d1, "phi' <= B'", y, f);
      consider(p.d2 - b.lower_d2, b.lower_d2, "phi'' >= b''", y, f);
      consider(b.upper_d2 - p.d2, b.upper_d2, "phi'' <= B''", y, f);
    }
    out.per_y.push_back(ext);
  }
  return out;
}

FdReport fd_gradient_check(const std::function<double(const VectorXd&)>& f,
                           const VectorXd& params, const VectorXd& analytic,
                           double step) {
  if (params.size() != analytic.size()) {
    throw InputError("parameter and gradient sizes differ");
  }
  FdReport out;
  out.numeric.resize(params.size());
  VectorXd x = params;
  for (Index k = 0; k < params.size(); ++k) {
    const double h = step * std::max(1.0, std::abs(params(k)));
    x(k) = params(k) + h;
    const double up = f(x);
    x(k) = params(k) - h;
    const double down = f(x);
    x(k) = params(k);
    out.numeric(k) = (up - down) / (2.0 * h);
    const double a = analytic(k);
    const double b = out.numeric(k);
    const double rel =
        std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
    if (rel > out.max_relative_error || out.worst_index < 0) {
      out.max_relative_error = std::max(out.max_relative_error, rel);
      out.worst_index = k;
    }
  }
  return out;
}

std::vector<ScheduleRow> schedule_calculator(const ScheduleOptions& options) {
  if (options.horizon < 1) throw InputError("schedule horizon must be >= 1");
  if (!(options.delta_total > 0.0 && options.delta_total < 1.0)) {
    throw InputError("delta must lie in (0, 1)");
  }
  if (options.n_data < 1) throw InputError("n_data must be positive");
  const double pi = std::acos(-1.0);
  std::vector<ScheduleRow> rows;
  for (int t = 1; t <= options.horizon; ++t) {
    ScheduleRow row;
    row.t = t;
    const double td = static_cast<double>(t);
    row.gamma = options.gamma == GammaSchedule::kInverse ? options.gamma0 / td
                                                         : options.gamma0;
    if (!(row.gamma > 0.0 && row.gamma < 1.0)) {
      throw InputError("gamma_t must lie in (0, 1)");
    }
    row.delta = options.delta == DeltaSchedule::kInverseSquare
                    ? 6.0 / (pi * pi) * options.delta_total / (td * td)
                    : std::pow(row.gamma, 4);
    row.sample_bound =
        std::log(6.0 * static_cast<double>(options.n_data) / row.delta) /
        (2.0 * row.gamma * row.gamma) * options.bound_constant;
    row.samples = static_cast<std::int64_t>(std::floor(row.sample_bound)) + 1;
    row.growth_proxy = td * td * std::log(static_cast<double>(options.n_data) * td);
    row.nu = row.gamma * options.zeta;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dlmgp
