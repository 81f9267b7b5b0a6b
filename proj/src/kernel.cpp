#include "dlmgp/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dlmgp/errors.hpp"
#include "dlmgp/random.hpp"
#include "dlmgp/simd.hpp"

namespace dlmgp {

VectorXd KernelModel::inverse_lengthscales() const {
  const Index d = input_dim();
  VectorXd inv(d);
  for (Index k = 0; k < d; ++k) {
    const double ell =
        kind == KernelKind::kIsotropicRbf ? lengthscales(0) : lengthscales(k);
    inv(k) = 1.0 / ell;
  }
  return inv;
}

void KernelModel::validate() const {
  if (inducing.rows() == 0 || inducing.cols() == 0) {
    throw InputError("kernel model has no inducing inputs");
  }
  const Index expected =
      kind == KernelKind::kIsotropicRbf ? 1 : inducing.cols();
  if (lengthscales.size() != expected) {
    throw InputError("kernel model expects " + std::to_string(expected) +
                     " lengthscale(s), got " +
                     std::to_string(lengthscales.size()));
  }
  if ((lengthscales.array() <= 0.0).any() || !(signal_variance > 0.0) ||
      !(noise_variance > 0.0) || !(jitter > 0.0)) {
    throw InputError("kernel hyperparameters must be strictly positive");
  }
  if (!inducing.allFinite() || !lengthscales.allFinite()) {
    throw InputError("kernel model contains non-finite values");
  }
}

KernelModel make_default_model(const RowMatrix& x, Index num_inducing,
                               KernelKind kind, MeanKind mean_kind,
                               std::uint64_t seed) {
  if (num_inducing < 1 || num_inducing > x.rows()) {
    throw InputError("number of inducing points must lie in [1, n_train]");
  }
  KernelModel model;
  model.kind = kind;
  model.lengthscales =
      VectorXd::Ones(kind == KernelKind::kIsotropicRbf ? 1 : x.cols());
  model.signal_variance = 1.0;
  model.noise_variance = 0.1;
  model.jitter = 1e-6 * model.signal_variance;
  model.mean_kind = mean_kind;
  model.mean_constant = 0.0;

  std::vector<Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  Xoshiro256 rng = make_stream(seed, 0, 0x1D0C);
  for (Index j = 0; j < num_inducing; ++j) {
    const auto remaining = static_cast<std::uint64_t>(x.rows() - j);
    const auto pick = static_cast<Index>(rng() % remaining) + j;
    std::swap(order[static_cast<std::size_t>(j)],
              order[static_cast<std::size_t>(pick)]);
  }
  model.inducing.resize(num_inducing, x.cols());
  for (Index j = 0; j < num_inducing; ++j) {
    model.inducing.row(j) = x.row(order[static_cast<std::size_t>(j)]);
  }
  return model;
}

void kernel_row(const KernelModel& model, std::span<const double> x,
                std::span<double> out) {
  const VectorXd inv = model.inverse_lengthscales();
  simd::scaled_sq_dist(
      x, std::span<const double>(model.inducing.data(), model.inducing.size()),
      std::span<const double>(inv.data(), inv.size()), out);
  simd::rbf_from_sq_dist(out, model.signal_variance, out);
}

namespace {

MatrixXd cross_kernel(const KernelModel& model, const RowMatrix& x) {
  if (x.cols() != model.input_dim()) {
    throw InputError("input dimension " + std::to_string(x.cols()) +
                     " does not match model dimension " +
                     std::to_string(model.input_dim()));
  }
  const Index m = model.num_inducing();
  // Column-major M x n: column i is k(Z, x_i), contiguous.
  MatrixXd kuf(m, x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    kernel_row(model,
               std::span<const double>(x.row(i).data(),
                                       static_cast<std::size_t>(x.cols())),
               std::span<double>(kuf.col(i).data(), static_cast<std::size_t>(m)));
  }
  return kuf;
}

MatrixXd inducing_kernel(const KernelModel& model) {
  MatrixXd kuu = cross_kernel(model, model.inducing);
  // Exact symmetry regardless of SIMD rounding.
  kuu = 0.5 * (kuu + kuu.transpose()).eval();
  return kuu;
}

}  // namespace

KernelMatrices kernel_matrices(const KernelModel& model, const RowMatrix& x) {
  model.validate();
  KernelMatrices out;
  out.kuu = inducing_kernel(model);
  out.kuu.diagonal().array() += model.jitter;
  out.kfu = cross_kernel(model, x).transpose();
  out.kff_diag = VectorXd::Constant(x.rows(), model.signal_variance);
  return out;
}

KuuFactor::KuuFactor(const KernelModel& model) {
  model.validate();
  const MatrixXd base = inducing_kernel(model);
  constexpr double kMaxJitter = 1e-2;
  double jitter = model.jitter;
  while (true) {
    kuu_ = base;
    kuu_.diagonal().array() += jitter;
    llt_.compute(kuu_);
    bool ok = llt_.info() == Eigen::Success;
    if (ok) {
      const auto diag = llt_.matrixLLT().diagonal();
      ok = diag.allFinite() && (diag.array() > 0.0).all();
    }
    if (ok) break;
    if (jitter >= kMaxJitter) {
      throw NumericalError("Cholesky of K_uu failed even with jitter " +
                           std::to_string(jitter));
    }
    jitter = std::min(jitter * 10.0, kMaxJitter);
  }
  jitter_ = jitter;
  inverse_ = llt_.solve(MatrixXd::Identity(kuu_.rows(), kuu_.cols()));
  inverse_ = 0.5 * (inverse_ + inverse_.transpose()).eval();
}

double KuuFactor::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

VariationalPosterior VariationalPosterior::prior(const KuuFactor& factor) {
  VariationalPosterior q;
  q.mean = VectorXd::Zero(factor.size());
  q.chol = factor.llt().matrixL();
  return q;
}

MarginalProjection marginal_projection(const KernelModel& model,
                                       const KuuFactor& factor,
                                       std::span<const double> x) {
  if (static_cast<Index>(x.size()) != model.input_dim()) {
    throw InputError("input dimension does not match model dimension");
  }
  VectorXd k(model.num_inducing());
  kernel_row(model, x, std::span<double>(k.data(), static_cast<std::size_t>(k.size())));
  MarginalProjection proj;
  proj.a1 = factor.solve(k);
  proj.a2 = proj.a1;
  proj.b1 = model.mean_offset();
  proj.b2 = std::max(0.0, model.signal_variance - k.dot(proj.a1));
  return proj;
}

MarginalProjection ProjectionBatch::point(Index i) const {
  MarginalProjection proj;
  proj.a1 = a.col(i);
  proj.a2 = proj.a1;
  proj.b1 = b1;
  proj.b2 = b2(i);
  return proj;
}

ProjectionBatch project_batch(const KernelModel& model, const KuuFactor& factor,
                              const RowMatrix& x) {
  ProjectionBatch batch;
  batch.kuf = cross_kernel(model, x);
  batch.a = factor.solve(batch.kuf);
  batch.b1 = model.mean_offset();
  batch.b2.resize(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double explained = batch.kuf.col(i).dot(batch.a.col(i));
    batch.b2(i) = std::max(0.0, model.signal_variance - explained);
  }
  return batch;
}

MarginalMoments marginal_moments(const ProjectionBatch& batch,
                                 const VariationalPosterior& q) {
  MarginalMoments moments;
  moments.mean = batch.a.transpose() * q.mean;
  moments.mean.array() += batch.b1;
  const MatrixXd projected = q.chol.transpose() * batch.a;
  moments.variance = projected.colwise().squaredNorm().transpose() + batch.b2;
  return moments;
}

KlGradient kl_gaussian_with_gradient(const VariationalPosterior& q,
                                     const KuuFactor& factor) {
  const Index m = factor.size();
  const auto& llt = factor.llt();
  const MatrixXd whitened_chol = llt.matrixL().solve(q.chol);
  const VectorXd whitened_mean = llt.matrixL().solve(q.mean);
  const double log_det_v =
      2.0 * q.chol.diagonal().array().abs().log().sum();
  KlGradient grad;
  const double kl = 0.5 * (whitened_chol.squaredNorm() +
                           whitened_mean.squaredNorm() - static_cast<double>(m) +
                           factor.log_det() - log_det_v);
  grad.value = std::max(0.0, kl);

  const MatrixXd& kinv = factor.inverse();
  grad.d_mean = kinv * q.mean;
  // dKL/dL = K^{-1} L - L^{-T}
  const MatrixXd chol_inv_t =
      q.chol.triangularView<Eigen::Lower>()
          .solve(MatrixXd::Identity(m, m))
          .transpose();
  grad.d_chol = (kinv * q.chol - chol_inv_t).triangularView<Eigen::Lower>();
  const MatrixXd kinv_l = kinv * q.chol;
  grad.d_kuu = 0.5 * (kinv - kinv_l * kinv_l.transpose() -
                      grad.d_mean * grad.d_mean.transpose());
  return grad;
}

double kl_gaussian(const VariationalPosterior& q, const KuuFactor& factor) {
  const auto& llt = factor.llt();
  const MatrixXd whitened_chol = llt.matrixL().solve(q.chol);
  const VectorXd whitened_mean = llt.matrixL().solve(q.mean);
  const double log_det_v = 2.0 * q.chol.diagonal().array().abs().log().sum();
  const double kl =
      0.5 * (whitened_chol.squaredNorm() + whitened_mean.squaredNorm() -
             static_cast<double>(factor.size()) + factor.log_det() - log_det_v);
  return std::max(0.0, kl);
}

PosteriorAndKernelGradient backprop_moments(const ProjectionBatch& batch,
                                            const VariationalPosterior& q,
                                            const KuuFactor& factor,
                                            const MomentAdjoint& adjoint) {
  PosteriorAndKernelGradient out;
  const MatrixXd& a = batch.a;
  out.d_mean = a * adjoint.d_mu;
  const MatrixXd a_scaled = a * adjoint.d_var.asDiagonal();
  const MatrixXd d_cov = a_scaled * a.transpose();
  out.d_chol = (2.0 * d_cov * q.chol).triangularView<Eigen::Lower>();

  const MatrixXd cov = q.covariance();
  MatrixXd alpha = q.mean * adjoint.d_mu.transpose();
  alpha.noalias() += 2.0 * cov * a_scaled;
  const MatrixXd p = factor.inverse() * alpha;
  out.d_kuf = p - 2.0 * a_scaled;
  out.d_kuu = -p * a.transpose() + d_cov;
  out.d_kff_sum = adjoint.d_var.sum();
  out.d_mean_offset = adjoint.d_mu.sum();
  return out;
}

VariationalPosterior unwhiten(const VariationalPosterior& w,
                              const KuuFactor& factor) {
  const auto l_uu = factor.llt().matrixL();
  VariationalPosterior q;
  q.mean = l_uu * w.mean;
  q.chol = l_uu * w.chol;
  return q;
}

VariationalPosterior whiten(const VariationalPosterior& q,
                            const KuuFactor& factor) {
  const auto l_uu = factor.llt().matrixL();
  VariationalPosterior w;
  w.mean = l_uu.solve(q.mean);
  w.chol = l_uu.solve(q.chol);
  w.chol = w.chol.triangularView<Eigen::Lower>();
  return w;
}

WhitenedGradient whitened_gradient(const VariationalPosterior& w,
                                   const KuuFactor& factor,
                                   const VectorXd& d_mean,
                                   const MatrixXd& d_chol) {
  const MatrixXd l_uu = factor.llt().matrixL();
  const auto tri = l_uu.triangularView<Eigen::Lower>();
  WhitenedGradient out;
  out.d_mean = l_uu.transpose() * d_mean;
  out.d_chol = (l_uu.transpose() * d_chol).triangularView<Eigen::Lower>();

  // Reverse-mode Cholesky: dLoss/dL_uu -> dLoss/dK_uu.
  MatrixXd bar = d_mean * w.mean.transpose() + d_chol * w.chol.transpose();
  bar = bar.triangularView<Eigen::Lower>();
  MatrixXd p = l_uu.transpose() * bar;
  p = p.triangularView<Eigen::Lower>();
  p.diagonal() *= 0.5;
  MatrixXd s = tri.transpose().solve(p);
  s = tri.transpose().solve(s.transpose()).transpose();
  out.d_kuu = 0.5 * (s + s.transpose());
  return out;
}

HyperGradient kernel_backward(const KernelModel& model, const RowMatrix& x,
                              const MatrixXd& kuf, const MatrixXd& d_kuf,
                              const KuuFactor& factor, const MatrixXd& d_kuu,
                              double d_kff_sum) {
  const Index m = model.num_inducing();
  const Index d = model.input_dim();
  const Index n = x.rows();
  const VectorXd inv = model.inverse_lengthscales();
  const VectorXd inv2 = inv.array().square();
  const RowMatrix& z = model.inducing;

  MatrixXd kuu0 = factor.kuu();
  kuu0.diagonal().array() -= factor.jitter();

  VectorXd d_log_ell_dim = VectorXd::Zero(d);
  HyperGradient grad;
  grad.d_inducing = RowMatrix::Zero(m, d);

  const MatrixXd weighted_cross = d_kuf.cwiseProduct(kuf);  // M x n
  const MatrixXd sym_kuu = d_kuu + d_kuu.transpose();
  const MatrixXd weighted_inducing = sym_kuu.cwiseProduct(kuu0);

  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < n; ++i) {
      const double w = weighted_cross(j, i);
      if (w == 0.0) continue;
      for (Index k = 0; k < d; ++k) {
        const double diff = z(j, k) - x(i, k);
        d_log_ell_dim(k) += w * diff * diff * inv2(k);
        grad.d_inducing(j, k) -= w * diff * inv2(k);
      }
    }
    for (Index l = j + 1; l < m; ++l) {
      // weighted_inducing is symmetric and already counts both (j,l), (l,j).
      const double w = weighted_inducing(j, l);
      if (w == 0.0) continue;
      for (Index k = 0; k < d; ++k) {
        const double diff = z(j, k) - z(l, k);
        d_log_ell_dim(k) += w * diff * diff * inv2(k);
        grad.d_inducing(j, k) -= w * diff * inv2(k);
        grad.d_inducing(l, k) += w * diff * inv2(k);
      }
    }
  }

  if (model.kind == KernelKind::kIsotropicRbf) {
    grad.d_log_lengthscales = VectorXd::Constant(1, d_log_ell_dim.sum());
  } else {
    grad.d_log_lengthscales = d_log_ell_dim;
  }
  grad.d_log_signal_variance = weighted_cross.sum() +
                               d_kuu.cwiseProduct(kuu0).sum() +
                               d_kff_sum * model.signal_variance;
  return grad;
}

}  // namespace dlmgp
