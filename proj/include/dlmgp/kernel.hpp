#pragma once

// RBF kernels over inducing inputs, the sparse-GP marginal projection
// q(f_i) = N(a1'm + b1, a2'V a2 + b2), and the Gaussian KL regularizer
// KL(N(m, V) || N(0, K_uu)).

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <span>

namespace dlmgp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class KernelKind { kIsotropicRbf, kArdRbf };
enum class MeanKind { kZero, kConstant };

struct KernelModel {
  KernelKind kind = KernelKind::kIsotropicRbf;
  // One entry for isotropic kernels, one per input dimension for ARD.
  VectorXd lengthscales = VectorXd::Ones(1);
  double signal_variance = 1.0;
  RowMatrix inducing;  // Z, M x d
  MeanKind mean_kind = MeanKind::kZero;
  double mean_constant = 0.0;
  double noise_variance = 0.1;  // used by Gaussian likelihoods only
  double jitter = 1e-6;

  Index num_inducing() const { return inducing.rows(); }
  Index input_dim() const { return inducing.cols(); }
  double mean_offset() const {
    return mean_kind == MeanKind::kConstant ? mean_constant : 0.0;
  }
  // 1/lengthscale expanded to one entry per input dimension.
  VectorXd inverse_lengthscales() const;
  // Throws InputError on non-positive parameters or inconsistent shapes.
  void validate() const;
};

// Default model: lengthscales 1, signal variance 1, noise 0.1, jitter
// 1e-6 * signal variance, inducing inputs a seeded random subset of rows of x.
KernelModel make_default_model(const RowMatrix& x, Index num_inducing,
                               KernelKind kind, MeanKind mean_kind,
                               std::uint64_t seed);

// Evaluate k(x, z_j) for every inducing row; `out` has M entries.
void kernel_row(const KernelModel& model, std::span<const double> x,
                std::span<double> out);

struct KernelMatrices {
  MatrixXd kuu;       // M x M, jitter on the diagonal
  MatrixXd kfu;       // n x M
  VectorXd kff_diag;  // n
};

KernelMatrices kernel_matrices(const KernelModel& model, const RowMatrix& x);

// Cholesky factor of K_uu + jitter*I. The jitter starts at model.jitter and is
// escalated by 10x (up to 1e-2) until the factorization succeeds.
class KuuFactor {
 public:
  explicit KuuFactor(const KernelModel& model);

  const MatrixXd& kuu() const { return kuu_; }  // includes the jitter
  const Eigen::LLT<MatrixXd>& llt() const { return llt_; }
  MatrixXd solve(const MatrixXd& rhs) const { return llt_.solve(rhs); }
  VectorXd solve(const VectorXd& rhs) const { return llt_.solve(rhs); }
  double log_det() const;
  double jitter() const { return jitter_; }
  Index size() const { return kuu_.rows(); }
  const MatrixXd& inverse() const { return inverse_; }

 private:
  MatrixXd kuu_;
  Eigen::LLT<MatrixXd> llt_;
  MatrixXd inverse_;
  double jitter_ = 0.0;
};

// q(u) = N(m, V) with V = L L'. The factor is lower triangular with a
// positive diagonal.
struct VariationalPosterior {
  VectorXd mean;
  MatrixXd chol;

  MatrixXd covariance() const { return chol * chol.transpose(); }
  Index size() const { return mean.size(); }

  // m = 0, V = K_uu.
  static VariationalPosterior prior(const KuuFactor& factor);
};

struct MarginalProjection {
  VectorXd a1;      // K_uu^{-1} K_ui
  double b1 = 0.0;  // mean-function offset
  VectorXd a2;      // same as a1 for the sparse GP
  double b2 = 0.0;  // K_ii - K_iu K_uu^{-1} K_ui, clamped at 0

  double mean(const VariationalPosterior& q) const { return a1.dot(q.mean) + b1; }
  double variance(const VariationalPosterior& q) const {
    return (q.chol.transpose() * a2).squaredNorm() + b2;
  }
};

MarginalProjection marginal_projection(const KernelModel& model,
                                       const KuuFactor& factor,
                                       std::span<const double> x);

// Projections for a whole design matrix at once.
struct ProjectionBatch {
  MatrixXd kuf;  // M x n
  MatrixXd a;    // K_uu^{-1} K_uf, M x n
  VectorXd b2;   // n
  double b1 = 0.0;

  Index size() const { return a.cols(); }
  MarginalProjection point(Index i) const;
};

ProjectionBatch project_batch(const KernelModel& model, const KuuFactor& factor,
                              const RowMatrix& x);

struct MarginalMoments {
  VectorXd mean;
  VectorXd variance;
};

MarginalMoments marginal_moments(const ProjectionBatch& batch,
                                 const VariationalPosterior& q);

double kl_gaussian(const VariationalPosterior& q, const KuuFactor& factor);

struct KlGradient {
  double value = 0.0;
  VectorXd d_mean;  // dKL/dm
  MatrixXd d_chol;  // dKL/dL, lower triangular
  MatrixXd d_kuu;   // dKL/dK_uu
};

KlGradient kl_gaussian_with_gradient(const VariationalPosterior& q,
                                     const KuuFactor& factor);

// Upstream gradients of a scalar loss with respect to per-point marginal
// moments, pushed back to (m, L) and to the kernel matrices.
struct MomentAdjoint {
  VectorXd d_mu;   // dLoss/dmu_i
  VectorXd d_var;  // dLoss/dv_i
};

struct PosteriorAndKernelGradient {
  VectorXd d_mean;     // M
  MatrixXd d_chol;     // M x M lower
  MatrixXd d_kuf;      // M x n
  MatrixXd d_kuu;      // M x M
  double d_kff_sum = 0.0;  // sum_i dLoss/dK_ii
  double d_mean_offset = 0.0;
};

PosteriorAndKernelGradient backprop_moments(const ProjectionBatch& batch,
                                            const VariationalPosterior& q,
                                            const KuuFactor& factor,
                                            const MomentAdjoint& adjoint);

// Whitened coordinates of q(u): with L_uu the Cholesky factor of K_uu,
// m = L_uu m_w and L = L_uu L_w. The prior is m_w = 0, L_w = I.
VariationalPosterior unwhiten(const VariationalPosterior& w,
                              const KuuFactor& factor);
VariationalPosterior whiten(const VariationalPosterior& q,
                            const KuuFactor& factor);

struct WhitenedGradient {
  VectorXd d_mean;  // dLoss/dm_w
  MatrixXd d_chol;  // dLoss/dL_w, lower triangular
  MatrixXd d_kuu;   // dependence through L_uu, symmetric
};

// Chain rule from (dLoss/dm, dLoss/dL) at q = unwhiten(w) to the whitened
// parameters. d_kuu is the extra term to add to dLoss/dK_uu when the kernel
// hyperparameters move while w is held fixed.
WhitenedGradient whitened_gradient(const VariationalPosterior& w,
                                   const KuuFactor& factor,
                                   const VectorXd& d_mean,
                                   const MatrixXd& d_chol);

// Gradients with respect to the kernel hyperparameters in log space and the
// inducing inputs.
struct HyperGradient {
  VectorXd d_log_lengthscales;
  double d_log_signal_variance = 0.0;
  RowMatrix d_inducing;
};

// Contract dLoss/dK_uf, dLoss/dK_uu and sum_i dLoss/dK_ii against the kernel
// derivatives. `kuf` is the M x n cross covariance for `x`.
HyperGradient kernel_backward(const KernelModel& model, const RowMatrix& x,
                              const MatrixXd& kuf, const MatrixXd& d_kuf,
                              const KuuFactor& factor, const MatrixXd& d_kuu,
                              double d_kff_sum);

}  // namespace dlmgp
