#pragma once

#include "fmgp/kernels.hpp"
#include "fmgp/numkit.hpp"

#include <vector>

namespace fmgp::core {

/// Variational parameters of the fixed-mean family. The covariance state is
/// the PSD matrix Atilde = L L^T held by its lower Cholesky factor with
/// log-space diagonal, which keeps A = -(Atilde^{-1} + K_beta)^{-1} well
/// defined and the predictive variance below the prior for every parameter
/// value. The auxiliary-mean coefficients a belong to the q* measure that
/// shares Z_beta.
struct VariationalState {
  Mode mode = Mode::Regression;

  Mat z;             // M x D inducing locations (input space of the RBF factor)
  Vec l_strict;      // strictly-lower entries of L, row-major
  Vec l_log_diag;    // M entries
  Vec a;             // M auxiliary-mean coefficients

  kernels::RbfParams rbf;

  // Classification only.
  Mat psi;                  // M x E inducing embeddings
  std::vector<int> labels;  // M class assignments
  Vec lb_strict;            // strictly-lower entries of L_B
  Vec lb_log_diag;          // C entries
  Eigen::Index n_classes = 0;

  double log_sigma2 = 0.0;  // regression likelihood noise

  /// Input space of the RBF factor: raw features or bundle embeddings.
  bool rbf_on_embeddings = false;

  Eigen::Index m() const { return l_log_diag.size(); }
  double sigma2() const { return std::exp(log_sigma2); }
  Mat l_dense() const;
  Mat a_tilde() const;  // L L^T
  kernels::ClassKernelParams class_params() const;

  /// Fresh state with L = I, a = 0 at the given inducing locations.
  static VariationalState init_regression(const Mat& z, const kernels::RbfParams& rbf, double sigma2);
  static VariationalState init_classification(const Mat& z, const Mat& psi, std::vector<int> labels,
                                              const kernels::ClassKernelParams& params);
};

/// Per-input predictive. The mean is copied verbatim from the prediction
/// bundle and never recomputed; only the second moments are model outputs.
struct PosteriorPredictive {
  Vec mean;  // 1 entry (regression) or C logits (classification)
  Mat cov;   // 1 x 1 variance or C x C latent covariance
};

/// Prepared factors for repeated prediction from one state. Immutable and
/// shareable across threads once built.
class Predictor {
 public:
  static Predictor prepare(const VariationalState& state);

  /// Regression predictive variance, Eq. form K(x,x) - u^T (I + L^T K L)^{-1} u.
  double variance(Eigen::Ref<const Vec> x) const;

  /// Classification latent covariance over the C outputs at one input.
  Mat latent_cov(Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x) const;

  double qstar_mean(Eigen::Ref<const Vec> x) const;
  Vec qstar_mean_class(Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x) const;

  const VariationalState& state() const { return state_; }
  double prior_variance() const { return state_.rbf.amp(); }

 private:
  VariationalState state_;
  Mat l_;                    // dense M x M lower factor of Atilde
  Mat k_beta_;               // M x M kernel Gram over inducing points
  numkit::CholFactor cw_;    // factor of I + L^T K_beta L
};

double predictive_variance(const VariationalState& state, Eigen::Ref<const Vec> x);
Mat predictive_cov_class(const VariationalState& state, Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x);

/// Parameter-dependent part of KL(q | prior) for the fixed-mean family:
/// 1/2 tr(K_beta A) + 1/2 log|I + L^T K_beta L| with A = -(Atilde^{-1}+K_beta)^{-1},
/// evaluated stably through W = L^T K_beta L without forming Atilde^{-1}.
double kl_q(const VariationalState& state);

/// kl_q plus the auxiliary mean term 1/2 a^T K_beta a.
double kl_qstar(const VariationalState& state);

/// Kernel expansion of a over Z_beta at one input.
double qstar_mean(const VariationalState& state, Eigen::Ref<const Vec> x);
Vec qstar_mean_class(const VariationalState& state, Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x);

/// Diagnostic for the fixed-mean premise: ridge least-squares fit of g by
/// sum_m a_m K(., z_m) over the probe set; reports the coefficients and the
/// maximum absolute residual (the empirical epsilon).
struct MeanApproxResult {
  Vec coefficients;
  double sup_error = 0.0;
};

MeanApproxResult mean_approx_error(const Mat& probe_x, const Vec& g_values, const Mat& z_alpha,
                                   const kernels::RbfParams& kernel, double ridge);

}  // namespace fmgp::core
