#pragma once

#include "fmgp/common.hpp"

#include <optional>
#include <vector>

namespace fmgp::kernels {

/// Squared-exponential kernel hyper-parameters. The length-scales divide the
/// squared coordinate differences directly (not their squares), so they carry
/// squared-distance units.
struct RbfParams {
  double log_amp = 0.0;
  Vec log_len;  // one entry per input dimension

  double amp() const { return std::exp(log_amp); }
  double len(Eigen::Index j) const { return std::exp(log_len[j]); }
  Eigen::Index dim() const { return log_len.size(); }

  static RbfParams unit(Eigen::Index d) {
    RbfParams p;
    p.log_len = Vec::Zero(d);
    return p;
  }
};

/// amp * exp(-1/2 sum_j (x_j - y_j)^2 / len_j)
double rbf(Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> y, const RbfParams& p);

/// Entrywise rbf over row pairs; N x N' result.
Mat rbf_matrix(const Mat& x, const Mat& y, const RbfParams& p);

/// Symmetric Gram matrix K(X, X), lower triangle mirrored.
Mat rbf_gram(const Mat& x, const RbfParams& p);

/// Multiclass composite kernel parameters: an RBF factor on the inputs and a
/// class-dependency matrix B = L_B L_B^T held by its Cholesky factor with
/// log-space diagonal.
struct ClassKernelParams {
  RbfParams rbf;
  Vec lb_strict;    // strictly-lower entries of L_B, row-major
  Vec lb_log_diag;  // C entries
  Eigen::Index embed_dim = 0;

  Eigen::Index n_classes() const { return lb_log_diag.size(); }
  Mat lb() const;  // dense C x C lower factor
  Mat b() const;   // L_B L_B^T

  static ClassKernelParams identity_b(Eigen::Index classes, Eigen::Index input_dim, Eigen::Index embed_dim);
};

/// One inducing location. Classification points carry an embedding
/// coordinate and a class label; regression points carry neither.
struct InducingPoint {
  Vec z;
  std::optional<Vec> psi;
  std::optional<int> label;
};

/// B_{c,c'} * rbf(x, x') * (psi_x . psi_x' + [same_point]). The delta term is
/// driven by the caller-supplied flag, never by coordinate comparison.
double class_kernel(Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x, int cx,
                    Eigen::Ref<const Vec> x2, Eigen::Ref<const Vec> psi2, int c2,
                    const ClassKernelParams& p, bool same_point);

/// Gram matrix over labeled inducing points; the delta term contributes on
/// the diagonal only (each point paired with itself).
Mat class_gram(const Mat& z, const Mat& psi, const std::vector<int>& labels, const ClassKernelParams& p);

/// Cross-kernel block K((x, c), (z_m, c_m)) for all classes c and inducing
/// points m; C x M. Test inputs are structurally distinct from inducing
/// points, so the delta term is zero.
Mat class_cross(Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x, const Mat& z, const Mat& psi,
                const std::vector<int>& labels, const ClassKernelParams& p);

/// Per-point prior variances K(x, x).
Vec kernel_diag(const Mat& x, const RbfParams& p);
Vec kernel_diag(const Mat& psi, const std::vector<int>& labels, const ClassKernelParams& p);

}  // namespace fmgp::kernels
