#pragma once

#include "fmgp/kernels.hpp"
#include "fmgp/numkit.hpp"

namespace fmgp::exactgp {

/// Exact GP regression posterior in dual coordinates: dual weights
/// alpha = (K + sigma^2 I)^{-1} y and the factor of K + sigma^2 I.
/// Desk-scale oracle only; N is hard-capped.
struct ExactGPState {
  Mat x;                    // N x D training inputs
  Vec dual_weights;         // N
  numkit::CholFactor chol;  // factor of K(X,X) + sigma^2 I
  kernels::RbfParams kernel;
  double sigma2 = 1.0;

  Eigen::Index n() const { return x.rows(); }
};

inline constexpr Eigen::Index kExactGpCap = 5000;

ExactGPState fit_exact(const Mat& x, const Vec& y, const kernels::RbfParams& kernel, double sigma2);

struct MeanVar {
  double mean = 0.0;
  double variance = 0.0;
};

MeanVar predict_exact(const ExactGPState& state, Eigen::Ref<const Vec> x_star);

/// -1/2 y^T (K + s2 I)^{-1} y - 1/2 log|K + s2 I| - N/2 log(2 pi)
double log_marginal_likelihood(const ExactGPState& state, const Vec& y);

struct HyperFitConfig {
  int steps = 300;
  double lr = 0.05;
  bool fit_noise = true;
};

/// Maximizes the log marginal likelihood over (log amp, log len, log sigma2)
/// with Adam in log-space. Returns the refit state.
ExactGPState fit_exact_hypers(const Mat& x, const Vec& y, const kernels::RbfParams& init, double sigma2_init,
                              const HyperFitConfig& cfg = {});

}  // namespace fmgp::exactgp
