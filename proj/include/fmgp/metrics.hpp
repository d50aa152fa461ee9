#pragma once

#include "fmgp/common.hpp"

#include <vector>

namespace fmgp::metrics {

/// Standard normal CDF and density.
double gaussian_cdf(double x);
double gaussian_pdf(double x);

/// Inverse standard normal CDF; rational approximation refined by one Newton
/// step on the CDF. Throws DomainError at p in {0, 1}.
double gaussian_quantile(double p);

/// Closed-form CRPS of a Gaussian predictive:
/// sd * [ z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi) ], z = (y - mean)/sd.
double crps_gaussian(double y, double mean, double sd);

/// Centered quantile metric: trapezoid quadrature of |coverage(alpha) - alpha|
/// on a fixed 101-point grid. Coverage uses the open centered interval with
/// strict inequality; the alpha = 1 node, whose quantile is undefined, counts
/// as non-covered.
double cqm(const Vec& y, const Vec& mean, const Vec& sd);

/// Averaged negative Gaussian log density with total predictive variance.
double nll_regression(const Vec& y, const Vec& mean, const Vec& total_variance);

struct NllResult {
  double value = 0.0;
  int clamped = 0;  // probabilities clamped at the underflow floor
};

/// -mean log p_hat(y | x) from per-row class probabilities.
NllResult nll_classification(const std::vector<int>& labels, const Mat& probs);

/// Expected calibration error with equal-width confidence bins.
double ece(const std::vector<int>& labels, const Mat& probs, int bins = 15);

/// Mean over points of sum_c (p_c - 1{y=c})^2.
double brier(const std::vector<int>& labels, const Mat& probs);

/// Entropy of each probability row (0 log 0 = 0).
Vec predictive_entropy(const Mat& probs);

/// Rank-based AUC (Mann-Whitney) of a score separating the second sample from
/// the first; ties credited 0.5.
double ood_auc(const Vec& in_scores, const Vec& out_scores);

struct RegressionEval {
  double nll = 0.0;
  double crps = 0.0;
  double cqm = 0.0;
};

struct ClassificationEval {
  double nll = 0.0;
  double ece = 0.0;
  double brier = 0.0;
  int nll_clamped = 0;
};

RegressionEval evaluate_regression(const Vec& y, const Vec& mean, const Vec& total_variance);
ClassificationEval evaluate_classification(const std::vector<int>& labels, const Mat& probs);

}  // namespace fmgp::metrics
