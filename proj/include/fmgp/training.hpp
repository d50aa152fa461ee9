#pragma once

#include "fmgp/bundle.hpp"
#include "fmgp/fmgp_core.hpp"
#include "fmgp/tape.hpp"

#include <optional>
#include <vector>

namespace fmgp::training {

struct FitConfig {
  int m_beta = 100;
  int batch = 100;
  int steps = 20000;
  double lr = 1e-3;
  int s_train = 64;
  int s_eval = 512;
  std::uint64_t seed = 0;
  Mode mode = Mode::Regression;

  bool optimize_inducing = true;  // Z_beta (and inducing embeddings) trainable
  bool optimize_hypers = true;    // kernel amplitude, length-scales, B
  bool optimize_noise = true;     // regression sigma2
  bool use_qstar = true;          // auxiliary-measure regularizer

  /// Selects the input space of the RBF factor: raw features (default) or
  /// the bundle embeddings.
  bool rbf_on_embeddings = false;

  // Optional initial values; defaults are moment-based when absent.
  std::optional<double> init_log_amp;
  std::optional<Vec> init_log_len;
  std::optional<double> init_log_sigma2;
  std::optional<Mat> init_z;  // pins the inducing initialization (oracle tests)

  void validate(Eigen::Index n) const;
};

struct TraceRow {
  int step = 0;
  double objective = 0.0;
  double kl_q = 0.0;
  double kl_qstar = 0.0;
  double wall_ms = 0.0;
  double jitter = 0.0;
};

struct TraceRecord {
  std::vector<TraceRow> rows;
};

/// Closed-form log E_q[p(y | f)] for a Gaussian marginal and homoscedastic
/// Gaussian likelihood: log N(y | mean, sigma2 + variance).
double gaussian_log_expected_lik(double y, double mean, double variance, double sigma2);

/// MC softmax class-probability vector under a latent Gaussian with the given
/// mean logits and covariance (jitter ladder applied before sampling).
Vec mc_softmax_probs(const Vec& mean_logits, const Mat& cov, int s, Rng& rng);

/// log( (1/S) sum_s softmax(mean + L xi_s)_y ).
double categorical_log_expected_lik(int y, const Vec& mean_logits, const Mat& cov, int s, Rng& rng);

/// Parameter block layout for a state under a config. Frozen blocks are not
/// registered; the tape builder reads them from the state as constants.
numkit::ParamVector pack_params(const core::VariationalState& state, const FitConfig& cfg);
core::VariationalState unpack_params(const numkit::ParamVector& params, core::VariationalState prototype,
                                     const FitConfig& cfg);

struct ObjectiveRefs {
  numkit::Tape::Id objective = -1;
  numkit::Tape::Id kl_q = -1;
  numkit::Tape::Id kl_qstar = -1;
};

/// Builds the mini-batch training objective on a tape: the scaled batch sums
/// of log E_q[p(y_b|f)] and log E_{q*}[p(y_b|f)] minus both KL terms. The
/// q-term mean is the ingested g; the q*-term mean is the kernel expansion of
/// a; both share the predictive variance. Classification expectations use the
/// supplied common-random-numbers draws (one C x S matrix per batch element).
ObjectiveRefs build_objective(numkit::Tape& tape, const std::vector<numkit::Tape::Id>& leaves,
                              const numkit::ParamVector& layout, const core::VariationalState& proto,
                              const io::PredictionBundle& bundle, const std::vector<int>& batch,
                              const FitConfig& cfg, const std::vector<Mat>* noise);

/// Value of the objective at the given state (forward pass only).
double minibatch_objective(const core::VariationalState& state, const io::PredictionBundle& bundle,
                           const std::vector<int>& batch, const FitConfig& cfg,
                           const std::vector<Mat>* noise = nullptr);

/// Initial state per the application recipe: Z_beta from k-means, Atilde the
/// identity, a zero, sigma2 from the residual variance of g.
core::VariationalState init_state(const io::PredictionBundle& bundle, const FitConfig& cfg);

struct FitResult {
  core::VariationalState state;
  TraceRecord trace;
  double seconds = 0.0;
};

/// Adam ascent on the mini-batch objective; deterministic under seed.
/// Throws NonFiniteGradient naming the offending step on numerical blow-up.
FitResult fit(const io::PredictionBundle& bundle, const FitConfig& cfg);

}  // namespace fmgp::training
