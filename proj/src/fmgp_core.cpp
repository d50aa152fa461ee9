#include "fmgp/fmgp_core.hpp"

namespace fmgp::core {

namespace {

Mat lower_from_blocks(const Vec& strict, const Vec& log_diag) {
  const Eigen::Index m = log_diag.size();
  if (strict.size() != m * (m - 1) / 2) throw DimensionMismatch("lower factor block sizes disagree");
  Mat out = Mat::Zero(m, m);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) out(i, j) = strict[k++];
    out(i, i) = std::exp(log_diag[i]);
  }
  return out;
}

}  // namespace

Mat VariationalState::l_dense() const { return lower_from_blocks(l_strict, l_log_diag); }

Mat VariationalState::a_tilde() const {
  Mat l = l_dense();
  return l * l.transpose();
}

kernels::ClassKernelParams VariationalState::class_params() const {
  if (mode != Mode::Classification) throw ModeMismatch("class_params: regression state");
  kernels::ClassKernelParams p;
  p.rbf = rbf;
  p.lb_strict = lb_strict;
  p.lb_log_diag = lb_log_diag;
  p.embed_dim = psi.cols();
  return p;
}

VariationalState VariationalState::init_regression(const Mat& z, const kernels::RbfParams& rbf, double sigma2) {
  if (z.rows() < 1) throw EmptyInput("init_regression: at least one inducing point required");
  VariationalState s;
  s.mode = Mode::Regression;
  s.z = z;
  const Eigen::Index m = z.rows();
  s.l_strict = Vec::Zero(m * (m - 1) / 2);
  s.l_log_diag = Vec::Zero(m);
  s.a = Vec::Zero(m);
  s.rbf = rbf;
  s.log_sigma2 = std::log(sigma2);
  return s;
}

VariationalState VariationalState::init_classification(const Mat& z, const Mat& psi, std::vector<int> labels,
                                                       const kernels::ClassKernelParams& params) {
  if (z.rows() < 1) throw EmptyInput("init_classification: at least one inducing point required");
  if (psi.rows() != z.rows() || static_cast<Eigen::Index>(labels.size()) != z.rows())
    throw DimensionMismatch("init_classification: row counts disagree");
  VariationalState s;
  s.mode = Mode::Classification;
  s.z = z;
  s.psi = psi;
  s.labels = std::move(labels);
  const Eigen::Index m = z.rows();
  s.l_strict = Vec::Zero(m * (m - 1) / 2);
  s.l_log_diag = Vec::Zero(m);
  s.a = Vec::Zero(m);
  s.rbf = params.rbf;
  s.lb_strict = params.lb_strict;
  s.lb_log_diag = params.lb_log_diag;
  s.n_classes = params.n_classes();
  return s;
}

Predictor Predictor::prepare(const VariationalState& state) {
  Predictor p;
  p.state_ = state;
  p.l_ = state.l_dense();
  if (state.mode == Mode::Regression) {
    p.k_beta_ = kernels::rbf_gram(state.z, state.rbf);
  } else {
    p.k_beta_ = kernels::class_gram(state.z, state.psi, state.labels, state.class_params());
  }
  Mat w = p.l_.transpose() * p.k_beta_ * p.l_;
  w.diagonal().array() += 1.0;
  p.cw_ = numkit::cholesky(symmetrize_from_lower(Mat(w.triangularView<Eigen::Lower>())));
  return p;
}

double Predictor::variance(Eigen::Ref<const Vec> x) const {
  if (state_.mode != Mode::Regression) throw ModeMismatch("variance: classification state");
  Vec k_x(state_.m());
  for (Eigen::Index i = 0; i < state_.m(); ++i)
    k_x[i] = kernels::rbf(state_.z.row(i).transpose(), x, state_.rbf);
  Vec u = l_.transpose() * k_x;
  Vec t = numkit::tri_solve(cw_, u, numkit::TriSide::Lower);
  const double v = state_.rbf.amp() - t.squaredNorm();
  return v > 0.0 ? v : 0.0;
}

Mat Predictor::latent_cov(Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x) const {
  if (state_.mode != Mode::Classification) throw ModeMismatch("latent_cov: regression state");
  const auto params = state_.class_params();
  const Mat b = params.b();
  // Prior block over output pairs at the same input: delta term present.
  Mat sigma0 = b * (state_.rbf.amp() * (psi_x.squaredNorm() + 1.0));
  // Inducing correction through the cross-kernel rows.
  Mat kx = kernels::class_cross(x, psi_x, state_.z, state_.psi, state_.labels, params);
  Mat u = kx * l_;  // C x M
  Mat t = numkit::tri_solve(cw_, Mat(u.transpose()), numkit::TriSide::Lower);  // M x C
  Mat cov = sigma0 - t.transpose() * t;
  return symmetrize_from_lower(Mat(cov.triangularView<Eigen::Lower>()));
}

double Predictor::qstar_mean(Eigen::Ref<const Vec> x) const {
  if (state_.mode != Mode::Regression) throw ModeMismatch("qstar_mean: classification state");
  double out = 0.0;
  for (Eigen::Index i = 0; i < state_.m(); ++i)
    out += state_.a[i] * kernels::rbf(x, state_.z.row(i).transpose(), state_.rbf);
  return out;
}

Vec Predictor::qstar_mean_class(Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x) const {
  if (state_.mode != Mode::Classification) throw ModeMismatch("qstar_mean_class: regression state");
  Mat kx = kernels::class_cross(x, psi_x, state_.z, state_.psi, state_.labels, state_.class_params());
  return kx * state_.a;
}

double predictive_variance(const VariationalState& state, Eigen::Ref<const Vec> x) {
  return Predictor::prepare(state).variance(x);
}

Mat predictive_cov_class(const VariationalState& state, Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x) {
  return Predictor::prepare(state).latent_cov(x, psi_x);
}

namespace {

Mat gram_for(const VariationalState& state) {
  if (state.mode == Mode::Regression) return kernels::rbf_gram(state.z, state.rbf);
  return kernels::class_gram(state.z, state.psi, state.labels, state.class_params());
}

}  // namespace

double kl_q(const VariationalState& state) {
  const Mat k_beta = gram_for(state);
  const Mat l = state.l_dense();
  Mat w = l.transpose() * k_beta * l;
  w.diagonal().array() += 1.0;
  numkit::CholFactor cw = numkit::cholesky(symmetrize_from_lower(Mat(w.triangularView<Eigen::Lower>())));
  // tr(W (I+W)^{-1}) = M - tr((I+W)^{-1}); the trace of the inverse comes
  // from the Frobenius norm of the inverse triangular factor.
  Mat inv_l = cw.L.triangularView<Eigen::Lower>().solve(Mat(Mat::Identity(w.rows(), w.cols())));
  const double tr_inv = inv_l.squaredNorm();
  const double m = static_cast<double>(state.m());
  return 0.5 * (tr_inv - m + numkit::logdet(cw));
}

double kl_qstar(const VariationalState& state) {
  const Mat k_beta = gram_for(state);
  return kl_q(state) + 0.5 * state.a.dot(k_beta * state.a);
}

double qstar_mean(const VariationalState& state, Eigen::Ref<const Vec> x) {
  return Predictor::prepare(state).qstar_mean(x);
}

Vec qstar_mean_class(const VariationalState& state, Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x) {
  return Predictor::prepare(state).qstar_mean_class(x, psi_x);
}

MeanApproxResult mean_approx_error(const Mat& probe_x, const Vec& g_values, const Mat& z_alpha,
                                   const kernels::RbfParams& kernel, double ridge) {
  if (probe_x.rows() == 0 || z_alpha.rows() == 0) throw EmptyInput("mean_approx_error: empty input");
  if (probe_x.rows() != g_values.size()) throw DimensionMismatch("mean_approx_error: probe and g sizes disagree");
  if (!(ridge > 0.0)) throw DomainError("mean_approx_error: ridge must be positive");

  const Mat k_pz = kernels::rbf_matrix(probe_x, z_alpha, kernel);
  Mat normal = k_pz.transpose() * k_pz;
  normal.diagonal().array() += ridge;
  numkit::CholFactor f = numkit::cholesky(symmetrize_from_lower(Mat(normal.triangularView<Eigen::Lower>())));
  Vec rhs = k_pz.transpose() * g_values;
  Vec t = numkit::tri_solve(f, rhs, numkit::TriSide::Lower);
  MeanApproxResult res;
  res.coefficients = numkit::tri_solve(f, t, numkit::TriSide::Upper);
  res.sup_error = (k_pz * res.coefficients - g_values).cwiseAbs().maxCoeff();
  return res;
}

}  // namespace fmgp::core
