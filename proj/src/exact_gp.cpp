#include "fmgp/exact_gp.hpp"

#include "fmgp/tape.hpp"

namespace fmgp::exactgp {

ExactGPState fit_exact(const Mat& x, const Vec& y, const kernels::RbfParams& kernel, double sigma2) {
  if (x.rows() == 0) throw EmptyInput("fit_exact: no data");
  if (x.rows() > kExactGpCap) throw DimensionMismatch("fit_exact: N exceeds the oracle cap");
  if (x.rows() != y.size()) throw DimensionMismatch("fit_exact: X and y row counts disagree");
  if (!all_finite(y) || !all_finite(x)) throw DomainError("fit_exact: non-finite data");
  if (!(sigma2 > 0.0)) throw DomainError("fit_exact: sigma2 must be positive");

  ExactGPState s;
  s.x = x;
  s.kernel = kernel;
  s.sigma2 = sigma2;
  Mat kn = kernels::rbf_gram(x, kernel);
  kn.diagonal().array() += sigma2;
  s.chol = numkit::cholesky(kn);
  Vec t = numkit::tri_solve(s.chol, y, numkit::TriSide::Lower);
  s.dual_weights = numkit::tri_solve(s.chol, t, numkit::TriSide::Upper);
  return s;
}

MeanVar predict_exact(const ExactGPState& state, Eigen::Ref<const Vec> x_star) {
  Vec k_star(state.n());
  for (Eigen::Index i = 0; i < state.n(); ++i)
    k_star[i] = kernels::rbf(x_star, state.x.row(i).transpose(), state.kernel);
  MeanVar out;
  out.mean = k_star.dot(state.dual_weights);
  Vec t = numkit::tri_solve(state.chol, k_star, numkit::TriSide::Lower);
  out.variance = state.kernel.amp() - t.squaredNorm();
  return out;
}

double log_marginal_likelihood(const ExactGPState& state, const Vec& y) {
  if (y.size() != state.n()) throw DimensionMismatch("log_marginal_likelihood: y size mismatch");
  Vec t = numkit::tri_solve(state.chol, y, numkit::TriSide::Lower);
  const double quad = t.squaredNorm();
  return -0.5 * quad - 0.5 * numkit::logdet(state.chol) -
         0.5 * static_cast<double>(state.n()) * std::log(2.0 * M_PI);
}

ExactGPState fit_exact_hypers(const Mat& x, const Vec& y, const kernels::RbfParams& init, double sigma2_init,
                              const HyperFitConfig& cfg) {
  const Eigen::Index d = x.cols();
  numkit::ParamVector params;
  params.register_block("log_amp", 1, 1);
  params.register_block("log_len", d, 1);
  if (cfg.fit_noise) params.register_block("log_sigma2", 1, 1);
  params.set_block("log_amp", scalar_mat(init.log_amp));
  params.set_block("log_len", Vec(init.log_len));
  if (cfg.fit_noise) params.set_block("log_sigma2", scalar_mat(std::log(sigma2_init)));

  const Mat eye = Mat::Identity(x.rows(), x.rows());
  auto objective = [&](numkit::Tape& tape, const std::vector<numkit::Tape::Id>& leaves) {
    using T = numkit::Tape;
    const T::Id xs = tape.leaf(x);
    const T::Id kn = tape.rbf_cross(xs, xs, leaves[0], leaves[1]);
    const T::Id s2 = cfg.fit_noise ? tape.exp(leaves[2]) : tape.scalar(sigma2_init);
    const T::Id shifted = tape.add(kn, tape.smul(s2, tape.leaf(eye)));
    const T::Id chol = tape.cholesky(shifted);
    const T::Id t = tape.tri_solve_lower(chol, tape.leaf(Mat(y)));
    const T::Id quad = tape.frob_sq(t);
    T::Id lml = tape.scale(quad, -0.5);
    lml = tape.add(lml, tape.scale(tape.logdet_chol(chol), -0.5));
    lml = tape.add(lml, tape.scalar(-0.5 * static_cast<double>(x.rows()) * std::log(2.0 * M_PI)));
    return lml;
  };

  numkit::AdamState adam(params.size());
  numkit::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.ascent = true;
  for (int step = 0; step < cfg.steps; ++step) {
    auto res = numkit::grad(params, objective);
    numkit::adam_step(adam, params.values(), res.gradient, acfg);
  }

  kernels::RbfParams fitted;
  fitted.log_amp = params.block("log_amp")(0, 0);
  fitted.log_len = params.block_vec("log_len");
  const double sigma2 = cfg.fit_noise ? std::exp(params.block("log_sigma2")(0, 0)) : sigma2_init;
  return fit_exact(x, y, fitted, sigma2);
}

}  // namespace fmgp::exactgp
