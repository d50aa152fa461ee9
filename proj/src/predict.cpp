#include "fmgp/predict.hpp"

#include "fmgp/metrics.hpp"
#include "fmgp/training.hpp"

namespace fmgp::predict {

Predictions predict_bundle(const core::VariationalState& state, const io::PredictionBundle& bundle,
                           int s_eval, std::uint64_t seed) {
  bundle.validate();
  if (state.mode != bundle.mode) throw ModeMismatch("predict: state and bundle modes disagree");
  if (state.rbf_on_embeddings && !bundle.has_psi())
    throw ModeMismatch("predict: state expects embeddings but bundle has none");
  const core::Predictor predictor = core::Predictor::prepare(state);
  const Mat& x_src = state.rbf_on_embeddings ? bundle.psi : bundle.x;
  if (x_src.cols() != state.z.cols()) throw ShapeError("predict: feature dimension disagrees with state");

  Predictions out;
  out.mode = state.mode;
  if (state.mode == Mode::Regression) {
    out.mean = bundle.g.col(0);
    out.sigma2 = state.sigma2();
    out.variance.resize(bundle.n());
    for (Eigen::Index i = 0; i < bundle.n(); ++i)
      out.variance[i] = predictor.variance(x_src.row(i).transpose());
    return out;
  }

  if (!bundle.has_psi()) throw ShapeError("predict: classification bundle lacks embeddings");
  out.logits = bundle.g;
  const Eigen::Index c_count = bundle.n_classes();
  out.probs.resize(bundle.n(), c_count);
  Rng rng(seed + 0x9d2c5680u);
  for (Eigen::Index i = 0; i < bundle.n(); ++i) {
    const Mat cov = predictor.latent_cov(x_src.row(i).transpose(), bundle.psi.row(i).transpose());
    const Vec probs = training::mc_softmax_probs(bundle.g.row(i).transpose(), cov, s_eval, rng);
    out.probs.row(i) = probs;
  }
  out.entropy = metrics::predictive_entropy(out.probs);
  return out;
}

}  // namespace fmgp::predict
