#pragma once

#include "fmgp/bundle.hpp"
#include "fmgp/fmgp_core.hpp"

#include <cstdint>

namespace fmgp::predict {

/// Batched posterior predictive over a bundle. The mean columns are copied
/// verbatim from the bundle's g; only second moments are computed.
struct Predictions {
  Mode mode = Mode::Regression;

  // Regression.
  Vec mean;      // = g, bit-identical
  Vec variance;  // latent v(x), clamped into [0, prior]
  double sigma2 = 0.0;

  // Classification.
  Mat logits;   // = g, bit-identical
  Mat probs;    // MC softmax average over s_eval draws
  Vec entropy;  // of the averaged probabilities

  Eigen::Index n() const { return mode == Mode::Regression ? mean.size() : logits.rows(); }
  Vec total_variance() const { return variance.array() + sigma2; }
};

Predictions predict_bundle(const core::VariationalState& state, const io::PredictionBundle& bundle,
                           int s_eval, std::uint64_t seed);

}  // namespace fmgp::predict
