#pragma once

#include "fmgp/bundle.hpp"

// Desk-scale 3-class task: anisotropic Gaussian blobs whose long axes pierce
// the linear decision boundaries, plus a saturated multinomial linear model
// as the pre-trained point predictor.
namespace blobs {

using fmgp::Mat;
using fmgp::Vec;

struct Geometry {
  double radius = 2.4;
  double sd_long = 1.6;
  double sd_short = 0.4;
  double rotation_deg = 45.0;
  int n_classes = 3;
  double psi_scale = 3.0;  // embedding = psi_scale * x
};

inline fmgp::io::PredictionBundle make_blobs(std::uint64_t seed, int n_per_class, double shift,
                                             const Geometry& geo = {}) {
  fmgp::Rng rng(seed);
  fmgp::io::PredictionBundle b;
  b.mode = fmgp::Mode::Classification;
  b.seed = seed;
  const int n = geo.n_classes * n_per_class;
  b.x.resize(n, 2);
  int r = 0;
  for (int c = 0; c < geo.n_classes; ++c) {
    const double ang = 2.0 * M_PI * c / geo.n_classes;
    const double mx = geo.radius * std::cos(ang);
    const double my = geo.radius * std::sin(ang);
    const double rot = ang + geo.rotation_deg * M_PI / 180.0;
    for (int i = 0; i < n_per_class; ++i, ++r) {
      const double u = geo.sd_long * rng.normal();
      const double v = geo.sd_short * rng.normal();
      b.x(r, 0) = mx + u * std::cos(rot) - v * std::sin(rot) + shift;
      b.x(r, 1) = my + u * std::sin(rot) + v * std::cos(rot) + shift;
      b.labels.push_back(c);
    }
  }
  b.psi = geo.psi_scale * b.x;
  b.g = Mat::Zero(n, geo.n_classes);
  return b;
}

/// Full-batch gradient descent on the multinomial cross-entropy with an
/// intercept column; decay 0 plus many steps saturates the confidences.
inline Mat fit_multinomial(const fmgp::io::PredictionBundle& train, int steps, double lr, double decay) {
  const auto c_count = train.g.cols();
  Mat w = Mat::Zero(c_count, 3);
  const auto n = train.n();
  for (int it = 0; it < steps; ++it) {
    Mat grad = static_cast<double>(n) * decay * w;
    for (Eigen::Index i = 0; i < n; ++i) {
      Vec f(3);
      f << 1.0, train.x(i, 0), train.x(i, 1);
      Vec z = w * f;
      Vec e = (z.array() - z.maxCoeff()).exp();
      Vec p = e / e.sum();
      for (Eigen::Index c = 0; c < c_count; ++c) {
        const double d = p[c] - (train.labels[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0);
        grad.row(c) += d * f.transpose();
      }
    }
    w -= (lr / static_cast<double>(n)) * grad;
  }
  return w;
}

inline void apply_logits(fmgp::io::PredictionBundle& b, const Mat& w) {
  for (Eigen::Index i = 0; i < b.n(); ++i) {
    Vec f(3);
    f << 1.0, b.x(i, 0), b.x(i, 1);
    b.g.row(i) = (w * f).transpose();
  }
}

inline Mat softmax_rows(const Mat& z) {
  Mat p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Vec e = (z.row(i).array() - z.row(i).maxCoeff()).exp();
    p.row(i) = e.transpose() / e.sum();
  }
  return p;
}

}  // namespace blobs
