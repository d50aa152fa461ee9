#include "fmgp/numkit.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

namespace fmgp {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace fmgp

namespace fmgp::numkit {

CholFactor cholesky(const Mat& a, const JitterPolicy& policy) {
  if (a.rows() != a.cols()) throw DimensionMismatch("cholesky: square matrix required");
  if (!all_finite(a)) throw NotPositiveDefinite("cholesky: non-finite entries");
  const Eigen::Index n = a.rows();
  double scale = n > 0 ? a.diagonal().mean() : 0.0;
  if (!(scale > 0.0)) scale = 1.0;  // degenerate zero diagonal: absolute ladder

  for (double mult : policy.multipliers) {
    const double jitter = mult * scale;
    Mat shifted = a;
    shifted.diagonal().array() += jitter;
    Eigen::LLT<Mat> llt(shifted);
    if (llt.info() == Eigen::Success) {
      CholFactor f;
      f.L = llt.matrixL();
      f.jitter = jitter;
      bool ok = true;
      for (Eigen::Index i = 0; i < n; ++i)
        if (!(f.L(i, i) > 0.0)) ok = false;
      if (ok) return f;
    }
  }
  throw NotPositiveDefinite("cholesky: factorization failed at every jitter level");
}

Vec tri_solve(const CholFactor& f, const Vec& b, TriSide side) {
  if (f.dim() != b.size()) throw DimensionMismatch("tri_solve: dimension mismatch");
  if (side == TriSide::Lower) return f.L.triangularView<Eigen::Lower>().solve(b);
  return f.L.transpose().triangularView<Eigen::Upper>().solve(b);
}

Mat tri_solve(const CholFactor& f, const Mat& b, TriSide side) {
  if (f.dim() != b.rows()) throw DimensionMismatch("tri_solve: dimension mismatch");
  if (side == TriSide::Lower) return f.L.triangularView<Eigen::Lower>().solve(b);
  return f.L.transpose().triangularView<Eigen::Upper>().solve(b);
}

double logdet(const CholFactor& f) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.dim(); ++i) s += std::log(f.L(i, i));
  return 2.0 * s;
}

Eigen::Index ParamVector::register_block(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (has_block(name)) throw ConfigError("ParamVector: duplicate block " + name);
  Block b;
  b.name = name;
  b.offset = values_.size();
  b.rows = rows;
  b.cols = cols;
  blocks_.push_back(b);
  Vec grown = Vec::Zero(values_.size() + b.size());
  grown.head(values_.size()) = values_;
  values_ = std::move(grown);
  return static_cast<Eigen::Index>(blocks_.size()) - 1;
}

bool ParamVector::has_block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return true;
  return false;
}

const ParamVector::Block& ParamVector::block_info(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw ConfigError("ParamVector: unknown block " + name);
}

Mat ParamVector::block(const std::string& name) const {
  const Block& b = block_info(name);
  Mat out(b.rows, b.cols);
  for (Eigen::Index i = 0; i < b.size(); ++i) out.data()[i] = values_[b.offset + i];
  return out;
}

Vec ParamVector::block_vec(const std::string& name) const {
  const Block& b = block_info(name);
  return values_.segment(b.offset, b.size());
}

void ParamVector::set_block(const std::string& name, const Mat& value) {
  const Block& b = block_info(name);
  if (value.rows() != b.rows || value.cols() != b.cols)
    throw DimensionMismatch("ParamVector::set_block: shape mismatch for " + name);
  for (Eigen::Index i = 0; i < b.size(); ++i) values_[b.offset + i] = value.data()[i];
}

void ParamVector::set_block(const std::string& name, const Vec& value) {
  const Block& b = block_info(name);
  if (value.size() != b.size()) throw DimensionMismatch("ParamVector::set_block: size mismatch for " + name);
  values_.segment(b.offset, b.size()) = value;
}

const ParamVector::Block& ParamVector::block_of_index(Eigen::Index i) const {
  for (const auto& b : blocks_)
    if (i >= b.offset && i < b.offset + b.size()) return b;
  throw ConfigError("ParamVector: index out of range");
}

void adam_step(AdamState& state, Vec& params, const Vec& grad, const AdamConfig& cfg) {
  if (state.m.size() != grad.size() || params.size() != grad.size())
    throw DimensionMismatch("adam_step: dimension mismatch");
  state.t += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v.array().matrix() + (1.0 - cfg.beta2) * grad.array().square().matrix();
  const double mc = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double vc = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const double sign = cfg.ascent ? 1.0 : -1.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double mhat = state.m[i] / mc;
    const double vhat = state.v[i] / vc;
    params[i] += sign * cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

namespace {

Eigen::Index nearest_center(const Mat& centers, const Vec& p) {
  Eigen::Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c).transpose() - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

Mat kmeans(const Mat& points, int m, std::uint64_t seed) {
  const Eigen::Index n = points.rows();
  if (n == 0 || m <= 0) throw EmptyInput("kmeans: empty input");
  if (m > n) throw DimensionMismatch("kmeans: more centers than points");
  if (!all_finite(points)) throw DomainError("kmeans: non-finite points");

  Rng rng(seed);
  Mat centers(m, points.cols());

  // k-means++ seeding.
  std::vector<double> d2(static_cast<std::size_t>(n), 0.0);
  centers.row(0) = points.row(rng.uniform_int(static_cast<int>(n)));
  for (int c = 1; c < m; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int q = 0; q < c; ++q)
        best = std::min(best, (points.row(i) - centers.row(q)).squaredNorm());
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (r < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(static_cast<int>(n));
    }
    centers.row(c) = points.row(pick);
  }

  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index c = nearest_center(centers, points.row(i).transpose());
      if (c != assign[static_cast<std::size_t>(i)]) {
        assign[static_cast<std::size_t>(i)] = c;
        changed = true;
      }
    }
    if (!changed) break;

    Mat sums = Mat::Zero(m, points.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(m), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] += 1;
    }
    for (int c = 0; c < m; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Empty cluster: reseed on the point farthest from its center.
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d = (points.row(i) - centers.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centers.row(c) = points.row(far);
      }
    }
  }
  return centers;
}

double kmeans_objective(const Mat& points, const Mat& centers) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centers.rows(); ++c)
      best = std::min(best, (points.row(i) - centers.row(c)).squaredNorm());
    total += best;
  }
  return total;
}

}  // namespace fmgp::numkit
