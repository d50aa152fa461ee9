#include "fmgp/tape.hpp"

#include <cmath>

namespace fmgp::numkit {

Tape::Id Tape::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

Tape::Id Tape::leaf(const Mat& value) {
  Node n;
  n.op = Op::Leaf;
  n.value = value;
  return push(std::move(n));
}

Tape::Id Tape::add(Id a, Id b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw DimensionMismatch("tape add: shape mismatch");
  Node n;
  n.op = Op::Add;
  n.value = value(a) + value(b);
  n.in[0] = a;
  n.in[1] = b;
  return push(std::move(n));
}

Tape::Id Tape::sub(Id a, Id b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw DimensionMismatch("tape sub: shape mismatch");
  Node n;
  n.op = Op::Sub;
  n.value = value(a) - value(b);
  n.in[0] = a;
  n.in[1] = b;
  return push(std::move(n));
}

Tape::Id Tape::neg(Id a) {
  Node n;
  n.op = Op::Neg;
  n.value = -value(a);
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::scale(Id a, double c) {
  Node n;
  n.op = Op::Scale;
  n.value = c * value(a);
  n.in[0] = a;
  n.cdata = c;
  return push(std::move(n));
}

Tape::Id Tape::add_const(Id a, const Mat& c) {
  if (value(a).rows() != c.rows() || value(a).cols() != c.cols())
    throw DimensionMismatch("tape add_const: shape mismatch");
  Node n;
  n.op = Op::AddConst;
  n.value = value(a) + c;
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::emul(Id a, Id b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw DimensionMismatch("tape emul: shape mismatch");
  Node n;
  n.op = Op::Emul;
  n.value = value(a).cwiseProduct(value(b));
  n.in[0] = a;
  n.in[1] = b;
  return push(std::move(n));
}

Tape::Id Tape::ediv(Id a, Id b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw DimensionMismatch("tape ediv: shape mismatch");
  Node n;
  n.op = Op::Ediv;
  n.value = value(a).cwiseQuotient(value(b));
  n.in[0] = a;
  n.in[1] = b;
  return push(std::move(n));
}

Tape::Id Tape::matmul(Id a, Id b) {
  if (value(a).cols() != value(b).rows()) throw DimensionMismatch("tape matmul: shape mismatch");
  Node n;
  n.op = Op::Matmul;
  n.value = value(a) * value(b);
  n.in[0] = a;
  n.in[1] = b;
  return push(std::move(n));
}

Tape::Id Tape::transpose(Id a) {
  Node n;
  n.op = Op::Transpose;
  n.value = value(a).transpose();
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::exp(Id a) {
  Node n;
  n.op = Op::Exp;
  n.value = value(a).array().exp();
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::log(Id a) {
  Node n;
  n.op = Op::Log;
  n.value = value(a).array().log();
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::sqrt(Id a) {
  Node n;
  n.op = Op::Sqrt;
  n.value = value(a).array().sqrt();
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::sum(Id a) {
  Node n;
  n.op = Op::Sum;
  n.value = Mat::Constant(1, 1, value(a).sum());
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::trace(Id a) {
  Node n;
  n.op = Op::Trace;
  n.value = Mat::Constant(1, 1, value(a).trace());
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::dot(Id a, Id b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw DimensionMismatch("tape dot: shape mismatch");
  Node n;
  n.op = Op::Dot;
  n.value = Mat::Constant(1, 1, value(a).cwiseProduct(value(b)).sum());
  n.in[0] = a;
  n.in[1] = b;
  return push(std::move(n));
}

Tape::Id Tape::frob_sq(Id a) {
  Node n;
  n.op = Op::FrobSq;
  n.value = Mat::Constant(1, 1, value(a).squaredNorm());
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::colwise_sqnorm(Id a) {
  Node n;
  n.op = Op::ColwiseSqnorm;
  const Mat& v = value(a);
  Mat out(v.cols(), 1);
  for (Eigen::Index j = 0; j < v.cols(); ++j) out(j, 0) = v.col(j).squaredNorm();
  n.value = std::move(out);
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::row(Id a, Eigen::Index r) {
  if (r < 0 || r >= value(a).rows()) throw DimensionMismatch("tape row: index out of range");
  Node n;
  n.op = Op::Row;
  n.value = value(a).row(r);
  n.in[0] = a;
  n.cdata = static_cast<double>(r);
  return push(std::move(n));
}

Tape::Id Tape::replicate_rows(Id row_vec, Eigen::Index count) {
  if (value(row_vec).rows() != 1) throw DimensionMismatch("tape replicate_rows: expected 1 x m input");
  Node n;
  n.op = Op::ReplicateRows;
  n.value = value(row_vec).replicate(count, 1);
  n.in[0] = row_vec;
  return push(std::move(n));
}

Tape::Id Tape::replicate_cols(Id col_vec, Eigen::Index count) {
  if (value(col_vec).cols() != 1) throw DimensionMismatch("tape replicate_cols: expected n x 1 input");
  Node n;
  n.op = Op::ReplicateCols;
  n.value = value(col_vec).replicate(1, count);
  n.in[0] = col_vec;
  return push(std::move(n));
}

Tape::Id Tape::diag_from_vec(Id v) {
  if (value(v).cols() != 1) throw DimensionMismatch("tape diag_from_vec: expected n x 1 input");
  Node n;
  n.op = Op::DiagFromVec;
  const Eigen::Index m = value(v).rows();
  Mat out = Mat::Zero(m, m);
  out.diagonal() = value(v).col(0);
  n.value = std::move(out);
  n.in[0] = v;
  return push(std::move(n));
}

Tape::Id Tape::diag_part(Id a) {
  if (value(a).rows() != value(a).cols()) throw DimensionMismatch("tape diag_part: square input required");
  Node n;
  n.op = Op::DiagPart;
  n.value = value(a).diagonal();
  n.in[0] = a;
  return push(std::move(n));
}

Tape::Id Tape::vs_add(Id vec, Id s) {
  if (value(s).size() != 1) throw DimensionMismatch("tape vs_add: scalar operand must be 1 x 1");
  if (value(vec).size() == 1) throw DimensionMismatch("tape vs_add: vector operand must not be 1 x 1");
  Node n;
  n.op = Op::Add;  // backward distinguishes the broadcast by operand shapes
  Mat out = value(vec);
  out.array() += value(s)(0, 0);
  n.value = std::move(out);
  n.in[0] = vec;
  n.in[1] = s;
  return push(std::move(n));
}

Tape::Id Tape::smul(Id s, Id mat) {
  if (value(s).size() != 1) throw DimensionMismatch("tape smul: scalar operand must be 1 x 1");
  Node n;
  n.op = Op::Emul;
  n.value = value(s)(0, 0) * value(mat);
  n.in[0] = s;
  n.in[1] = mat;
  return push(std::move(n));
}

Tape::Id Tape::cholesky(Id a, const JitterPolicy& policy) {
  Node n;
  n.op = Op::Cholesky;
  CholFactor f = numkit::cholesky(value(a), policy);
  n.value = std::move(f.L);
  n.in[0] = a;
  n.cdata = f.jitter;
  if (f.jitter > max_jitter_) max_jitter_ = f.jitter;
  return push(std::move(n));
}

Tape::Id Tape::tri_solve_lower(Id chol, Id b) {
  if (value(chol).rows() != value(b).rows()) throw DimensionMismatch("tape tri_solve_lower: shape mismatch");
  Node n;
  n.op = Op::TriSolveLower;
  n.value = value(chol).triangularView<Eigen::Lower>().solve(value(b));
  n.in[0] = chol;
  n.in[1] = b;
  return push(std::move(n));
}

Tape::Id Tape::tri_solve_lower_t(Id chol, Id b) {
  if (value(chol).rows() != value(b).rows()) throw DimensionMismatch("tape tri_solve_lower_t: shape mismatch");
  Node n;
  n.op = Op::TriSolveLowerT;
  n.value = value(chol).transpose().triangularView<Eigen::Upper>().solve(value(b));
  n.in[0] = chol;
  n.in[1] = b;
  return push(std::move(n));
}

Tape::Id Tape::logdet_chol(Id chol) {
  Node n;
  n.op = Op::LogdetChol;
  double s = 0.0;
  for (Eigen::Index i = 0; i < value(chol).rows(); ++i) s += std::log(value(chol)(i, i));
  n.value = Mat::Constant(1, 1, 2.0 * s);
  n.in[0] = chol;
  return push(std::move(n));
}

Tape::Id Tape::build_lower(Id strict_lower, Id log_diag, Eigen::Index m) {
  if (value(log_diag).rows() != m) throw DimensionMismatch("tape build_lower: diagonal size mismatch");
  if (value(strict_lower).size() != m * (m - 1) / 2)
    throw DimensionMismatch("tape build_lower: strict lower size mismatch");
  Node n;
  n.op = Op::BuildLower;
  Mat out = Mat::Zero(m, m);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) out(i, j) = value(strict_lower)(k++, 0);
    out(i, i) = std::exp(value(log_diag)(i, 0));
  }
  n.value = std::move(out);
  n.in[0] = strict_lower;
  n.in[1] = log_diag;
  return push(std::move(n));
}

Tape::Id Tape::rbf_cross(Id x1, Id x2, Id log_amp, Id log_len) {
  const Mat& a = value(x1);
  const Mat& b = value(x2);
  const Eigen::Index d = a.cols();
  if (b.cols() != d || value(log_len).rows() != d || value(log_amp).size() != 1)
    throw DimensionMismatch("tape rbf_cross: shape mismatch");
  const double amp = std::exp(value(log_amp)(0, 0));
  Vec len = value(log_len).col(0).array().exp();
  Mat out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double q = 0.0;
      for (Eigen::Index t = 0; t < d; ++t) {
        const double diff = a(i, t) - b(j, t);
        q += diff * diff / len[t];
      }
      out(i, j) = amp * std::exp(-0.5 * q);
    }
  }
  Node n;
  n.op = Op::RbfCross;
  n.value = std::move(out);
  n.in[0] = x1;
  n.in[1] = x2;
  n.in[2] = log_amp;
  n.in[3] = log_len;
  return push(std::move(n));
}

Tape::Id Tape::log_mean_softmax(Id logits, Eigen::Index label) {
  const Mat& z = value(logits);
  if (label < 0 || label >= z.rows()) throw ClassOutOfRange("tape log_mean_softmax: label out of range");
  const Eigen::Index s_count = z.cols();
  Mat probs(z.rows(), s_count);
  double mean_py = 0.0;
  for (Eigen::Index s = 0; s < s_count; ++s) {
    const double mx = z.col(s).maxCoeff();
    Vec e = (z.col(s).array() - mx).exp();
    probs.col(s) = e / e.sum();
    mean_py += probs(label, s);
  }
  mean_py /= static_cast<double>(s_count);
  Node n;
  n.op = Op::LogMeanSoftmax;
  n.value = Mat::Constant(1, 1, std::log(std::max(mean_py, 1e-300)));
  n.in[0] = logits;
  n.cdata = static_cast<double>(label);
  n.cmat = std::move(probs);
  return push(std::move(n));
}

double Tape::jitter_applied(Id chol_id) const {
  const Node& n = nodes_[static_cast<std::size_t>(chol_id)];
  if (n.op != Op::Cholesky) throw ConfigError("jitter_applied: not a cholesky node");
  return n.cdata;
}

namespace {

// Lower triangle with halved diagonal; the Phi map in the Cholesky pullback.
Mat phi_lower(const Mat& m) {
  Mat out = m.triangularView<Eigen::Lower>();
  out.diagonal() *= 0.5;
  return out;
}

}  // namespace

std::vector<Mat> Tape::gradient(Id output, const std::vector<Id>& wrt) {
  if (value(output).size() != 1) throw DimensionMismatch("tape gradient: output must be 1 x 1");

  std::vector<Mat> adj(nodes_.size());
  std::vector<bool> touched(nodes_.size(), false);

  auto accumulate = [&](Id id, const Mat& g) {
    if (id < 0) return;
    auto idx = static_cast<std::size_t>(id);
    if (!touched[idx]) {
      adj[idx] = g;
      touched[idx] = true;
    } else {
      adj[idx] += g;
    }
  };

  accumulate(output, Mat::Constant(1, 1, 1.0));

  for (Id id = output; id >= 0; --id) {
    const auto idx = static_cast<std::size_t>(id);
    if (!touched[idx]) continue;
    const Node& n = nodes_[idx];
    const Mat& g = adj[idx];
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add: {
        // Plain add or vs_add; distinguished by operand shapes.
        if (value(n.in[1]).size() == 1 && value(n.in[0]).size() != 1) {
          accumulate(n.in[0], g);
          accumulate(n.in[1], Mat::Constant(1, 1, g.sum()));
        } else {
          accumulate(n.in[0], g);
          accumulate(n.in[1], g);
        }
        break;
      }
      case Op::Sub:
        accumulate(n.in[0], g);
        accumulate(n.in[1], -g);
        break;
      case Op::Neg:
        accumulate(n.in[0], -g);
        break;
      case Op::Scale:
        accumulate(n.in[0], n.cdata * g);
        break;
      case Op::AddConst:
        accumulate(n.in[0], g);
        break;
      case Op::Emul: {
        // Plain Hadamard product or smul; distinguished by operand shapes.
        if (value(n.in[0]).size() == 1 && value(n.in[1]).size() != 1) {
          accumulate(n.in[0], Mat::Constant(1, 1, g.cwiseProduct(value(n.in[1])).sum()));
          accumulate(n.in[1], value(n.in[0])(0, 0) * g);
        } else {
          accumulate(n.in[0], g.cwiseProduct(value(n.in[1])));
          accumulate(n.in[1], g.cwiseProduct(value(n.in[0])));
        }
        break;
      }
      case Op::Ediv: {
        const Mat& b = value(n.in[1]);
        accumulate(n.in[0], g.cwiseQuotient(b));
        accumulate(n.in[1], -g.cwiseProduct(n.value).cwiseQuotient(b));
        break;
      }
      case Op::Matmul:
        accumulate(n.in[0], g * value(n.in[1]).transpose());
        accumulate(n.in[1], value(n.in[0]).transpose() * g);
        break;
      case Op::Transpose:
        accumulate(n.in[0], g.transpose());
        break;
      case Op::Exp:
        accumulate(n.in[0], g.cwiseProduct(n.value));
        break;
      case Op::Log:
        accumulate(n.in[0], g.cwiseQuotient(value(n.in[0])));
        break;
      case Op::Sqrt:
        accumulate(n.in[0], (g.array() / (2.0 * n.value.array())).matrix());
        break;
      case Op::Sum:
        accumulate(n.in[0], Mat::Constant(value(n.in[0]).rows(), value(n.in[0]).cols(), g(0, 0)));
        break;
      case Op::Trace: {
        Mat gi = Mat::Zero(value(n.in[0]).rows(), value(n.in[0]).cols());
        gi.diagonal().setConstant(g(0, 0));
        accumulate(n.in[0], gi);
        break;
      }
      case Op::Dot:
        accumulate(n.in[0], g(0, 0) * value(n.in[1]));
        accumulate(n.in[1], g(0, 0) * value(n.in[0]));
        break;
      case Op::FrobSq:
        accumulate(n.in[0], 2.0 * g(0, 0) * value(n.in[0]));
        break;
      case Op::ColwiseSqnorm: {
        const Mat& a = value(n.in[0]);
        Mat gi(a.rows(), a.cols());
        for (Eigen::Index j = 0; j < a.cols(); ++j) gi.col(j) = 2.0 * g(j, 0) * a.col(j);
        accumulate(n.in[0], gi);
        break;
      }
      case Op::Row: {
        Mat gi = Mat::Zero(value(n.in[0]).rows(), value(n.in[0]).cols());
        gi.row(static_cast<Eigen::Index>(n.cdata)) = g;
        accumulate(n.in[0], gi);
        break;
      }
      case Op::ReplicateRows:
        accumulate(n.in[0], Mat(g.colwise().sum()));
        break;
      case Op::ReplicateCols:
        accumulate(n.in[0], Mat(g.rowwise().sum()));
        break;
      case Op::DiagFromVec: {
        Mat gi = g.diagonal();
        accumulate(n.in[0], gi);
        break;
      }
      case Op::DiagPart: {
        Mat gi = Mat::Zero(value(n.in[0]).rows(), value(n.in[0]).cols());
        gi.diagonal() = g.col(0);
        accumulate(n.in[0], gi);
        break;
      }
      case Op::Cholesky: {
        // Murray (2016): Abar = 1/2 (T + T^T), T = L^{-T} Phi(L^T Lbar) L^{-1}.
        // Upper entries of the output are structurally zero, so their
        // adjoints are dropped before the pullback.
        const Mat& l = n.value;
        Mat gl = g.triangularView<Eigen::Lower>();
        Mat p = phi_lower(l.transpose() * gl);
        Mat t = l.transpose().triangularView<Eigen::Upper>().solve(p);
        t = l.transpose().triangularView<Eigen::Upper>().solve(Mat(t.transpose())).transpose();
        Mat abar = 0.5 * (t + t.transpose());
        accumulate(n.in[0], abar);
        break;
      }
      case Op::TriSolveLower: {
        // X = L^{-1} B. Bbar = L^{-T} g,  Lbar = -tril(Bbar X^T).
        const Mat& l = value(n.in[0]);
        Mat bbar = l.transpose().triangularView<Eigen::Upper>().solve(g);
        Mat lbar = (-bbar * n.value.transpose()).triangularView<Eigen::Lower>();
        accumulate(n.in[0], lbar);
        accumulate(n.in[1], bbar);
        break;
      }
      case Op::TriSolveLowerT: {
        // X = L^{-T} B. Bbar = L^{-1} g,  Lbar = -tril(Bbar X^T).
        const Mat& l = value(n.in[0]);
        Mat bbar = l.triangularView<Eigen::Lower>().solve(g);
        Mat lbar = (-bbar * n.value.transpose()).triangularView<Eigen::Lower>();
        accumulate(n.in[0], lbar);
        accumulate(n.in[1], bbar);
        break;
      }
      case Op::LogdetChol: {
        const Mat& l = value(n.in[0]);
        Mat gi = Mat::Zero(l.rows(), l.cols());
        for (Eigen::Index i = 0; i < l.rows(); ++i) gi(i, i) = 2.0 * g(0, 0) / l(i, i);
        accumulate(n.in[0], gi);
        break;
      }
      case Op::BuildLower: {
        const Eigen::Index m = n.value.rows();
        Mat gs(m * (m - 1) / 2, 1);
        Mat gd(m, 1);
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < m; ++i) {
          for (Eigen::Index j = 0; j < i; ++j) gs(k++, 0) = g(i, j);
          gd(i, 0) = g(i, i) * n.value(i, i);
        }
        accumulate(n.in[0], gs);
        accumulate(n.in[1], gd);
        break;
      }
      case Op::RbfCross: {
        const Mat& a = value(n.in[0]);
        const Mat& b = value(n.in[1]);
        const Eigen::Index d = a.cols();
        Vec len = value(n.in[3]).col(0).array().exp();
        Mat ga = Mat::Zero(a.rows(), a.cols());
        Mat gb = Mat::Zero(b.rows(), b.cols());
        double glogamp = 0.0;
        Vec gloglen = Vec::Zero(d);
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
          for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const double w = g(i, j) * n.value(i, j);
            if (w == 0.0) continue;
            glogamp += w;
            for (Eigen::Index t = 0; t < d; ++t) {
              const double diff = a(i, t) - b(j, t);
              const double r = diff / len[t];
              ga(i, t) -= w * r;
              gb(j, t) += w * r;
              gloglen[t] += 0.5 * w * diff * r;
            }
          }
        }
        accumulate(n.in[0], ga);
        accumulate(n.in[1], gb);
        accumulate(n.in[2], Mat::Constant(1, 1, glogamp));
        accumulate(n.in[3], Mat(gloglen));
        break;
      }
      case Op::LogMeanSoftmax: {
        const Mat& probs = n.cmat;
        const auto label = static_cast<Eigen::Index>(n.cdata);
        const Eigen::Index s_count = probs.cols();
        const double q = std::max(std::exp(n.value(0, 0)), 1e-300);
        Mat gi(probs.rows(), s_count);
        const double common = g(0, 0) / (q * static_cast<double>(s_count));
        for (Eigen::Index s = 0; s < s_count; ++s) {
          const double py = probs(label, s);
          for (Eigen::Index c = 0; c < probs.rows(); ++c) {
            const double ind = (c == label) ? 1.0 : 0.0;
            gi(c, s) = common * py * (ind - probs(c, s));
          }
        }
        accumulate(n.in[0], gi);
        break;
      }
    }
  }

  std::vector<Mat> out;
  out.reserve(wrt.size());
  for (Id id : wrt) {
    const auto idx = static_cast<std::size_t>(id);
    if (touched[idx]) {
      out.push_back(adj[idx]);
    } else {
      out.push_back(Mat::Zero(value(id).rows(), value(id).cols()));
    }
  }
  return out;
}

GradResult grad(const ParamVector& params,
                const std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>& objective) {
  Tape tape;
  std::vector<Tape::Id> leaves;
  leaves.reserve(params.blocks().size());
  for (const auto& b : params.blocks()) {
    Mat block(b.rows, b.cols);
    for (Eigen::Index i = 0; i < b.size(); ++i) block.data()[i] = params.values()[b.offset + i];
    leaves.push_back(tape.leaf(block));
  }
  const Tape::Id out = objective(tape, leaves);
  std::vector<Mat> adjoints = tape.gradient(out, leaves);

  GradResult res;
  res.value = tape.scalar_value(out);
  res.gradient = Vec::Zero(params.size());
  for (std::size_t k = 0; k < adjoints.size(); ++k) {
    const auto& b = params.blocks()[k];
    for (Eigen::Index i = 0; i < b.size(); ++i) res.gradient[b.offset + i] = adjoints[k].data()[i];
  }
  if (!all_finite(res.gradient))
    throw NonFiniteGradient("grad: gradient has NaN or Inf components");
  return res;
}

}  // namespace fmgp::numkit
