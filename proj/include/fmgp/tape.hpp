#pragma once

#include "fmgp/common.hpp"
#include "fmgp/numkit.hpp"

#include <functional>
#include <vector>

namespace fmgp::numkit {

/// Recorded-tape reverse-mode differentiation over dense matrix expressions.
///
/// Every value on the tape is a matrix; vectors are n x 1 and scalars 1 x 1.
/// The primitive set covers exactly what the losses in this library are made
/// of: kernel evaluations, Cholesky factorizations, triangular solves,
/// log-determinants and reductions. Gradients are exact up to floating point;
/// the finite-difference suite is the acceptance oracle for every adjoint
/// implemented here.
class Tape {
 public:
  using Id = int;

  Id leaf(const Mat& value);
  Id leaf(const Vec& value) { return leaf(Mat(value)); }
  Id scalar(double value) { return leaf(scalar_mat(value)); }

  // Arithmetic.
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id neg(Id a);
  Id scale(Id a, double c);          // c * a, c constant
  Id add_const(Id a, const Mat& c);  // a + c, c constant
  Id emul(Id a, Id b);
  Id ediv(Id a, Id b);
  Id matmul(Id a, Id b);
  Id transpose(Id a);
  Id exp(Id a);
  Id log(Id a);
  Id sqrt(Id a);

  // Reductions and reshapes.
  Id sum(Id a);
  Id trace(Id a);
  Id dot(Id a, Id b);      // sum(a .* b) of same-shape operands
  Id frob_sq(Id a);        // sum of squared entries
  Id colwise_sqnorm(Id a); // column sums of squares, as a cols x 1 vector
  Id row(Id a, Eigen::Index r);
  Id replicate_rows(Id row_vec, Eigen::Index count);  // 1 x m -> count x m
  Id replicate_cols(Id col_vec, Eigen::Index count);  // n x 1 -> n x count
  Id diag_from_vec(Id v);
  Id diag_part(Id a);

  // Broadcasts with 1 x 1 operands.
  Id vs_add(Id vec, Id scalar);  // vec_i + s
  Id smul(Id scalar, Id mat);    // s * mat

  // Linear algebra.
  Id cholesky(Id a, const JitterPolicy& policy = {});
  Id tri_solve_lower(Id chol, Id b);    // L^{-1} B
  Id tri_solve_lower_t(Id chol, Id b);  // L^{-T} B
  Id logdet_chol(Id chol);              // 2 sum(log diag L)

  /// Lower-triangular matrix from a strictly-lower block (row-major order)
  /// and log-diagonal entries.
  Id build_lower(Id strict_lower, Id log_diag, Eigen::Index n);

  /// RBF cross-kernel matrix between the rows of x1 (n1 x d) and x2 (n2 x d)
  /// with log-amplitude (1 x 1) and per-dimension log length-scales (d x 1).
  /// K_ij = amp * exp(-0.5 sum_d (x1_id - x2_jd)^2 / len_d).
  Id rbf_cross(Id x1, Id x2, Id log_amp, Id log_len);

  /// log( mean_s softmax(logits[:, s])[label] ) for logits C x S.
  Id log_mean_softmax(Id logits, Eigen::Index label);

  const Mat& value(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  double scalar_value(Id id) const { return value(id)(0, 0); }
  double jitter_applied(Id chol_id) const;
  double max_jitter_applied() const { return max_jitter_; }

  /// Reverse pass from a 1 x 1 output node. Returns the adjoint of each
  /// requested leaf. Throws NonFiniteGradient when any adjoint entry is
  /// NaN or Inf.
  std::vector<Mat> gradient(Id output, const std::vector<Id>& wrt);

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    Leaf,
    Add,
    Sub,
    Neg,
    Scale,
    AddConst,
    Emul,
    Ediv,
    Matmul,
    Transpose,
    Exp,
    Log,
    Sqrt,
    Sum,
    Trace,
    Dot,
    FrobSq,
    ColwiseSqnorm,
    Row,
    ReplicateRows,
    ReplicateCols,
    DiagFromVec,
    DiagPart,
    Cholesky,
    TriSolveLower,
    TriSolveLowerT,
    LogdetChol,
    BuildLower,
    RbfCross,
    LogMeanSoftmax,
  };

  struct Node {
    Op op;
    Mat value;
    Id in[4] = {-1, -1, -1, -1};
    double cdata = 0.0;       // scale factor / jitter / row index / label
    Mat cmat;                 // constant operand where needed
  };

  Id push(Node&& n);
  std::vector<Node> nodes_;
  double max_jitter_ = 0.0;
};

/// Exact gradient of the objective at `params`. The objective callback
/// receives a tape plus one leaf per registered block (in registration
/// order) and returns the 1 x 1 output node.
struct GradResult {
  double value = 0.0;
  Vec gradient;
};

GradResult grad(const ParamVector& params,
                const std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>& objective);

}  // namespace fmgp::numkit
