#pragma once

#include "fmgp/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fmgp::numkit {

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// together with the diagonal jitter that was applied to obtain it.
struct CholFactor {
  Mat L;
  double jitter = 0.0;

  Eigen::Index dim() const { return L.rows(); }
};

/// Relative jitter ladder. Multipliers are scaled by mean(diag A); when the
/// diagonal mean is not positive the multipliers are used as absolute values.
struct JitterPolicy {
  std::vector<double> multipliers{0.0, 1e-8, 1e-6, 1e-4};
};

/// Factors A + jitter*I = L*L^T, escalating jitter through the policy ladder.
/// Throws NotPositiveDefinite when every rung fails.
CholFactor cholesky(const Mat& a, const JitterPolicy& policy = {});

enum class TriSide { Lower, Upper };

/// Solves L x = b (Lower) or L^T x = b (Upper).
Vec tri_solve(const CholFactor& f, const Vec& b, TriSide side);
Mat tri_solve(const CholFactor& f, const Mat& b, TriSide side);

/// log|A| for the matrix A = L*L^T behind the factor: 2 * sum(log diag L).
double logdet(const CholFactor& f);

/// Flat vector of unconstrained trainable scalars with named, disjoint block
/// slices. Positive quantities are stored by their callers in log-space.
class ParamVector {
 public:
  struct Block {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index size() const { return rows * cols; }
  };

  Eigen::Index register_block(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  Eigen::Index size() const { return values_.size(); }
  const Vec& values() const { return values_; }
  Vec& values() { return values_; }

  const std::vector<Block>& blocks() const { return blocks_; }
  bool has_block(const std::string& name) const;
  const Block& block_info(const std::string& name) const;

  /// Block payload as a rows x cols matrix (row-major slice of the flat vector).
  Mat block(const std::string& name) const;
  Vec block_vec(const std::string& name) const;
  void set_block(const std::string& name, const Mat& value);
  void set_block(const std::string& name, const Vec& value);

  /// Name of the block containing flat index i.
  const Block& block_of_index(Eigen::Index i) const;

 private:
  Vec values_{Vec::Zero(0)};
  std::vector<Block> blocks_;
};

/// Bias-corrected Adam. The caller chooses ascent or descent.
struct AdamState {
  Vec m;
  Vec v;
  long t = 0;

  explicit AdamState(Eigen::Index n) : m(Vec::Zero(n)), v(Vec::Zero(n)) {}
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool ascent = false;
};

void adam_step(AdamState& state, Vec& params, const Vec& grad, const AdamConfig& cfg);

/// Lloyd's algorithm with k-means++ seeding; deterministic under seed,
/// stops after 50 iterations or once assignments are stable.
Mat kmeans(const Mat& points, int m, std::uint64_t seed);

/// Within-cluster sum of squares for given centers (test/diagnostic helper).
double kmeans_objective(const Mat& points, const Mat& centers);

}  // namespace fmgp::numkit
