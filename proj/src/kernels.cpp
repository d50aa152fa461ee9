#include "fmgp/kernels.hpp"

namespace fmgp::kernels {

double rbf(Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> y, const RbfParams& p) {
  if (x.size() != y.size() || x.size() != p.dim()) throw DimensionMismatch("rbf: dimension mismatch");
  double q = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double diff = x[j] - y[j];
    q += diff * diff / p.len(j);
  }
  return p.amp() * std::exp(-0.5 * q);
}

Mat rbf_matrix(const Mat& x, const Mat& y, const RbfParams& p) {
  if (x.cols() != y.cols() || x.cols() != p.dim()) throw DimensionMismatch("rbf_matrix: dimension mismatch");
  Mat out(x.rows(), y.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < y.rows(); ++j) out(i, j) = rbf(x.row(i).transpose(), y.row(j).transpose(), p);
  return out;
}

Mat rbf_gram(const Mat& x, const RbfParams& p) {
  Mat out(x.rows(), x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) out(i, j) = rbf(x.row(i).transpose(), x.row(j).transpose(), p);
  }
  return symmetrize_from_lower(out);
}

Mat ClassKernelParams::lb() const {
  const Eigen::Index c = n_classes();
  if (lb_strict.size() != c * (c - 1) / 2) throw DimensionMismatch("ClassKernelParams: L_B block sizes disagree");
  Mat out = Mat::Zero(c, c);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) out(i, j) = lb_strict[k++];
    out(i, i) = std::exp(lb_log_diag[i]);
  }
  return out;
}

Mat ClassKernelParams::b() const {
  Mat l = lb();
  return l * l.transpose();
}

ClassKernelParams ClassKernelParams::identity_b(Eigen::Index classes, Eigen::Index input_dim, Eigen::Index embed_dim) {
  ClassKernelParams p;
  p.rbf = RbfParams::unit(input_dim);
  p.lb_strict = Vec::Zero(classes * (classes - 1) / 2);
  p.lb_log_diag = Vec::Zero(classes);
  p.embed_dim = embed_dim;
  return p;
}

namespace {

void check_class(int c, Eigen::Index n_classes) {
  if (c < 0 || c >= n_classes) throw ClassOutOfRange("class kernel: label out of range");
}

}  // namespace

double class_kernel(Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x, int cx,
                    Eigen::Ref<const Vec> x2, Eigen::Ref<const Vec> psi2, int c2,
                    const ClassKernelParams& p, bool same_point) {
  check_class(cx, p.n_classes());
  check_class(c2, p.n_classes());
  if (psi_x.size() != psi2.size()) throw DimensionMismatch("class_kernel: embedding dimension mismatch");
  const Mat b = p.b();
  const double lin = psi_x.dot(psi2) + (same_point ? 1.0 : 0.0);
  return b(cx, c2) * rbf(x, x2, p.rbf) * lin;
}

Mat class_gram(const Mat& z, const Mat& psi, const std::vector<int>& labels, const ClassKernelParams& p) {
  const Eigen::Index m = z.rows();
  if (psi.rows() != m || static_cast<Eigen::Index>(labels.size()) != m)
    throw DimensionMismatch("class_gram: row counts disagree");
  const Mat b = p.b();
  for (int c : labels) check_class(c, p.n_classes());
  Mat out(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double lin = psi.row(i).dot(psi.row(j)) + (i == j ? 1.0 : 0.0);
      out(i, j) = b(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(j)]) *
                  rbf(z.row(i).transpose(), z.row(j).transpose(), p.rbf) * lin;
    }
  }
  return symmetrize_from_lower(out);
}

Mat class_cross(Eigen::Ref<const Vec> x, Eigen::Ref<const Vec> psi_x, const Mat& z, const Mat& psi,
                const std::vector<int>& labels, const ClassKernelParams& p) {
  const Eigen::Index m = z.rows();
  const Eigen::Index c_count = p.n_classes();
  const Mat b = p.b();
  for (int c : labels) check_class(c, c_count);
  Mat out(c_count, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double base = rbf(x, z.row(j).transpose(), p.rbf) * psi_x.dot(psi.row(j));
    for (Eigen::Index c = 0; c < c_count; ++c)
      out(c, j) = b(c, labels[static_cast<std::size_t>(j)]) * base;
  }
  return out;
}

Vec kernel_diag(const Mat& x, const RbfParams& p) {
  return Vec::Constant(x.rows(), p.amp());
}

Vec kernel_diag(const Mat& psi, const std::vector<int>& labels, const ClassKernelParams& p) {
  if (psi.rows() != static_cast<Eigen::Index>(labels.size()))
    throw DimensionMismatch("kernel_diag: row counts disagree");
  const Mat b = p.b();
  Vec out(psi.rows());
  for (Eigen::Index i = 0; i < psi.rows(); ++i) {
    check_class(labels[static_cast<std::size_t>(i)], p.n_classes());
    out[i] = b(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(i)]) * p.rbf.amp() *
             (psi.row(i).squaredNorm() + 1.0);
  }
  return out;
}

}  // namespace fmgp::kernels
