#include "fmgp/kernels.hpp"
#include "fmgp/numkit.hpp"
#include "fmgp/tape.hpp"

#include <doctest.h>

using namespace fmgp;
using namespace fmgp::kernels;

namespace {

RbfParams random_params(Rng& rng, Eigen::Index d) {
  RbfParams p;
  p.log_amp = 0.4 * rng.normal();
  p.log_len = Vec::Zero(d);
  for (Eigen::Index j = 0; j < d; ++j) p.log_len[j] = 0.4 * rng.normal();
  return p;
}

}  // namespace

TEST_CASE("rbf: zero distance gives the amplitude") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    RbfParams p = random_params(rng, 3);
    Vec x(3);
    for (int j = 0; j < 3; ++j) x[j] = rng.normal();
    CHECK(rbf(x, x, p) == doctest::Approx(p.amp()).epsilon(1e-14));
  }
}

TEST_CASE("rbf: squared distance 2 ln 2 at unit scales halves the amplitude") {
  RbfParams p = RbfParams::unit(1);
  Vec x(1), y(1);
  x << 0.0;
  y << std::sqrt(2.0 * std::log(2.0));
  CHECK(rbf(x, y, p) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("rbf: symmetric in its arguments") {
  Rng rng(3);
  RbfParams p = random_params(rng, 4);
  for (int trial = 0; trial < 10; ++trial) {
    Vec x(4), y(4);
    for (int j = 0; j < 4; ++j) {
      x[j] = rng.normal();
      y[j] = rng.normal();
    }
    CHECK(rbf(x, y, p) == rbf(y, x, p));
  }
}

TEST_CASE("rbf_matrix: single point, duplicate rows, entrywise agreement") {
  RbfParams p = RbfParams::unit(2);
  p.log_amp = std::log(1.7);
  Mat x(1, 2);
  x << 0.3, -0.4;
  Mat k1 = rbf_matrix(x, x, p);
  CHECK(k1.rows() == 1);
  CHECK(k1(0, 0) == doctest::Approx(1.7).epsilon(1e-14));

  Mat dup(2, 2);
  dup << 1.0, 2.0, 1.0, 2.0;
  Mat kd = rbf_gram(dup, p);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(kd(i, j) == doctest::Approx(1.7).epsilon(1e-14));

  Rng rng(7);
  Mat a(5, 3), b(4, 3);
  for (int i = 0; i < 15; ++i) a.data()[i] = rng.normal();
  for (int i = 0; i < 12; ++i) b.data()[i] = rng.normal();
  RbfParams q = random_params(rng, 3);
  Mat k = rbf_matrix(a, b, q);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(k(i, j) == doctest::Approx(rbf(a.row(i).transpose(), b.row(j).transpose(), q)).epsilon(1e-14));

  Mat wrong(2, 4);
  CHECK_THROWS_AS(rbf_matrix(a, wrong, q), DimensionMismatch);
}

TEST_CASE("class_kernel: delta term alone survives at a same point with B = I") {
  auto p = ClassKernelParams::identity_b(3, 2, 2);
  p.rbf.log_amp = std::log(2.5);
  Vec x(2), psi0 = Vec::Zero(2);
  x << 0.1, 0.2;
  CHECK(class_kernel(x, psi0, 1, x, psi0, 1, p, true) == doctest::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("class_kernel: off-diagonal identity B zeroes cross-class values") {
  auto p = ClassKernelParams::identity_b(3, 2, 2);
  Rng rng(5);
  Vec x(2), y(2), px(2), py(2);
  for (int j = 0; j < 2; ++j) {
    x[j] = rng.normal();
    y[j] = rng.normal();
    px[j] = rng.normal();
    py[j] = rng.normal();
  }
  CHECK(class_kernel(x, px, 0, y, py, 2, p, false) == 0.0);
  CHECK_THROWS_AS(class_kernel(x, px, 3, y, py, 0, p, false), ClassOutOfRange);
}

TEST_CASE("class_kernel: unit embedding inner product reduces to the rbf factor") {
  auto p = ClassKernelParams::identity_b(2, 1, 2);
  Vec x(1), y(1), px(2), py(2);
  x << 0.0;
  y << 1.0;
  px << 1.0, 0.0;
  py << 1.0, 0.0;
  CHECK(class_kernel(x, px, 0, y, py, 0, p, false) ==
        doctest::Approx(rbf(x, y, p.rbf)).epsilon(1e-14));
}

TEST_CASE("kernel_diag: regression constant, classification from Eq-form factors") {
  RbfParams p = RbfParams::unit(2);
  p.log_amp = std::log(0.7);
  Mat x(3, 2);
  x.setRandom();
  Vec d = kernel_diag(x, p);
  for (int i = 0; i < 3; ++i) CHECK(d[i] == doctest::Approx(0.7).epsilon(1e-14));

  auto cp = ClassKernelParams::identity_b(2, 2, 2);
  cp.rbf.log_amp = std::log(0.7);
  Mat psi = Mat::Zero(1, 2);
  Vec dz = kernel_diag(psi, {0}, cp);
  CHECK(dz[0] == doctest::Approx(0.7).epsilon(1e-14));

  // B_cc = 4 via L_B diag = 2, |psi|^2 = 3 -> 4 * amp * 4
  cp.lb_log_diag[1] = std::log(2.0);
  Mat psi2(1, 2);
  psi2 << std::sqrt(3.0), 0.0;
  Vec d2 = kernel_diag(psi2, {1}, cp);
  CHECK(d2[0] == doctest::Approx(4.0 * 0.7 * 4.0).epsilon(1e-13));
}

TEST_CASE("kernel grams are PSD and factor with small jitter") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 4 + rng.uniform_int(8);
    const int d = 1 + rng.uniform_int(3);
    Mat x(n, d);
    for (int i = 0; i < n * d; ++i) x.data()[i] = rng.normal();
    RbfParams p = random_params(rng, d);
    Mat k = rbf_gram(x, p);

    Eigen::SelfAdjointEigenSolver<Mat> es(k);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8 * k.trace());

    auto f = numkit::cholesky(k);
    CHECK(f.jitter <= 1e-6 * k.diagonal().mean());
  }
}

TEST_CASE("class gram is PSD for random labeled inducing sets") {
  Rng rng(29);
  for (int trial = 0; trial < 8; ++trial) {
    const int m = 5 + rng.uniform_int(6);
    auto p = ClassKernelParams::identity_b(3, 2, 2);
    p.rbf.log_amp = 0.3 * rng.normal();
    for (int i = 0; i < p.lb_strict.size(); ++i) p.lb_strict[i] = 0.4 * rng.normal();
    for (int i = 0; i < 3; ++i) p.lb_log_diag[i] = 0.3 * rng.normal();
    Mat z(m, 2), psi(m, 2);
    std::vector<int> labels;
    for (int i = 0; i < m; ++i) {
      z(i, 0) = rng.normal();
      z(i, 1) = rng.normal();
      psi(i, 0) = rng.normal();
      psi(i, 1) = rng.normal();
      labels.push_back(rng.uniform_int(3));
    }
    Mat k = class_gram(z, psi, labels, p);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Mat> es(k);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8 * k.trace());
  }
}

TEST_CASE("rbf gradients match finite differences") {
  Rng rng(41);
  Mat x(4, 2), z(3, 2);
  for (int i = 0; i < 8; ++i) x.data()[i] = rng.normal();
  for (int i = 0; i < 6; ++i) z.data()[i] = rng.normal();

  numkit::ParamVector params;
  params.register_block("log_amp", 1, 1);
  params.register_block("log_len", 2, 1);
  params.register_block("z", 3, 2);
  params.set_block("log_amp", scalar_mat(0.2));
  Vec ll(2);
  ll << -0.1, 0.3;
  params.set_block("log_len", ll);
  params.set_block("z", z);

  auto build = [&](numkit::Tape& t, const std::vector<numkit::Tape::Id>& lv) {
    return t.frob_sq(t.rbf_cross(t.leaf(x), lv[2], lv[0], lv[1]));
  };
  auto res = numkit::grad(params, build);

  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double p0 = params.values()[i];
    const double h = 1e-5 * (1.0 + std::abs(p0));
    auto eval = [&](double v) {
      numkit::ParamVector q = params;
      q.values()[i] = v;
      numkit::Tape t;
      std::vector<numkit::Tape::Id> lv;
      for (const auto& b : q.blocks()) {
        Mat blk(b.rows, b.cols);
        for (Eigen::Index k = 0; k < b.size(); ++k) blk.data()[k] = q.values()[b.offset + k];
        lv.push_back(t.leaf(blk));
      }
      return t.scalar_value(build(t, lv));
    };
    const double fd = (eval(p0 + h) - eval(p0 - h)) / (2.0 * h);
    CHECK(std::abs(res.gradient[i] - fd) / std::max({1e-3, std::abs(fd), std::abs(res.gradient[i])}) < 1e-4);
  }
}
