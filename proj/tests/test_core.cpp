#include "fmgp/fmgp_core.hpp"

#include <doctest.h>

using namespace fmgp;
using namespace fmgp::core;

namespace {

VariationalState scalar_state(double amp, double a_tilde_scalar) {
  Mat z(1, 1);
  z << 0.0;
  kernels::RbfParams k = kernels::RbfParams::unit(1);
  k.log_amp = std::log(amp);
  auto s = VariationalState::init_regression(z, k, 1.0);
  s.l_log_diag[0] = 0.5 * std::log(a_tilde_scalar);
  return s;
}

VariationalState random_regression_state(Rng& rng, Eigen::Index m, Eigen::Index d) {
  Mat z(m, d);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  kernels::RbfParams k = kernels::RbfParams::unit(d);
  k.log_amp = 0.4 * rng.normal();
  for (Eigen::Index j = 0; j < d; ++j) k.log_len[j] = 0.4 * rng.normal();
  auto s = VariationalState::init_regression(z, k, 1.0);
  for (Eigen::Index i = 0; i < s.l_strict.size(); ++i) s.l_strict[i] = 0.4 * rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) s.l_log_diag[i] = 0.5 * rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) s.a[i] = 0.7 * rng.normal();
  return s;
}

VariationalState random_class_state(Rng& rng, Eigen::Index m, Eigen::Index d, Eigen::Index e, Eigen::Index c) {
  Mat z(m, d), psi(m, e);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < psi.size(); ++i) psi.data()[i] = rng.normal();
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < m; ++i) labels.push_back(rng.uniform_int(static_cast<int>(c)));
  auto params = kernels::ClassKernelParams::identity_b(c, d, e);
  params.rbf.log_amp = 0.3 * rng.normal();
  for (Eigen::Index j = 0; j < d; ++j) params.rbf.log_len[j] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < params.lb_strict.size(); ++i) params.lb_strict[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < c; ++i) params.lb_log_diag[i] = 0.3 * rng.normal();
  auto s = VariationalState::init_classification(z, psi, labels, params);
  for (Eigen::Index i = 0; i < s.l_strict.size(); ++i) s.l_strict[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) s.l_log_diag[i] = 0.4 * rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) s.a[i] = 0.5 * rng.normal();
  return s;
}

}  // namespace

TEST_CASE("predictive_variance: vanishing L gives the prior variance") {
  auto s = scalar_state(1.4, 1.0);
  s.l_log_diag[0] = -200.0;  // L -> 0
  Vec x(1);
  x << 0.7;
  CHECK(predictive_variance(s, x) == doctest::Approx(1.4).epsilon(1e-12));
}

TEST_CASE("predictive_variance: scalar instance evaluates Eq-form and Woodbury route") {
  auto s = scalar_state(1.0, 1.0);
  Vec x(1);
  x << 0.0;  // x = z
  const double v = predictive_variance(s, x);
  CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  // Woodbury cross-check: (K_beta^{-1} + Atilde)^{-1} with K_beta = 1.
  CHECK(v == doctest::Approx(1.0 / (1.0 + 1.0)).epsilon(1e-12));
}

TEST_CASE("predictive_variance: explicit-inverse oracle on random states") {
  Rng rng(71);
  for (int trial = 0; trial < 12; ++trial) {
    auto s = random_regression_state(rng, 4 + rng.uniform_int(4), 2);
    Mat k_beta = kernels::rbf_gram(s.z, s.rbf);
    Mat a_tilde = s.a_tilde();
    Mat a_mat = -(a_tilde.inverse() + k_beta).inverse();  // brute force
    auto pred = Predictor::prepare(s);
    for (int q = 0; q < 5; ++q) {
      Vec x(2);
      x << rng.normal(), rng.normal();
      Vec kx(s.m());
      for (Eigen::Index i = 0; i < s.m(); ++i) kx[i] = kernels::rbf(s.z.row(i).transpose(), x, s.rbf);
      const double expect = s.rbf.amp() + kx.dot(a_mat * kx);
      CHECK(pred.variance(x) == doctest::Approx(expect).epsilon(1e-9));
    }
  }
}

TEST_CASE("predictive containment: variance stays within [0, prior]") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    auto s = random_regression_state(rng, 6, 2);
    auto pred = Predictor::prepare(s);
    for (int q = 0; q < 40; ++q) {
      Vec x(2);
      x << 3.0 * rng.normal(), 3.0 * rng.normal();
      const double v = pred.variance(x);
      CHECK(v >= 0.0);
      CHECK(v <= s.rbf.amp() + 1e-12);
    }
  }
}

TEST_CASE("predictive_cov_class: L -> 0 gives the prior block") {
  Rng rng(81);
  auto s = random_class_state(rng, 5, 2, 2, 3);
  s.l_log_diag.setConstant(-200.0);
  s.l_strict.setZero();
  Vec x(2), psi(2);
  x << 0.3, -0.2;
  psi << 0.5, 1.0;
  Mat cov = predictive_cov_class(s, x, psi);
  Mat expect = s.class_params().b() * (s.rbf.amp() * (psi.squaredNorm() + 1.0));
  CHECK((cov - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("predictive_cov_class: identity B and zero embeddings give a diagonal prior") {
  auto params = kernels::ClassKernelParams::identity_b(3, 2, 2);
  params.rbf.log_amp = std::log(0.9);
  Mat z(4, 2);
  z << 1, 1, -1, 1, 1, -1, -1, -1;
  Mat psi = Mat::Zero(4, 2);
  auto s = VariationalState::init_classification(z, psi, {0, 1, 2, 0}, params);
  Vec x(2), psix = Vec::Zero(2);
  x << 8.0, 8.0;  // distinct from every inducing location
  Mat cov = predictive_cov_class(s, x, psix);
  Mat expect = 0.9 * Mat::Identity(3, 3);
  CHECK((cov - expect).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("predictive_cov_class: brute-force joint-kernel Schur oracle") {
  Rng rng(91);
  for (int trial = 0; trial < 8; ++trial) {
    const Eigen::Index m = 4 + rng.uniform_int(3);
    auto s = random_class_state(rng, m, 2, 2, 3);
    auto params = s.class_params();
    Vec x(2), psix(2);
    x << rng.normal(), rng.normal();
    psix << rng.normal(), rng.normal();

    // Materialize the joint kernel over inducing pairs and the C test outputs
    // and take the Schur complement against K_beta + Atilde^{-1}.
    Mat k_beta = kernels::class_gram(s.z, s.psi, s.labels, params);
    Mat kx = kernels::class_cross(x, psix, s.z, s.psi, s.labels, params);
    Mat sigma0 = params.b() * (params.rbf.amp() * (psix.squaredNorm() + 1.0));
    Mat shifted = k_beta + s.a_tilde().inverse();
    Mat expect = sigma0 - kx * shifted.inverse() * kx.transpose();

    Mat cov = predictive_cov_class(s, x, psix);
    CHECK((cov - expect).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
    CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("kl_q: zero L means zero divergence") {
  auto s = scalar_state(1.0, 1.0);
  s.l_log_diag[0] = -200.0;
  CHECK(kl_q(s) == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("kl_q: scalar hand value") {
  auto s = scalar_state(1.0, 1.0);  // K_beta = 1, Atilde = 1
  CHECK(kl_q(s) == doctest::Approx(-0.25 + 0.5 * std::log(2.0)).epsilon(1e-12));
  CHECK(kl_q(s) == doctest::Approx(0.09657).epsilon(1e-4));
}

TEST_CASE("kl_q: nonnegative over random states") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    auto s = random_regression_state(rng, 1 + rng.uniform_int(5), 1 + rng.uniform_int(2));
    CHECK(kl_q(s) >= -1e-10);
  }
}

TEST_CASE("kl_qstar: adds the auxiliary mean quadratic form") {
  auto s = scalar_state(1.0, 1.0);
  s.a[0] = 2.0;
  CHECK(kl_qstar(s) == doctest::Approx(kl_q(s) + 2.0).epsilon(1e-12));
  CHECK(kl_qstar(s) == doctest::Approx(2.09657).epsilon(1e-4));

  s.a[0] = 0.0;
  CHECK(kl_qstar(s) == doctest::Approx(kl_q(s)).epsilon(1e-14));
}

TEST_CASE("kl_qstar >= kl_q always") {
  Rng rng(107);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = random_regression_state(rng, 2 + rng.uniform_int(4), 2);
    CHECK(kl_qstar(s) >= kl_q(s) - 1e-12);
  }
}

TEST_CASE("qstar_mean: expansion of a over the inducing kernel") {
  auto s = scalar_state(1.0, 1.0);
  SUBCASE("zero coefficients") {
    Vec x(1);
    x << 0.3;
    CHECK(qstar_mean(s, x) == 0.0);
  }
  SUBCASE("single point at the inducing location") {
    s.a[0] = 3.0;
    Vec x(1);
    x << 0.0;
    CHECK(qstar_mean(s, x) == doctest::Approx(3.0).epsilon(1e-14));
  }
  SUBCASE("far field reverts to zero") {
    s.a[0] = 3.0;
    Vec x(1);
    x << 400.0;
    CHECK(std::abs(qstar_mean(s, x)) < 1e-12);
  }
}

TEST_CASE("mean_approx_error: g in the span is reproduced") {
  Rng rng(117);
  Mat z(6, 1);
  for (int i = 0; i < 6; ++i) z(i, 0) = static_cast<double>(i) / 5.0;
  kernels::RbfParams k = kernels::RbfParams::unit(1);
  k.log_len[0] = std::log(0.2);
  Vec a_true(6);
  for (int i = 0; i < 6; ++i) a_true[i] = rng.normal();
  Mat probes(40, 1);
  for (int i = 0; i < 40; ++i) probes(i, 0) = static_cast<double>(i) / 39.0;
  Vec g = kernels::rbf_matrix(probes, z, k) * a_true;
  auto res = mean_approx_error(probes, g, z, k, 1e-12);
  CHECK(res.sup_error < 1e-6);
}

TEST_CASE("mean_approx_error: constant function approximated by 64 centers") {
  const double c = 3.0;
  Mat z(64, 1), probes(201, 1);
  for (int i = 0; i < 64; ++i) z(i, 0) = static_cast<double>(i) / 63.0;
  for (int i = 0; i < 201; ++i) probes(i, 0) = static_cast<double>(i) / 200.0;
  kernels::RbfParams k = kernels::RbfParams::unit(1);
  k.log_len[0] = std::log(0.05);
  Vec g = Vec::Constant(201, c);
  auto res = mean_approx_error(probes, g, z, k, 1e-8);
  CHECK(res.sup_error < 0.01 * std::abs(c));
}

TEST_CASE("mean_approx_error: nested centers do not increase the error") {
  // Fixed probe grid and a smooth target; center sets are prefixes of one
  // fixed ordering so spans are nested.
  Mat probes(301, 1);
  for (int i = 0; i < 301; ++i) probes(i, 0) = static_cast<double>(i) / 300.0;
  Vec g(301);
  for (int i = 0; i < 301; ++i) g[i] = std::sin(6.0 * probes(i, 0)) + 0.3 * probes(i, 0);
  kernels::RbfParams k = kernels::RbfParams::unit(1);
  k.log_len[0] = std::log(0.03);

  // van der Corput ordering of [0,1] keeps prefixes well spread.
  auto vdc = [](int i) {
    double x = 0.0, f = 0.5;
    for (; i > 0; i >>= 1, f *= 0.5)
      if (i & 1) x += f;
    return x;
  };
  Mat all(256, 1);
  for (int i = 0; i < 256; ++i) all(i, 0) = vdc(i + 1);

  double prev = 1e300;
  for (int m : {16, 32, 64, 128, 256}) {
    auto res = mean_approx_error(probes, g, all.topRows(m), k, 1e-10);
    CHECK(res.sup_error <= prev + 1e-10);
    prev = res.sup_error;
  }
}

TEST_CASE("mean_approx_error: input guards") {
  Mat probes(3, 1), z(2, 1);
  probes << 0, 0.5, 1;
  z << 0.2, 0.8;
  Vec g(3);
  g << 1, 2, 3;
  kernels::RbfParams k = kernels::RbfParams::unit(1);
  CHECK_THROWS_AS(mean_approx_error(probes, g, z, k, 0.0), DomainError);
  CHECK_THROWS_AS(mean_approx_error(Mat(0, 1), Vec(0), z, k, 1e-8), EmptyInput);
}
