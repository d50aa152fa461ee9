#include "fmgp/training.hpp"
#include "fmgp/verify.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <numeric>

using namespace fmgp;
using namespace fmgp::training;

namespace {

io::PredictionBundle tiny_regression_bundle(Rng& rng, Eigen::Index n, Eigen::Index d) {
  io::PredictionBundle b;
  b.mode = Mode::Regression;
  b.x.resize(n, d);
  b.g.resize(n, 1);
  b.y.resize(n);
  for (Eigen::Index i = 0; i < n * d; ++i) b.x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < n; ++i) {
    b.g(i, 0) = rng.normal();
    b.y[i] = b.g(i, 0) + 0.4 * rng.normal();
  }
  return b;
}

core::VariationalState small_state(Rng& rng, Eigen::Index m, Eigen::Index d) {
  Mat z(m, d);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  kernels::RbfParams k = kernels::RbfParams::unit(d);
  k.log_amp = 0.3 * rng.normal();
  auto s = core::VariationalState::init_regression(z, k, 0.3);
  for (Eigen::Index i = 0; i < s.l_strict.size(); ++i) s.l_strict[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) s.l_log_diag[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) s.a[i] = 0.4 * rng.normal();
  return s;
}

}  // namespace

TEST_CASE("gaussian_log_expected_lik: peak values and quadrature oracle") {
  CHECK(gaussian_log_expected_lik(0.0, 0.0, 0.0, 1.0) ==
        doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));
  CHECK(gaussian_log_expected_lik(0.0, 0.0, 0.0, 1.0) == doctest::Approx(-0.91894).epsilon(1e-4));

  CHECK(gaussian_log_expected_lik(0.0, 0.0, 1.0, 1.0) ==
        doctest::Approx(-0.5 * std::log(4.0 * M_PI)).epsilon(1e-12));
  CHECK(gaussian_log_expected_lik(0.0, 0.0, 1.0, 1.0) == doctest::Approx(-1.26551).epsilon(1e-4));

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const double y = rng.normal(), mean = rng.normal();
    const double var = 0.2 + rng.uniform(), s2 = 0.2 + rng.uniform();
    const double expect = std::log(oracles::gaussian_expected_lik_by_quadrature(y, mean, var, s2));
    CHECK(gaussian_log_expected_lik(y, mean, var, s2) == doctest::Approx(expect).epsilon(1e-8));
  }

  CHECK_THROWS_AS(gaussian_log_expected_lik(0, 0, -1.0, 1.0), DomainError);
  CHECK_THROWS_AS(gaussian_log_expected_lik(0, 0, 1.0, 0.0), DomainError);
}

TEST_CASE("categorical_log_expected_lik: deterministic limits") {
  Rng rng(5);
  SUBCASE("confident correct logits") {
    Vec logits(2);
    logits << 10.0, -10.0;
    const double v = categorical_log_expected_lik(0, logits, Mat::Zero(2, 2), 64, rng);
    CHECK(v == doctest::Approx(-std::log(1.0 + std::exp(-20.0))).epsilon(1e-6));
    CHECK(std::abs(v - (-2.061e-9)) < 1e-10);
  }
  SUBCASE("uniform softmax") {
    Vec logits = Vec::Zero(2);
    const double v = categorical_log_expected_lik(1, logits, Mat::Zero(2, 2), 32, rng);
    CHECK(v == doctest::Approx(std::log(0.5)).epsilon(1e-5));
  }
  SUBCASE("label range is enforced") {
    Vec logits = Vec::Zero(2);
    CHECK_THROWS_AS(categorical_log_expected_lik(2, logits, Mat::Zero(2, 2), 8, rng), ClassOutOfRange);
  }
}

TEST_CASE("categorical_log_expected_lik: large-S estimate matches quadrature") {
  // C = 2, zero logits, identity covariance: E[softmax_0] by 1-D quadrature
  // over the difference coordinate, which is N(0, 2).
  const double quad = oracles::integrate(
      [](double t) {
        return (1.0 / (1.0 + std::exp(-t))) * oracles::normal_pdf(t, 0.0, 2.0);
      },
      -14.0, 14.0, 1e-12);
  Rng rng(7);
  const int s = 100000;
  Vec logits = Vec::Zero(2);
  const double est = std::exp(categorical_log_expected_lik(0, logits, Mat::Identity(2, 2), s, rng));
  // MC standard error of a [0,1]-bounded variable.
  const double se = 0.5 / std::sqrt(static_cast<double>(s));
  CHECK(std::abs(est - quad) < 3.0 * se);
}

TEST_CASE("minibatch_objective: full batch equals the whole-data objective") {
  Rng rng(11);
  auto bundle = tiny_regression_bundle(rng, 9, 2);
  auto state = small_state(rng, 4, 2);
  FitConfig cfg;
  cfg.mode = Mode::Regression;
  cfg.m_beta = 4;
  cfg.batch = 9;
  std::vector<int> all(9);
  std::iota(all.begin(), all.end(), 0);
  const double full = minibatch_objective(state, bundle, all, cfg);
  // Same indices, same scale factor 1: identical by construction.
  CHECK(minibatch_objective(state, bundle, all, cfg) == full);
}

TEST_CASE("minibatch_objective: hand evaluation near the initialization") {
  // a = 0, L -> 0, g = 0: both data terms collapse to log N(y | 0, s2 + amp)
  // and the KL terms vanish, so the value is computable by hand.
  Mat z(2, 1);
  z << 0.0, 1.0;
  kernels::RbfParams k = kernels::RbfParams::unit(1);
  const double amp = 1.0, sigma2 = 0.25;
  auto state = core::VariationalState::init_regression(z, k, sigma2);
  state.l_log_diag.setConstant(-300.0);

  io::PredictionBundle b;
  b.mode = Mode::Regression;
  b.x.resize(3, 1);
  b.x << -0.5, 0.2, 1.3;
  b.g = Mat::Zero(3, 1);
  b.y.resize(3);
  b.y << 0.4, -0.7, 1.1;

  FitConfig cfg;
  cfg.mode = Mode::Regression;
  cfg.m_beta = 2;
  cfg.batch = 3;
  std::vector<int> all{0, 1, 2};
  const double got = minibatch_objective(state, b, all, cfg);

  double expect = 0.0;
  const double s = sigma2 + amp;
  for (int i = 0; i < 3; ++i)
    expect += 2.0 * (-0.5 * std::log(2.0 * M_PI * s) - b.y[i] * b.y[i] / (2.0 * s));
  CHECK(got == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("minibatch_objective: unbiased over uniformly drawn batches") {
  Rng rng(13);
  auto bundle = tiny_regression_bundle(rng, 12, 1);
  auto state = small_state(rng, 3, 1);
  FitConfig cfg;
  cfg.mode = Mode::Regression;
  cfg.m_beta = 3;
  cfg.batch = 3;

  std::vector<int> all(12);
  std::iota(all.begin(), all.end(), 0);
  FitConfig full_cfg = cfg;
  full_cfg.batch = 12;
  const double full = minibatch_objective(state, bundle, all, full_cfg);

  const int draws = 10000;
  double sum = 0.0, sumsq = 0.0;
  for (int t = 0; t < draws; ++t) {
    std::vector<int> pool = all;
    std::vector<int> batch(3);
    for (int k = 0; k < 3; ++k) {
      const int j = k + rng.uniform_int(12 - k);
      std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
      batch[static_cast<std::size_t>(k)] = pool[static_cast<std::size_t>(k)];
    }
    const double v = minibatch_objective(state, bundle, batch, cfg);
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / draws;
  const double sd = std::sqrt((sumsq / draws - mean * mean) / draws);
  CHECK(std::abs(mean - full) < 2.0 * sd + 1e-9);
}

TEST_CASE("fit: rejects inconsistent configurations") {
  Rng rng(17);
  auto bundle = tiny_regression_bundle(rng, 8, 2);
  FitConfig cfg;
  cfg.mode = Mode::Regression;
  cfg.m_beta = 0;
  CHECK_THROWS_AS(fit(bundle, cfg), ConfigError);
  cfg.m_beta = 4;
  cfg.mode = Mode::Classification;
  cfg.batch = 8;
  CHECK_THROWS_AS(fit(bundle, cfg), ModeMismatch);
}

TEST_CASE("fit: zero-variance targets drive sigma2 to its floor") {
  Rng rng(19);
  auto bundle = tiny_regression_bundle(rng, 20, 1);
  bundle.y = bundle.g.col(0);  // y identically g
  FitConfig cfg;
  cfg.mode = Mode::Regression;
  cfg.m_beta = 5;
  cfg.batch = 20;
  cfg.steps = 500;
  cfg.lr = 5e-3;
  cfg.seed = 3;
  auto init = init_state(bundle, cfg);
  CHECK(init.sigma2() == doctest::Approx(1e-6).epsilon(1e-12));

  auto res = fit(bundle, cfg);
  // Noise stays at desk-floor scale and the objective trend is non-decreasing
  // in windowed averages.
  CHECK(res.state.sigma2() < 1e-3);
  const auto& rows = res.trace.rows;
  const int window = 100;
  int ok = 0, total = 0;
  for (std::size_t i = window; i + window < rows.size(); i += window) {
    double w1 = 0.0, w2 = 0.0;
    for (int k = 0; k < window; ++k) {
      w1 += rows[i - window + k].objective;
      w2 += rows[i + k].objective;
    }
    total += 1;
    ok += (w2 >= w1);
  }
  CHECK(ok == total);
}

TEST_CASE("fit: bitwise deterministic under a fixed seed") {
  Rng rng(23);
  auto bundle = tiny_regression_bundle(rng, 15, 2);
  FitConfig cfg;
  cfg.mode = Mode::Regression;
  cfg.m_beta = 5;
  cfg.batch = 6;
  cfg.steps = 120;
  cfg.seed = 77;
  auto r1 = fit(bundle, cfg);
  auto r2 = fit(bundle, cfg);
  REQUIRE(r1.trace.rows.size() == r2.trace.rows.size());
  for (std::size_t i = 0; i < r1.trace.rows.size(); ++i) {
    CHECK(r1.trace.rows[i].objective == r2.trace.rows[i].objective);
    CHECK(r1.trace.rows[i].kl_q == r2.trace.rows[i].kl_q);
    CHECK(r1.trace.rows[i].kl_qstar == r2.trace.rows[i].kl_qstar);
  }
  CHECK((r1.state.l_log_diag - r2.state.l_log_diag).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r1.state.z - r2.state.z).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit: per-step cost does not grow with N at fixed batch and M") {
  // Functional check at unit-test scale: the per-step tape touches only the
  // batch, so doubling N must not change traced KL values given equal state;
  // wall-clock scaling is asserted in the acceptance suite.
  Rng rng(29);
  auto small = tiny_regression_bundle(rng, 40, 1);
  io::PredictionBundle big = small;
  const Eigen::Index n2 = 80;
  big.x.conservativeResize(n2, 1);
  big.g.conservativeResize(n2, 1);
  big.y.conservativeResize(n2);
  for (Eigen::Index i = 40; i < n2; ++i) {
    big.x(i, 0) = rng.normal();
    big.g(i, 0) = rng.normal();
    big.y[i] = big.g(i, 0) + 0.4 * rng.normal();
  }
  auto state = small_state(rng, 4, 1);
  FitConfig cfg;
  cfg.mode = Mode::Regression;
  cfg.m_beta = 4;
  cfg.batch = 8;
  std::vector<int> batch{0, 5, 11, 17, 23, 29, 31, 37};
  const double v_small = minibatch_objective(state, small, batch, cfg);
  const double v_big = minibatch_objective(state, big, batch, cfg);
  // Only the N/|B| scale factor differs; KL parts cancel in the difference.
  const double klq = core::kl_q(state), klqs = core::kl_qstar(state);
  const double data_small = (v_small + klq + klqs) / (40.0 / 8.0);
  const double data_big = (v_big + klq + klqs) / (80.0 / 8.0);
  CHECK(data_small == doctest::Approx(data_big).epsilon(1e-12));
}

TEST_CASE("gradcheck: analytic gradients match finite differences") {
  verify::GradCheckOptions opts;
  opts.repeats = 3;
  auto report = verify::gradcheck(1234, opts);
  CHECK(report.pass());
  CHECK(report.worst_rel_err < 1e-4);
}

TEST_CASE("gradcheck: injected KL sign fault is caught and named") {
  verify::GradCheckOptions opts;
  opts.repeats = 1;
  opts.inject_kl_fault = true;
  auto report = verify::gradcheck(99, opts);
  CHECK_FALSE(report.pass());
  CHECK(report.worst_loss.substr(0, 4) == "kl_q");
}

TEST_CASE("pack/unpack round-trips the trainable state") {
  Rng rng(31);
  auto state = small_state(rng, 4, 2);
  FitConfig cfg;
  cfg.mode = Mode::Regression;
  auto params = pack_params(state, cfg);
  auto back = unpack_params(params, state, cfg);
  CHECK((back.z - state.z).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.a - state.a).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.l_strict - state.l_strict).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.rbf.log_amp == state.rbf.log_amp);
  CHECK(back.log_sigma2 == state.log_sigma2);
}
