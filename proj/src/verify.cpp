#include "fmgp/verify.hpp"

#include "fmgp/exact_gp.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace fmgp::verify {

namespace {

using numkit::ParamVector;
using numkit::Tape;
using Builder = std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>;

double eval_forward(const ParamVector& params, const Builder& builder) {
  Tape tape;
  std::vector<Tape::Id> leaves;
  for (const auto& b : params.blocks()) {
    Mat block(b.rows, b.cols);
    for (Eigen::Index i = 0; i < b.size(); ++i) block.data()[i] = params.values()[b.offset + i];
    leaves.push_back(tape.leaf(block));
  }
  return tape.scalar_value(builder(tape, leaves));
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-3, std::abs(a), std::abs(b)});
}

void check_loss(GradCheckReport& report, const std::string& loss_name, ParamVector params,
                const Builder& builder, bool flip_analytic) {
  numkit::GradResult res = numkit::grad(params, builder);
  if (flip_analytic) res.gradient = -res.gradient;

  Vec fd(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double p0 = params.values()[i];
    const double h = 1e-5 * (1.0 + std::abs(p0));
    params.values()[i] = p0 + h;
    const double fp = eval_forward(params, builder);
    params.values()[i] = p0 - h;
    const double fm = eval_forward(params, builder);
    params.values()[i] = p0;
    fd[i] = (fp - fm) / (2.0 * h);
  }

  std::map<std::string, double> per_block;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const auto& b = params.block_of_index(i);
    const double e = rel_err(res.gradient[i], fd[i]);
    auto it = per_block.find(b.name);
    if (it == per_block.end()) per_block.emplace(b.name, e);
    else it->second = std::max(it->second, e);
  }
  for (const auto& [block, err] : per_block) {
    report.rows.push_back({loss_name, block, err});
    if (err > report.worst_rel_err) {
      report.worst_rel_err = err;
      report.worst_loss = loss_name;
      report.worst_block = block;
    }
  }
}

core::VariationalState random_regression_state(Rng& rng, Eigen::Index m, Eigen::Index d) {
  Mat z(m, d);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  kernels::RbfParams rbf;
  rbf.log_amp = 0.3 * rng.normal();
  rbf.log_len = Vec::Zero(d);
  for (Eigen::Index j = 0; j < d; ++j) rbf.log_len[j] = 0.3 * rng.normal();
  auto s = core::VariationalState::init_regression(z, rbf, std::exp(0.4 * rng.normal() - 1.0));
  for (Eigen::Index i = 0; i < s.l_strict.size(); ++i) s.l_strict[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) s.l_log_diag[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) s.a[i] = 0.5 * rng.normal();
  return s;
}

core::VariationalState random_classification_state(Rng& rng, Eigen::Index m, Eigen::Index d, Eigen::Index e,
                                                   Eigen::Index c_count) {
  Mat z(m, d), psi(m, e);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < psi.size(); ++i) psi.data()[i] = 0.7 * rng.normal();
  std::vector<int> labels(static_cast<std::size_t>(m));
  for (auto& l : labels) l = rng.uniform_int(static_cast<int>(c_count));
  auto params = kernels::ClassKernelParams::identity_b(c_count, d, e);
  params.rbf.log_amp = 0.3 * rng.normal();
  for (Eigen::Index j = 0; j < d; ++j) params.rbf.log_len[j] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < params.lb_strict.size(); ++i) params.lb_strict[i] = 0.2 * rng.normal();
  for (Eigen::Index i = 0; i < c_count; ++i) params.lb_log_diag[i] = 0.2 * rng.normal();
  auto s = core::VariationalState::init_classification(z, psi, std::move(labels), params);
  for (Eigen::Index i = 0; i < s.l_strict.size(); ++i) s.l_strict[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) s.l_log_diag[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) s.a[i] = 0.5 * rng.normal();
  return s;
}

io::PredictionBundle random_regression_bundle(Rng& rng, Eigen::Index n, Eigen::Index d) {
  io::PredictionBundle b;
  b.mode = Mode::Regression;
  b.x.resize(n, d);
  for (Eigen::Index i = 0; i < b.x.size(); ++i) b.x.data()[i] = rng.normal();
  b.g.resize(n, 1);
  b.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    b.g(i, 0) = rng.normal();
    b.y[i] = b.g(i, 0) + 0.5 * rng.normal();
  }
  return b;
}

io::PredictionBundle random_classification_bundle(Rng& rng, Eigen::Index n, Eigen::Index d, Eigen::Index e,
                                                  Eigen::Index c_count) {
  io::PredictionBundle b;
  b.mode = Mode::Classification;
  b.x.resize(n, d);
  b.psi.resize(n, e);
  b.g.resize(n, c_count);
  for (Eigen::Index i = 0; i < b.x.size(); ++i) b.x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < b.psi.size(); ++i) b.psi.data()[i] = 0.7 * rng.normal();
  for (Eigen::Index i = 0; i < b.g.size(); ++i) b.g.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < n; ++i) b.labels.push_back(rng.uniform_int(static_cast<int>(c_count)));
  return b;
}

}  // namespace

GradCheckReport gradcheck(std::uint64_t seed, const GradCheckOptions& opts) {
  GradCheckReport report;
  report.tolerance = opts.tolerance;

  for (int rep = 0; rep < opts.repeats; ++rep) {
    Rng rng(seed + 1000003ull * static_cast<std::uint64_t>(rep) + 1ull);
    const std::string tag = "[" + std::to_string(rep) + "]";

    // Regression objective and KL terms.
    {
      const Eigen::Index n = 10, d = 2, m = 4;
      auto bundle = random_regression_bundle(rng, n, d);
      auto state = random_regression_state(rng, m, d);
      training::FitConfig cfg;
      cfg.mode = Mode::Regression;
      cfg.m_beta = static_cast<int>(m);
      cfg.batch = 6;
      std::vector<int> batch{0, 2, 3, 5, 7, 9};
      ParamVector params = training::pack_params(state, cfg);

      auto obj = [&](Tape& t, const std::vector<Tape::Id>& lv) {
        return training::build_objective(t, lv, params, state, bundle, batch, cfg, nullptr).objective;
      };
      auto klq = [&](Tape& t, const std::vector<Tape::Id>& lv) {
        return training::build_objective(t, lv, params, state, bundle, batch, cfg, nullptr).kl_q;
      };
      auto klqs = [&](Tape& t, const std::vector<Tape::Id>& lv) {
        return training::build_objective(t, lv, params, state, bundle, batch, cfg, nullptr).kl_qstar;
      };
      check_loss(report, "regression_objective" + tag, params, obj, false);
      check_loss(report, "kl_q" + tag, params, klq, opts.inject_kl_fault);
      check_loss(report, "kl_qstar" + tag, params, klqs, opts.inject_kl_fault);
    }

    // Classification objective with common random numbers.
    {
      const Eigen::Index n = 8, d = 2, e = 2, c_count = 3, m = 4;
      auto bundle = random_classification_bundle(rng, n, d, e, c_count);
      auto state = random_classification_state(rng, m, d, e, c_count);
      training::FitConfig cfg;
      cfg.mode = Mode::Classification;
      cfg.m_beta = static_cast<int>(m);
      cfg.batch = 5;
      cfg.s_train = 7;
      std::vector<int> batch{0, 1, 3, 4, 6};
      std::vector<Mat> noise(batch.size());
      for (auto& mt : noise) {
        mt.resize(c_count, cfg.s_train);
        for (Eigen::Index i = 0; i < mt.size(); ++i) mt.data()[i] = rng.normal();
      }
      ParamVector params = training::pack_params(state, cfg);
      auto obj = [&](Tape& t, const std::vector<Tape::Id>& lv) {
        return training::build_objective(t, lv, params, state, bundle, batch, cfg, &noise).objective;
      };
      check_loss(report, "classification_objective" + tag, params, obj, false);
    }

    // Exact-GP log marginal likelihood.
    {
      const Eigen::Index n = 9, d = 2;
      Mat x(n, d);
      Vec y(n);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
      for (Eigen::Index i = 0; i < n; ++i) y[i] = rng.normal();
      ParamVector params;
      params.register_block("log_amp", 1, 1);
      params.register_block("log_len", d, 1);
      params.register_block("log_sigma2", 1, 1);
      Vec ll(d);
      for (Eigen::Index j = 0; j < d; ++j) ll[j] = 0.3 * rng.normal();
      params.set_block("log_amp", scalar_mat(0.3 * rng.normal()));
      params.set_block("log_len", ll);
      params.set_block("log_sigma2", scalar_mat(0.4 * rng.normal() - 0.7));

      const Mat eye = Mat::Identity(n, n);
      auto lml = [&](Tape& t, const std::vector<Tape::Id>& lv) {
        const Tape::Id xs = t.leaf(x);
        const Tape::Id kn = t.rbf_cross(xs, xs, lv[0], lv[1]);
        const Tape::Id shifted = t.add(kn, t.smul(t.exp(lv[2]), t.leaf(eye)));
        const Tape::Id chol = t.cholesky(shifted);
        const Tape::Id quad = t.frob_sq(t.tri_solve_lower(chol, t.leaf(Mat(y))));
        Tape::Id out = t.scale(quad, -0.5);
        out = t.add(out, t.scale(t.logdet_chol(chol), -0.5));
        return t.add(out, t.scalar(-0.5 * static_cast<double>(n) * std::log(2.0 * M_PI)));
      };
      check_loss(report, "exact_lml" + tag, params, lml, false);
    }
  }

  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream out;
  out << "gradcheck: " << report.rows.size() << " block checks, tolerance " << format_double(report.tolerance)
      << "\n";
  // Per-loss-family worst error keeps the report compact and deterministic.
  std::map<std::string, std::map<std::string, double>> family;
  for (const auto& r : report.rows) {
    std::string fam = r.loss.substr(0, r.loss.find('['));
    auto& blocks = family[fam];
    auto it = blocks.find(r.block);
    if (it == blocks.end()) blocks.emplace(r.block, r.rel_err);
    else it->second = std::max(it->second, r.rel_err);
  }
  for (const auto& [fam, blocks] : family)
    for (const auto& [block, err] : blocks)
      out << "  " << fam << " / " << block << ": max rel err " << format_double(err) << "\n";
  out << "worst: " << report.worst_loss << " block " << report.worst_block << " rel err "
      << format_double(report.worst_rel_err) << "\n";
  out << (report.pass() ? "PASS" : "FAIL") << "\n";
  return out.str();
}

}  // namespace fmgp::verify
