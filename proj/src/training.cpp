#include "fmgp/training.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

namespace fmgp::training {

void FitConfig::validate(Eigen::Index n) const {
  if (m_beta < 1) throw ConfigError("fit config: M_beta >= 1 is required");
  if (batch < 1) throw ConfigError("fit config: batch size must be positive");
  if (static_cast<Eigen::Index>(batch) > n && n > 0)
    throw ConfigError("fit config: batch size exceeds N");
  if (steps < 0) throw ConfigError("fit config: step count must be nonnegative");
  if (s_train < 1 || s_eval < 1) throw ConfigError("fit config: MC sample counts must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("fit config: learning rate must be positive");
}

double gaussian_log_expected_lik(double y, double mean, double variance, double sigma2) {
  if (!(variance >= 0.0)) throw DomainError("gaussian_log_expected_lik: variance must be nonnegative");
  if (!(sigma2 > 0.0)) throw DomainError("gaussian_log_expected_lik: sigma2 must be positive");
  const double s = sigma2 + variance;
  const double r = y - mean;
  return -0.5 * std::log(2.0 * M_PI * s) - r * r / (2.0 * s);
}

Vec mc_softmax_probs(const Vec& mean_logits, const Mat& cov, int s, Rng& rng) {
  const Eigen::Index c = mean_logits.size();
  if (cov.rows() != c || cov.cols() != c) throw DimensionMismatch("mc_softmax_probs: covariance shape mismatch");
  if (s < 1) throw DomainError("mc_softmax_probs: sample count must be >= 1");
  const numkit::CholFactor f = numkit::cholesky(cov);
  Vec acc = Vec::Zero(c);
  Vec xi(c);
  for (int k = 0; k < s; ++k) {
    for (Eigen::Index i = 0; i < c; ++i) xi[i] = rng.normal();
    Vec z = mean_logits + f.L * xi;
    const double mx = z.maxCoeff();
    Vec e = (z.array() - mx).exp();
    acc += e / e.sum();
  }
  return acc / static_cast<double>(s);
}

double categorical_log_expected_lik(int y, const Vec& mean_logits, const Mat& cov, int s, Rng& rng) {
  if (y < 0 || y >= mean_logits.size()) throw ClassOutOfRange("categorical_log_expected_lik: label out of range");
  const Vec probs = mc_softmax_probs(mean_logits, cov, s, rng);
  return std::log(std::max(probs[y], 1e-300));
}

namespace {

const Mat& effective_x(const io::PredictionBundle& bundle, const FitConfig& cfg) {
  if (cfg.rbf_on_embeddings) {
    if (!bundle.has_psi()) throw ConfigError("fit config: embeddings requested but bundle has none");
    return bundle.psi;
  }
  return bundle.x;
}

struct BlockSource {
  numkit::Tape* tape;
  const numkit::ParamVector* layout;
  const std::vector<numkit::Tape::Id>* leaves;
  const core::VariationalState* proto;

  numkit::Tape::Id get(const std::string& name, const Mat& frozen) const {
    if (layout->has_block(name)) {
      Eigen::Index k = 0;
      for (const auto& b : layout->blocks()) {
        if (b.name == name) return (*leaves)[static_cast<std::size_t>(k)];
        ++k;
      }
    }
    return tape->leaf(frozen);
  }
};

Mat selector_matrix(const std::vector<int>& labels, Eigen::Index n_classes) {
  Mat s = Mat::Zero(static_cast<Eigen::Index>(labels.size()), n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) s(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return s;
}

}  // namespace

numkit::ParamVector pack_params(const core::VariationalState& state, const FitConfig& cfg) {
  numkit::ParamVector p;
  const Eigen::Index m = state.m();
  if (cfg.use_qstar) {
    p.register_block("a", m, 1);
    p.set_block("a", state.a);
  }
  p.register_block("L_strict", m * (m - 1) / 2, 1);
  p.set_block("L_strict", state.l_strict);
  p.register_block("L_log_diag", m, 1);
  p.set_block("L_log_diag", state.l_log_diag);
  if (cfg.optimize_inducing) {
    p.register_block("Z", state.z.rows(), state.z.cols());
    p.set_block("Z", state.z);
    if (state.mode == Mode::Classification) {
      p.register_block("Psi", state.psi.rows(), state.psi.cols());
      p.set_block("Psi", state.psi);
    }
  }
  if (cfg.optimize_hypers) {
    p.register_block("log_amp", 1, 1);
    p.set_block("log_amp", scalar_mat(state.rbf.log_amp));
    p.register_block("log_len", state.rbf.log_len.size(), 1);
    p.set_block("log_len", state.rbf.log_len);
    if (state.mode == Mode::Classification) {
      p.register_block("LB_strict", state.lb_strict.size(), 1);
      p.set_block("LB_strict", state.lb_strict);
      p.register_block("LB_log_diag", state.lb_log_diag.size(), 1);
      p.set_block("LB_log_diag", state.lb_log_diag);
    }
  }
  if (state.mode == Mode::Regression && cfg.optimize_noise) {
    p.register_block("log_sigma2", 1, 1);
    p.set_block("log_sigma2", scalar_mat(state.log_sigma2));
  }
  return p;
}

core::VariationalState unpack_params(const numkit::ParamVector& params, core::VariationalState proto,
                                     const FitConfig& cfg) {
  if (cfg.use_qstar) proto.a = params.block_vec("a");
  proto.l_strict = params.block_vec("L_strict");
  proto.l_log_diag = params.block_vec("L_log_diag");
  if (cfg.optimize_inducing) {
    proto.z = params.block("Z");
    if (proto.mode == Mode::Classification) proto.psi = params.block("Psi");
  }
  if (cfg.optimize_hypers) {
    proto.rbf.log_amp = params.block("log_amp")(0, 0);
    proto.rbf.log_len = params.block_vec("log_len");
    if (proto.mode == Mode::Classification) {
      proto.lb_strict = params.block_vec("LB_strict");
      proto.lb_log_diag = params.block_vec("LB_log_diag");
    }
  }
  if (proto.mode == Mode::Regression && cfg.optimize_noise)
    proto.log_sigma2 = params.block("log_sigma2")(0, 0);
  return proto;
}

ObjectiveRefs build_objective(numkit::Tape& tape, const std::vector<numkit::Tape::Id>& leaves,
                              const numkit::ParamVector& layout, const core::VariationalState& proto,
                              const io::PredictionBundle& bundle, const std::vector<int>& batch,
                              const FitConfig& cfg, const std::vector<Mat>* noise) {
  using T = numkit::Tape;
  if (batch.empty()) throw EmptyInput("build_objective: empty batch");
  const Eigen::Index m = proto.m();
  const auto b_count = static_cast<Eigen::Index>(batch.size());
  const double n_over_b = static_cast<double>(bundle.n()) / static_cast<double>(b_count);

  BlockSource src{&tape, &layout, &leaves, &proto};
  const T::Id z_node = src.get("Z", proto.z);
  const T::Id log_amp = src.get("log_amp", scalar_mat(proto.rbf.log_amp));
  const T::Id log_len = src.get("log_len", Mat(proto.rbf.log_len));
  const T::Id l_strict = src.get("L_strict", Mat(proto.l_strict));
  const T::Id l_log_diag = src.get("L_log_diag", Mat(proto.l_log_diag));
  const T::Id l_node = tape.build_lower(l_strict, l_log_diag, m);

  // Inducing Gram matrix.
  T::Id k_beta = tape.rbf_cross(z_node, z_node, log_amp, log_len);
  T::Id psi_node = -1;
  T::Id b_node = -1;
  if (proto.mode == Mode::Classification) {
    psi_node = src.get("Psi", proto.psi);
    const T::Id lb = tape.build_lower(src.get("LB_strict", Mat(proto.lb_strict)),
                                      src.get("LB_log_diag", Mat(proto.lb_log_diag)), proto.n_classes);
    b_node = tape.matmul(lb, tape.transpose(lb));
    const Mat sel = selector_matrix(proto.labels, proto.n_classes);
    const T::Id s_const = tape.leaf(sel);
    const T::Id st_const = tape.leaf(Mat(sel.transpose()));
    const T::Id b_zz = tape.matmul(s_const, tape.matmul(b_node, st_const));
    const T::Id lin = tape.add_const(tape.matmul(psi_node, tape.transpose(psi_node)), Mat::Identity(m, m));
    k_beta = tape.emul(tape.emul(k_beta, b_zz), lin);
  }

  // KL terms through W = L^T K_beta L.
  const T::Id w = tape.matmul(tape.transpose(l_node), tape.matmul(k_beta, l_node));
  const T::Id iw = tape.add_const(w, Mat::Identity(m, m));
  const T::Id cw = tape.cholesky(iw);
  const T::Id ld = tape.logdet_chol(cw);
  const T::Id tri_inv = tape.tri_solve_lower(cw, tape.leaf(Mat(Mat::Identity(m, m))));
  const T::Id tr_inv = tape.frob_sq(tri_inv);
  T::Id klq = tape.scale(tape.add(tape.add(tr_inv, tape.scalar(-static_cast<double>(m))), ld), 0.5);
  T::Id a_node = -1;
  T::Id klqs = klq;
  if (cfg.use_qstar) {
    a_node = src.get("a", Mat(proto.a));
    const T::Id qf = tape.dot(a_node, tape.matmul(k_beta, a_node));
    klqs = tape.add(klq, tape.scale(qf, 0.5));
  }

  const T::Id amp = tape.exp(log_amp);
  T::Id data_sum = -1;

  if (proto.mode == Mode::Regression) {
    Mat xb(b_count, bundle.x.cols());
    Vec yb(b_count), gb(b_count);
    for (Eigen::Index i = 0; i < b_count; ++i) {
      const int idx = batch[static_cast<std::size_t>(i)];
      xb.row(i) = cfg.rbf_on_embeddings ? bundle.psi.row(idx) : bundle.x.row(idx);
      yb[i] = bundle.y[idx];
      gb[i] = bundle.g(idx, 0);
    }
    const T::Id kx = tape.rbf_cross(tape.leaf(xb), z_node, log_amp, log_len);
    const T::Id u = tape.matmul(kx, l_node);
    const T::Id sv = tape.tri_solve_lower(cw, tape.transpose(u));
    const T::Id sq = tape.colwise_sqnorm(sv);
    const T::Id v = tape.vs_add(tape.neg(sq), amp);
    const T::Id s2 = tape.exp(src.get("log_sigma2", scalar_mat(proto.log_sigma2)));
    const T::Id s_tot = tape.vs_add(v, s2);
    const T::Id log_s = tape.sum(tape.log(s_tot));
    const double const_term = static_cast<double>(b_count) * std::log(2.0 * M_PI);

    Vec r2 = (yb - gb).array().square();
    T::Id term_q = tape.add(tape.scalar(const_term), tape.add(log_s, tape.sum(tape.ediv(tape.leaf(Mat(r2)), s_tot))));
    term_q = tape.scale(term_q, -0.5);
    data_sum = term_q;
    if (cfg.use_qstar) {
      const T::Id m_star = tape.matmul(kx, a_node);
      const T::Id r_star = tape.sub(tape.leaf(Mat(yb)), m_star);
      T::Id term_s = tape.add(tape.scalar(const_term),
                              tape.add(log_s, tape.sum(tape.ediv(tape.emul(r_star, r_star), s_tot))));
      term_s = tape.scale(term_s, -0.5);
      data_sum = tape.add(term_q, term_s);
    }
  } else {
    if (!bundle.has_psi()) throw ShapeError("build_objective: classification bundle lacks embeddings");
    if (noise == nullptr || static_cast<Eigen::Index>(noise->size()) != b_count)
      throw ConfigError("build_objective: classification requires one noise draw per batch element");
    const Eigen::Index c_count = proto.n_classes;
    const Mat sel = selector_matrix(proto.labels, c_count);
    const T::Id st_const = tape.leaf(Mat(sel.transpose()));
    const T::Id bs_t = tape.matmul(b_node, st_const);

    Mat xb(b_count, cfg.rbf_on_embeddings ? bundle.psi.cols() : bundle.x.cols());
    Mat psib(b_count, bundle.psi.cols());
    for (Eigen::Index i = 0; i < b_count; ++i) {
      const int idx = batch[static_cast<std::size_t>(i)];
      xb.row(i) = cfg.rbf_on_embeddings ? bundle.psi.row(idx) : bundle.x.row(idx);
      psib.row(i) = bundle.psi.row(idx);
    }
    const T::Id r_cross = tape.rbf_cross(tape.leaf(xb), z_node, log_amp, log_len);
    const T::Id lin_x = tape.matmul(tape.leaf(psib), tape.transpose(psi_node));
    const T::Id p0 = tape.emul(r_cross, lin_x);

    for (Eigen::Index i = 0; i < b_count; ++i) {
      const int idx = batch[static_cast<std::size_t>(i)];
      const int label = bundle.labels[static_cast<std::size_t>(idx)];
      const Mat& xi = (*noise)[static_cast<std::size_t>(i)];
      if (xi.rows() != c_count) throw DimensionMismatch("build_objective: noise shape mismatch");

      const T::Id kx = tape.emul(bs_t, tape.replicate_rows(tape.row(p0, i), c_count));
      const T::Id u = tape.matmul(kx, l_node);
      const T::Id sv = tape.tri_solve_lower(cw, tape.transpose(u));
      const T::Id corr = tape.matmul(tape.transpose(sv), sv);
      const T::Id s0 = tape.scale(amp, psib.row(i).squaredNorm() + 1.0);
      const T::Id sigma = tape.sub(tape.smul(s0, b_node), corr);
      const T::Id l_sig = tape.cholesky(sigma);
      const T::Id zs = tape.matmul(l_sig, tape.leaf(xi));
      Mat g_rep = bundle.g.row(idx).transpose().replicate(1, xi.cols());
      const T::Id logits_q = tape.add_const(zs, g_rep);
      T::Id ll = tape.log_mean_softmax(logits_q, label);
      if (cfg.use_qstar) {
        const T::Id m_star = tape.matmul(kx, a_node);
        const T::Id logits_s = tape.add(zs, tape.replicate_cols(m_star, xi.cols()));
        ll = tape.add(ll, tape.log_mean_softmax(logits_s, label));
      }
      data_sum = (data_sum < 0) ? ll : tape.add(data_sum, ll);
    }
  }

  T::Id obj = tape.sub(tape.scale(data_sum, n_over_b), klq);
  if (cfg.use_qstar) obj = tape.sub(obj, klqs);

  ObjectiveRefs refs;
  refs.objective = obj;
  refs.kl_q = klq;
  refs.kl_qstar = klqs;
  return refs;
}

double minibatch_objective(const core::VariationalState& state, const io::PredictionBundle& bundle,
                           const std::vector<int>& batch, const FitConfig& cfg,
                           const std::vector<Mat>* noise) {
  // Forward evaluation: an empty layout makes every block a constant leaf.
  numkit::Tape tape;
  numkit::ParamVector layout;
  std::vector<numkit::Tape::Id> leaves;
  auto refs = build_objective(tape, leaves, layout, state, bundle, batch, cfg, noise);
  return tape.scalar_value(refs.objective);
}

core::VariationalState init_state(const io::PredictionBundle& bundle, const FitConfig& cfg) {
  bundle.validate();
  cfg.validate(bundle.n());
  if (bundle.mode != cfg.mode) throw ModeMismatch("fit: bundle mode disagrees with config");
  const Mat& x_eff = effective_x(bundle, cfg);
  const Eigen::Index n = bundle.n();
  const Eigen::Index m = std::min<Eigen::Index>(cfg.m_beta, n);

  auto column_scale = [](const Mat& x) {
    Vec s(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double mean = x.col(j).mean();
      const double var = (x.col(j).array() - mean).square().mean();
      s[j] = std::max(var, 1e-8);
    }
    return s;
  };

  if (cfg.mode == Mode::Regression) {
    Mat z0;
    if (cfg.init_z) {
      z0 = *cfg.init_z;
    } else {
      z0 = numkit::kmeans(x_eff, static_cast<int>(m), cfg.seed);
    }
    kernels::RbfParams rbf;
    Vec resid = bundle.y - bundle.g.col(0);
    const double resid_mean = resid.mean();
    const double resid_var = (resid.array() - resid_mean).square().mean();
    const double y_mean = bundle.y.mean();
    const double y_var = (bundle.y.array() - y_mean).square().mean();
    rbf.log_amp = cfg.init_log_amp.value_or(std::log(std::max(y_var, 1e-4)));
    if (cfg.init_log_len) {
      rbf.log_len = *cfg.init_log_len;
    } else {
      rbf.log_len = column_scale(x_eff).array().log();
    }
    const double sigma2 = cfg.init_log_sigma2 ? std::exp(*cfg.init_log_sigma2)
                                              : std::max(resid_var, 1e-6);
    auto state = core::VariationalState::init_regression(z0, rbf, sigma2);
    state.rbf_on_embeddings = cfg.rbf_on_embeddings;
    return state;
  }

  if (!bundle.has_psi()) throw ShapeError("fit: classification bundle lacks embeddings");
  const Eigen::Index c_count = bundle.n_classes();
  Mat concat(n, x_eff.cols() + bundle.psi.cols());
  concat << x_eff, bundle.psi;
  Mat centers = numkit::kmeans(concat, static_cast<int>(m), cfg.seed);
  Mat z0 = centers.leftCols(x_eff.cols());
  Mat psi0 = centers.rightCols(bundle.psi.cols());
  std::vector<int> labels(static_cast<std::size_t>(m));
  Rng rng(cfg.seed ^ 0xabcdef1234567ull);
  for (auto& l : labels) l = rng.uniform_int(static_cast<int>(c_count));

  kernels::ClassKernelParams params = kernels::ClassKernelParams::identity_b(c_count, x_eff.cols(), bundle.psi.cols());
  params.rbf.log_amp = cfg.init_log_amp.value_or(0.0);
  if (cfg.init_log_len) {
    params.rbf.log_len = *cfg.init_log_len;
  } else {
    params.rbf.log_len = column_scale(x_eff).array().log();
  }
  auto state = core::VariationalState::init_classification(z0, psi0, std::move(labels), params);
  state.rbf_on_embeddings = cfg.rbf_on_embeddings;
  return state;
}

FitResult fit(const io::PredictionBundle& bundle, const FitConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  core::VariationalState state = init_state(bundle, cfg);
  numkit::ParamVector params = pack_params(state, cfg);

  const Eigen::Index n = bundle.n();
  const int batch_size = static_cast<int>(std::min<Eigen::Index>(cfg.batch, n));
  Rng rng(cfg.seed + 0x51ed2701u);

  std::vector<int> all_indices(static_cast<std::size_t>(n));
  std::iota(all_indices.begin(), all_indices.end(), 0);

  numkit::AdamState adam(params.size());
  numkit::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.ascent = true;

  FitResult out;
  out.trace.rows.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<int> batch;
    if (batch_size == static_cast<int>(n)) {
      batch = all_indices;
    } else {
      // Partial Fisher-Yates draw without replacement.
      std::vector<int> pool = all_indices;
      batch.resize(static_cast<std::size_t>(batch_size));
      for (int k = 0; k < batch_size; ++k) {
        const int j = k + rng.uniform_int(static_cast<int>(n) - k);
        std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
        batch[static_cast<std::size_t>(k)] = pool[static_cast<std::size_t>(k)];
      }
    }

    std::vector<Mat> noise;
    const std::vector<Mat>* noise_ptr = nullptr;
    if (cfg.mode == Mode::Classification) {
      noise.resize(batch.size());
      for (auto& m : noise) {
        m.resize(bundle.n_classes(), cfg.s_train);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
      }
      noise_ptr = &noise;
    }

    numkit::Tape tape;
    std::vector<numkit::Tape::Id> leaves;
    leaves.reserve(params.blocks().size());
    for (const auto& b : params.blocks()) {
      Mat block(b.rows, b.cols);
      for (Eigen::Index i = 0; i < b.size(); ++i) block.data()[i] = params.values()[b.offset + i];
      leaves.push_back(tape.leaf(block));
    }

    ObjectiveRefs refs;
    Vec gradient;
    try {
      refs = build_objective(tape, leaves, params, state, bundle, batch, cfg, noise_ptr);
      std::vector<Mat> adjoints = tape.gradient(refs.objective, leaves);
      gradient = Vec::Zero(params.size());
      for (std::size_t k = 0; k < adjoints.size(); ++k) {
        const auto& b = params.blocks()[k];
        for (Eigen::Index i = 0; i < b.size(); ++i) gradient[b.offset + i] = adjoints[k].data()[i];
      }
      if (!all_finite(gradient)) throw NonFiniteGradient("fit: non-finite gradient");
    } catch (const NonFiniteGradient&) {
      throw NonFiniteGradient("fit: non-finite gradient at step " + std::to_string(step));
    }

    numkit::adam_step(adam, params.values(), gradient, acfg);

    TraceRow row;
    row.step = step;
    row.objective = tape.scalar_value(refs.objective);
    row.kl_q = tape.scalar_value(refs.kl_q);
    row.kl_qstar = tape.scalar_value(refs.kl_qstar);
    row.jitter = tape.max_jitter_applied();
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.trace.rows.push_back(row);
  }

  out.state = unpack_params(params, state, cfg);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace fmgp::training
