#include "fmgp/metrics.hpp"
#include "fmgp/predict.hpp"
#include "fmgp/state_io.hpp"
#include "fmgp/verify.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>

namespace {

using namespace fmgp;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitVerification = 4;

/// Option registry backing the `--config` key-value file: keys are long
/// option names, flags given on the command line win, unknown keys error.
class OptionRegistry {
 public:
  explicit OptionRegistry(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "key=value configuration file");
  }

  template <typename T>
  void bind(const std::string& name, T& var, const std::string& desc) {
    CLI::Option* opt = app_->add_option("--" + name, var, desc);
    entries_[name] = {opt, [&var](const std::string& text) { var = parse_value<T>(text); }};
  }

  void bind_flag(const std::string& name, bool& var, const std::string& desc) {
    CLI::Option* opt = app_->add_flag("--" + name, var, desc);
    entries_[name] = {opt, [&var](const std::string& text) { var = parse_value<bool>(text); }};
  }

  void apply_config() {
    if (config_path_.empty()) return;
    std::ifstream f(config_path_);
    if (!f) throw ConfigError("config: cannot open " + config_path_);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw ConfigError("config: malformed line " + std::to_string(line_no));
        continue;
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      auto it = entries_.find(key);
      if (it == entries_.end()) throw ConfigError("config: unknown key '" + key + "'");
      if (it->second.opt->count() == 0) it->second.apply(value);
    }
  }

 private:
  template <typename T>
  static T parse_value(const std::string& text) {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError("config: expected boolean, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_floating_point_v<T>) {
      std::size_t pos = 0;
      const double v = std::stod(text, &pos);
      if (pos != text.size()) throw ConfigError("config: expected number, got '" + text + "'");
      return static_cast<T>(v);
    } else {
      std::size_t pos = 0;
      const long long v = std::stoll(text, &pos);
      if (pos != text.size()) throw ConfigError("config: expected integer, got '" + text + "'");
      return static_cast<T>(v);
    }
  }

  static std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
  }

  struct Entry {
    CLI::Option* opt;
    std::function<void(const std::string&)> apply;
  };
  CLI::App* app_;
  std::string config_path_;
  std::map<std::string, Entry> entries_;
};

struct FitFlags {
  training::FitConfig cfg;
  bool freeze_inducing = false;
  bool freeze_hypers = false;
  bool freeze_noise = false;
  bool no_qstar = false;

  void resolve() {
    cfg.optimize_inducing = !freeze_inducing;
    cfg.optimize_hypers = !freeze_hypers;
    cfg.optimize_noise = !freeze_noise;
    cfg.use_qstar = !no_qstar;
  }
};

void bind_fit_flags(OptionRegistry& reg, FitFlags& f) {
  reg.bind("m-beta", f.cfg.m_beta, "number of inducing points");
  reg.bind("batch", f.cfg.batch, "mini-batch size");
  reg.bind("steps", f.cfg.steps, "optimization steps");
  reg.bind("lr", f.cfg.lr, "Adam learning rate");
  reg.bind("s-train", f.cfg.s_train, "MC samples for the training expectation");
  reg.bind("s-eval", f.cfg.s_eval, "MC samples for evaluation");
  reg.bind("seed", f.cfg.seed, "random seed");
  reg.bind_flag("freeze-inducing", f.freeze_inducing, "keep Z_beta at its initialization");
  reg.bind_flag("freeze-hypers", f.freeze_hypers, "keep kernel hyper-parameters fixed");
  reg.bind_flag("freeze-noise", f.freeze_noise, "keep the likelihood noise fixed");
  reg.bind_flag("no-qstar", f.no_qstar, "drop the auxiliary-measure regularizer");
  reg.bind_flag("rbf-on-embeddings", f.cfg.rbf_on_embeddings, "run the RBF factor on bundle embeddings");
}

io::PredictionBundle load_bundle_any(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") return io::read_bundle_csv(path);
  return io::read_bundle(path);
}

void write_trace(const std::string& path, const training::TraceRecord& trace, std::uint64_t seed) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("trace: cannot open " + path + " for writing");
  f << "# fmgp trace v" << io::kFormatVersion << " seed=" << seed << "\n";
  f << "step objective kl_q kl_qstar jitter\n";
  for (const auto& r : trace.rows)
    f << r.step << " " << format_double(r.objective) << " " << format_double(r.kl_q) << " "
      << format_double(r.kl_qstar) << " " << format_double(r.jitter) << "\n";
}

int cmd_fit(const std::string& bundle_path, const std::string& out_path, const std::string& trace_path,
            FitFlags flags) {
  flags.resolve();
  io::PredictionBundle bundle = load_bundle_any(bundle_path);
  flags.cfg.mode = bundle.mode;
  flags.cfg.batch = std::min<int>(flags.cfg.batch, static_cast<int>(bundle.n()));
  flags.cfg.validate(bundle.n());

  training::FitResult res = training::fit(bundle, flags.cfg);
  io::StateFile sf;
  sf.state = res.state;
  sf.config = flags.cfg;
  sf.fit_seconds = res.seconds;
  io::save_state(sf, out_path);
  if (!trace_path.empty()) write_trace(trace_path, res.trace, flags.cfg.seed);
  std::cout << "fit: wrote " << out_path << " digest " << io::file_digest_hex(out_path) << " ("
            << res.seconds << " s)\n";
  return kExitOk;
}

int cmd_predict(const std::string& state_path, const std::string& bundle_path, const std::string& out_path,
                int s_eval_override, std::uint64_t seed_override, bool have_seed) {
  io::StateFile sf = io::load_state(state_path);
  io::PredictionBundle bundle = load_bundle_any(bundle_path);
  const int s_eval = s_eval_override > 0 ? s_eval_override : sf.config.s_eval;
  const std::uint64_t seed = have_seed ? seed_override : sf.config.seed;
  predict::Predictions pred = predict::predict_bundle(sf.state, bundle, s_eval, seed);

  io::Container c;
  io::JsonObject meta;
  meta.put("kind", "predictions");
  meta.put("mode", mode_name(pred.mode));
  meta.put("s_eval", s_eval);
  meta.put("seed", static_cast<std::int64_t>(seed));
  meta.put("version", io::kFormatVersion);
  if (pred.mode == Mode::Regression) {
    c.add("mean", pred.mean);
    c.add("variance", pred.variance);
    meta.put("sigma2", pred.sigma2);
  } else {
    c.add("mean", pred.logits);
    c.add("probs", pred.probs);
    c.add("entropy", pred.entropy);
  }
  c.set_meta(meta);
  c.write(out_path);
  std::cout << "predict: wrote " << out_path << " digest " << io::file_digest_hex(out_path) << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& state_path, const std::string& bundle_path, const std::string& ood_path,
             const std::string& report_path, int s_eval_override, std::uint64_t seed_override, bool have_seed) {
  io::StateFile sf = io::load_state(state_path);
  io::PredictionBundle bundle = load_bundle_any(bundle_path);
  const int s_eval = s_eval_override > 0 ? s_eval_override : sf.config.s_eval;
  const std::uint64_t seed = have_seed ? seed_override : sf.config.seed;

  const auto t0 = std::chrono::steady_clock::now();
  predict::Predictions pred = predict::predict_bundle(sf.state, bundle, s_eval, seed);
  const double predict_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  io::JsonObject report;
  report.put("mode", mode_name(bundle.mode));
  report.put("n", static_cast<std::int64_t>(bundle.n()));
  report.put("seed", static_cast<std::int64_t>(seed));
  report.put("version", io::kFormatVersion);

  if (bundle.mode == Mode::Regression) {
    if (bundle.y.size() == 0) throw EmptyInput("eval: bundle has no labels");
    const auto ev = metrics::evaluate_regression(bundle.y, pred.mean, pred.total_variance());
    report.put("cqm", ev.cqm);
    report.put("crps", ev.crps);
    report.put("nll", ev.nll);
  } else {
    if (bundle.labels.empty()) throw EmptyInput("eval: bundle has no labels");
    const auto ev = metrics::evaluate_classification(bundle.labels, pred.probs);
    report.put("brier", ev.brier);
    report.put("ece", ev.ece);
    report.put("nll", ev.nll);
    report.put("nll_clamped", ev.nll_clamped);
    if (!ood_path.empty()) {
      io::PredictionBundle ood = load_bundle_any(ood_path);
      predict::Predictions ood_pred = predict::predict_bundle(sf.state, ood, s_eval, seed + 1);
      report.put("ood_auc", metrics::ood_auc(pred.entropy, ood_pred.entropy));
    }
  }

  const double eval_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  io::JsonObject timing;
  timing.put("predict_s", predict_s);
  timing.put("eval_s", eval_s);
  report.put("timing", timing);

  const std::string text = report.str();
  if (!report_path.empty()) {
    std::ofstream f(report_path, std::ios::trunc);
    if (!f) throw ConfigError("eval: cannot open " + report_path + " for writing");
    f << text << "\n";
  }
  std::cout << text << "\n";
  return kExitOk;
}

int cmd_figure1(std::uint64_t seed, const std::string& out_path, int n_per_cluster, FitFlags flags) {
  flags.resolve();
  io::SynthSplit split = io::synth_clusters_split(seed, n_per_cluster, 0);
  const io::PredictionBundle& train = split.train;

  flags.cfg.mode = Mode::Regression;
  flags.cfg.seed = seed;
  flags.cfg.batch = std::min<int>(flags.cfg.batch, static_cast<int>(train.n()));
  flags.cfg.m_beta = std::min<int>(flags.cfg.m_beta, static_cast<int>(train.n()));
  training::FitResult fm = training::fit(train, flags.cfg);
  core::Predictor fmgp_pred = core::Predictor::prepare(fm.state);
  const double fm_sigma2 = fm.state.sigma2();

  kernels::RbfParams init = kernels::RbfParams::unit(1);
  init.log_len[0] = std::log(0.5);
  exactgp::ExactGPState gp = exactgp::fit_exact_hypers(train.x, train.y, init, 0.01);

  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw ConfigError("figure1: cannot open " + out_path + " for writing");
  f << "# fmgp figure1 v" << io::kFormatVersion << " seed=" << seed << "\n";
  f << "x,g_mean,fmgp_mean,fmgp_lower,fmgp_upper,gp_mean,gp_lower,gp_upper\n";
  const int grid = 401;
  for (int k = 0; k < grid; ++k) {
    const double x = -2.6 + 5.2 * static_cast<double>(k) / (grid - 1);
    Vec xv = Vec::Constant(1, x);
    const double g = exactgp::predict_exact(split.g_model, xv).mean;
    const double fm_sd = std::sqrt(fmgp_pred.variance(xv) + fm_sigma2);
    const auto gp_mv = exactgp::predict_exact(gp, xv);
    const double gp_sd = std::sqrt(std::max(gp_mv.variance, 0.0) + gp.sigma2);
    f << format_double(x) << "," << format_double(g) << "," << format_double(g) << ","
      << format_double(g - 2.0 * fm_sd) << "," << format_double(g + 2.0 * fm_sd) << ","
      << format_double(gp_mv.mean) << "," << format_double(gp_mv.mean - 2.0 * gp_sd) << ","
      << format_double(gp_mv.mean + 2.0 * gp_sd) << "\n";
  }
  f.close();
  std::cout << "figure1: wrote " << out_path << " digest " << io::file_digest_hex(out_path) << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, int repeats, bool inject_kl_fault) {
  verify::GradCheckOptions opts;
  opts.repeats = repeats;
  opts.inject_kl_fault = inject_kl_fault;
  const verify::GradCheckReport report = verify::gradcheck(seed, opts);
  std::cout << verify::format_report(report);
  return report.pass() ? kExitOk : kExitVerification;
}

int cmd_synth(std::uint64_t seed, int n_per_cluster, const std::string& out_path, bool csv) {
  io::PredictionBundle bundle = io::synth_clusters(seed, n_per_cluster);
  if (csv) {
    io::write_bundle_csv(bundle, out_path);
  } else {
    io::write_bundle(bundle, out_path);
  }
  std::cout << "synth: wrote " << out_path << " digest " << io::file_digest_hex(out_path) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fixed-mean sparse variational GP: post-hoc uncertainty for point predictors"};
  app.require_subcommand(1);

  // fit
  auto* fit = app.add_subcommand("fit", "fit predictive variances around a prediction bundle");
  OptionRegistry fit_reg(fit);
  std::string fit_bundle, fit_out, fit_trace;
  FitFlags fit_flags;
  fit_reg.bind("bundle", fit_bundle, "input bundle path");
  fit_reg.bind("out", fit_out, "output state file");
  fit_reg.bind("trace", fit_trace, "optional line-delimited trace output");
  bind_fit_flags(fit_reg, fit_flags);

  // predict
  auto* predict = app.add_subcommand("predict", "emit per-row predictive moments for a bundle");
  OptionRegistry pred_reg(predict);
  std::string pred_state, pred_bundle, pred_out;
  int pred_s_eval = 0;
  std::uint64_t pred_seed = 0;
  pred_reg.bind("state", pred_state, "fitted state file");
  pred_reg.bind("bundle", pred_bundle, "input bundle path");
  pred_reg.bind("out", pred_out, "output predictions file");
  pred_reg.bind("s-eval", pred_s_eval, "MC samples (default: from state)");
  pred_reg.bind("seed", pred_seed, "MC seed (default: from state)");

  // eval
  auto* eval = app.add_subcommand("eval", "score a fitted state on a labeled bundle");
  OptionRegistry eval_reg(eval);
  std::string eval_state, eval_bundle, eval_ood, eval_report;
  int eval_s_eval = 0;
  std::uint64_t eval_seed = 0;
  eval_reg.bind("state", eval_state, "fitted state file");
  eval_reg.bind("bundle", eval_bundle, "labeled bundle path");
  eval_reg.bind("ood", eval_ood, "optional out-of-distribution bundle");
  eval_reg.bind("report", eval_report, "metrics report output path");
  eval_reg.bind("s-eval", eval_s_eval, "MC samples (default: from state)");
  eval_reg.bind("seed", eval_seed, "MC seed (default: from state)");

  // figure1
  auto* figure1 = app.add_subcommand("figure1", "emit plot data for the synthetic-cluster demo");
  OptionRegistry fig_reg(figure1);
  std::string fig_out = "figure1.csv";
  int fig_nper = 40;
  FitFlags fig_flags;
  fig_flags.cfg.m_beta = 25;
  fig_reg.bind("out", fig_out, "output CSV path");
  fig_reg.bind("n-per-cluster", fig_nper, "training points per cluster");
  bind_fit_flags(fig_reg, fig_flags);

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of every analytic gradient");
  OptionRegistry grad_reg(gradcheck);
  std::uint64_t grad_seed = 0;
  int grad_repeats = 20;
  bool grad_fault = false;
  grad_reg.bind("seed", grad_seed, "random seed");
  grad_reg.bind("repeats", grad_repeats, "randomized instances per loss");
  gradcheck->add_flag("--inject-kl-fault", grad_fault, "test fixture: flip the KL adjoint sign")
      ->group("");  // hidden

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic cluster bundle");
  OptionRegistry synth_reg(synth);
  std::string synth_out = "synth.fmgpb";
  std::uint64_t synth_seed = 0;
  int synth_nper = 40;
  bool synth_csv = false;
  synth_reg.bind("out", synth_out, "output bundle path");
  synth_reg.bind("seed", synth_seed, "random seed");
  synth_reg.bind("n-per-cluster", synth_nper, "points per cluster");
  synth_reg.bind_flag("csv", synth_csv, "write the CSV form instead of the binary container");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (fit->parsed()) {
      fit_reg.apply_config();
      if (fit_bundle.empty() || fit_out.empty()) throw ConfigError("fit: --bundle and --out are required");
      return cmd_fit(fit_bundle, fit_out, fit_trace, fit_flags);
    }
    if (predict->parsed()) {
      pred_reg.apply_config();
      if (pred_state.empty() || pred_bundle.empty() || pred_out.empty())
        throw ConfigError("predict: --state, --bundle and --out are required");
      return cmd_predict(pred_state, pred_bundle, pred_out, pred_s_eval, pred_seed,
                         predict->count("--seed") > 0);
    }
    if (eval->parsed()) {
      eval_reg.apply_config();
      if (eval_state.empty() || eval_bundle.empty()) throw ConfigError("eval: --state and --bundle are required");
      return cmd_eval(eval_state, eval_bundle, eval_ood, eval_report, eval_s_eval, eval_seed,
                      eval->count("--seed") > 0);
    }
    if (figure1->parsed()) {
      fig_reg.apply_config();
      return cmd_figure1(fig_flags.cfg.seed, fig_out, fig_nper, fig_flags);
    }
    if (gradcheck->parsed()) {
      grad_reg.apply_config();
      return cmd_gradcheck(grad_seed, grad_repeats, grad_fault);
    }
    if (synth->parsed()) {
      synth_reg.apply_config();
      return cmd_synth(synth_seed, synth_nper, synth_out, synth_csv);
    }
  } catch (const NotPositiveDefinite& e) {
    std::cerr << "numerical failure (cholesky): " << e.what() << "\n";
    return kExitNumerical;
  } catch (const NonFiniteGradient& e) {
    std::cerr << "numerical failure (grad): " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
