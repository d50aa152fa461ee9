#include "fmgp/state_io.hpp"

#include <json.hpp>

namespace fmgp::io {

void save_state(const StateFile& s, const std::string& path) {
  const auto& st = s.state;
  Container c;
  c.add("Z", st.z);
  c.add("L_strict", st.l_strict);
  c.add("L_log_diag", st.l_log_diag);
  c.add("a", st.a);
  c.add("log_len", st.rbf.log_len);
  if (st.mode == Mode::Classification) {
    c.add("psi", st.psi);
    c.add_i64("labels", st.labels);
    c.add("LB_strict", st.lb_strict);
    c.add("LB_log_diag", st.lb_log_diag);
  }

  JsonObject meta;
  meta.put("kind", "state");
  meta.put("mode", mode_name(st.mode));
  meta.put("version", kFormatVersion);
  meta.put("log_amp", st.rbf.log_amp);
  meta.put("log_sigma2", st.log_sigma2);
  meta.put("n_classes", static_cast<std::int64_t>(st.n_classes));
  meta.put("rbf_on_embeddings", st.rbf_on_embeddings);
  meta.put("seed", static_cast<std::int64_t>(s.config.seed));

  JsonObject fit;
  fit.put("batch", s.config.batch);
  fit.put("lr", s.config.lr);
  fit.put("m_beta", s.config.m_beta);
  fit.put("optimize_hypers", s.config.optimize_hypers);
  fit.put("optimize_inducing", s.config.optimize_inducing);
  fit.put("optimize_noise", s.config.optimize_noise);
  fit.put("rbf_on_embeddings", s.config.rbf_on_embeddings);
  fit.put("s_eval", s.config.s_eval);
  fit.put("s_train", s.config.s_train);
  fit.put("seed", static_cast<std::int64_t>(s.config.seed));
  fit.put("steps", s.config.steps);
  fit.put("use_qstar", s.config.use_qstar);
  meta.put("fit", fit);

  c.set_meta(meta);
  c.write(path);
}

StateFile load_state(const std::string& path) {
  Container c = Container::read(path);
  if (c.meta_string("kind") != "state") throw FormatError("load_state: not a state file");
  StateFile out;
  auto& st = out.state;
  st.mode = c.meta_string("mode") == "regression" ? Mode::Regression : Mode::Classification;
  st.z = c.f64("Z");
  st.l_strict = c.f64_vec("L_strict");
  st.l_log_diag = c.f64_vec("L_log_diag");
  st.a = c.f64_vec("a");
  st.rbf.log_len = c.f64_vec("log_len");
  st.rbf.log_amp = c.meta_double("log_amp");
  st.log_sigma2 = c.meta_double("log_sigma2");
  st.n_classes = c.meta_int("n_classes");
  {
    nlohmann::json meta = nlohmann::json::parse(c.meta_json());
    st.rbf_on_embeddings = meta.at("rbf_on_embeddings").get<bool>();
  }
  if (st.mode == Mode::Classification) {
    st.psi = c.f64("psi");
    st.labels = c.i64("labels");
    st.lb_strict = c.f64_vec("LB_strict");
    st.lb_log_diag = c.f64_vec("LB_log_diag");
  }

  // Fit config round-trips through the nested meta object.
  nlohmann::json meta = nlohmann::json::parse(c.meta_json());
  const auto& fit = meta.at("fit");
  out.config.batch = fit.at("batch").get<int>();
  out.config.lr = fit.at("lr").get<double>();
  out.config.m_beta = fit.at("m_beta").get<int>();
  out.config.optimize_hypers = fit.at("optimize_hypers").get<bool>();
  out.config.optimize_inducing = fit.at("optimize_inducing").get<bool>();
  out.config.optimize_noise = fit.at("optimize_noise").get<bool>();
  out.config.rbf_on_embeddings = fit.at("rbf_on_embeddings").get<bool>();
  out.config.s_eval = fit.at("s_eval").get<int>();
  out.config.s_train = fit.at("s_train").get<int>();
  out.config.seed = fit.at("seed").get<std::uint64_t>();
  out.config.steps = fit.at("steps").get<int>();
  out.config.use_qstar = fit.at("use_qstar").get<bool>();
  out.config.mode = st.mode;
  return out;
}

}  // namespace fmgp::io
