#include "stbs/model.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stbs/error.hpp"

namespace stbs {

using nlohmann::json;

namespace {

constexpr const char* kStateSchema = "stbs_state_v1";

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    fail(ErrorCode::config, std::string(name) + " must be positive and finite");
  }
}

}  // namespace

void Hyperparams::validate() const {
  require_positive(a_theta, "a_theta");
  require_positive(a_theta_prime, "a_theta_prime");
  require_positive(b_theta_prime, "b_theta_prime");
  require_positive(a_beta, "a_beta");
  require_positive(a_beta_prime, "a_beta_prime");
  require_positive(b_beta_prime, "b_beta_prime");
  require_positive(a_rho, "a_rho");
  require_positive(a_rho_prime, "a_rho_prime");
  require_positive(kappa_rho_sq, "kappa_rho_sq");
  require_positive(a_omega, "a_omega");
  require_positive(a_omega_prime, "a_omega_prime");
  require_positive(kappa_omega_sq, "kappa_omega_sq");
  require_positive(a_prec, "a_prec");
  require_positive(b_prec, "b_prec");
}

void FitConfig::validate() const {
  if (num_topics < 1) fail(ErrorCode::config, "num_topics must be >= 1");
  if (batch_size < 1) fail(ErrorCode::config, "batch_size must be >= 1");
  if (mc_samples < 1) fail(ErrorCode::config, "mc_samples must be >= 1");
  if (!(kappa > 0.5 && kappa <= 1.0)) fail(ErrorCode::config, "kappa must lie in (0.5, 1]");
  if (!(tau >= 0.0)) fail(ErrorCode::config, "tau must be >= 0");
  if (!(learning_rate > 0.0)) fail(ErrorCode::config, "learning_rate must be positive");
  if (threads < 1) fail(ErrorCode::config, "threads must be >= 1");
}

std::string to_string(ExpectationMode m) {
  return m == ExpectationMode::exact ? "exact" : "geometric";
}

std::string to_string(PositionMode m) {
  return m == PositionMode::topic_specific ? "topic_specific" : "fixed_across_topics";
}

ExpectationMode parse_expectation_mode(const std::string& s) {
  if (s == "exact") return ExpectationMode::exact;
  if (s == "geometric") return ExpectationMode::geometric;
  fail(ErrorCode::config, "expectation_mode must be 'exact' or 'geometric'");
}

PositionMode parse_position_mode(const std::string& s) {
  if (s == "topic_specific") return PositionMode::topic_specific;
  if (s == "fixed_across_topics" || s == "fixed") return PositionMode::fixed_across_topics;
  fail(ErrorCode::config, "position_mode must be 'topic_specific' or 'fixed_across_topics'");
}

void AdamMoments::reset(Eigen::Index K, Eigen::Index V, Eigen::Index A, Eigen::Index Kp) {
  m_eta_loc = v_eta_loc = m_eta_uvar = v_eta_uvar = Mat::Zero(K, V);
  m_pos_loc = v_pos_loc = m_pos_uvar = v_pos_uvar = Mat::Zero(A, Kp);
}

void VariationalState::validate() const {
  const auto D = static_cast<Eigen::Index>(num_docs);
  const auto V = static_cast<Eigen::Index>(num_terms);
  const auto K = static_cast<Eigen::Index>(num_topics);
  const auto A = static_cast<Eigen::Index>(num_authors);
  const auto L = static_cast<Eigen::Index>(num_covariates);
  const auto Kp = static_cast<Eigen::Index>(position_cols());

  auto check_gamma = [](const GammaArray& g, Eigen::Index r, Eigen::Index c, const char* name) {
    if (g.shp.rows() != r || g.shp.cols() != c || g.rte.rows() != r || g.rte.cols() != c) {
      fail(ErrorCode::schema, std::string("block ") + name + " has the wrong shape");
    }
    if (!((g.shp.array() > 0.0).all() && (g.rte.array() > 0.0).all())) {
      fail(ErrorCode::numeric, std::string("block ") + name + " has non-positive parameters");
    }
  };
  check_gamma(theta, D, K, "theta");
  check_gamma(btheta, A, 1, "btheta");
  check_gamma(beta, K, V, "beta");
  check_gamma(bbeta, V, 1, "bbeta");
  check_gamma(rho, K, 1, "rho");
  check_gamma(brho, K, 1, "brho");
  check_gamma(prec, A, 1, "prec");
  check_gamma(omega, L, 1, "omega");
  check_gamma(bomega, L, 1, "bomega");

  auto check_normal = [](const BoundedNormalArray& n, Eigen::Index r, Eigen::Index c,
                         const char* name) {
    if (n.loc.rows() != r || n.loc.cols() != c || n.uvar.rows() != r || n.uvar.cols() != c) {
      fail(ErrorCode::schema, std::string("block ") + name + " has the wrong shape");
    }
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index j = 0; j < c; ++j) {
        const double v = n.var(i, j);
        if (!(v > 0.0 && v < 1.0)) {
          fail(ErrorCode::numeric, std::string("block ") + name + " variance outside (0, 1)");
        }
      }
    }
  };
  check_normal(eta, K, V, "eta");
  check_normal(positions, A, Kp, "positions");

  if (iota_loc.rows() != Kp || iota_loc.cols() != L || iota_chol.rows() != L ||
      iota_chol.cols() != L || iotadot_loc.size() != L || iotadot_var.size() != L) {
    fail(ErrorCode::schema, "regression blocks have the wrong shape");
  }
  for (Eigen::Index i = 0; i < L; ++i) {
    if (!(iota_chol(i, i) > 0.0)) fail(ErrorCode::numeric, "invalid regression Cholesky factor");
    for (Eigen::Index j = i + 1; j < L; ++j) {
      if (iota_chol(i, j) != 0.0) fail(ErrorCode::numeric, "regression Cholesky not lower-triangular");
    }
    if (!(iotadot_var(i) > 0.0)) fail(ErrorCode::numeric, "non-positive iotadot variance");
  }
}

bool VariationalState::all_finite() const {
  auto fin = [](const auto& m) { return m.allFinite(); };
  return fin(theta.shp) && fin(theta.rte) && fin(btheta.shp) && fin(btheta.rte) &&
         fin(beta.shp) && fin(beta.rte) && fin(bbeta.shp) && fin(bbeta.rte) && fin(rho.shp) &&
         fin(rho.rte) && fin(brho.shp) && fin(brho.rte) && fin(prec.shp) && fin(prec.rte) &&
         fin(omega.shp) && fin(omega.rte) && fin(bomega.shp) && fin(bomega.rte) &&
         fin(eta.loc) && fin(eta.uvar) && fin(positions.loc) && fin(positions.uvar) &&
         fin(iota_loc) && fin(iota_chol) && fin(iotadot_loc) && fin(iotadot_var);
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace {

template <typename Derived>
json matrix_json(const Eigen::MatrixBase<Derived>& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

template <typename M>
M matrix_from_json(const json& j, const char* name) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
    fail(ErrorCode::schema, std::string("array '") + name + "' is malformed");
  }
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    fail(ErrorCode::schema, std::string("array '") + name + "' has the wrong length");
  }
  M m(rows, cols);
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index jj = 0; jj < cols; ++jj) {
      if (!data[n].is_number()) {
        fail(ErrorCode::schema, std::string("array '") + name + "' holds a non-number");
      }
      m(i, jj) = data[n++].get<double>();
    }
  }
  return m;
}

json gamma_json(const GammaArray& g) {
  return json{{"shp", matrix_json(g.shp)}, {"rte", matrix_json(g.rte)}};
}

GammaArray gamma_from_json(const json& j, const char* name) {
  GammaArray g;
  g.shp = matrix_from_json<Mat>(j.at("shp"), name);
  g.rte = matrix_from_json<Mat>(j.at("rte"), name);
  return g;
}

json normal_json(const BoundedNormalArray& n) {
  return json{{"loc", matrix_json(n.loc)}, {"uvar", matrix_json(n.uvar)}};
}

BoundedNormalArray normal_from_json(const json& j, const char* name) {
  BoundedNormalArray n;
  n.loc = matrix_from_json<Mat>(j.at("loc"), name);
  n.uvar = matrix_from_json<Mat>(j.at("uvar"), name);
  return n;
}

json hyper_json(const Hyperparams& h) {
  return json{{"a_theta", h.a_theta},         {"a_theta_prime", h.a_theta_prime},
              {"b_theta_prime", h.b_theta_prime}, {"a_beta", h.a_beta},
              {"a_beta_prime", h.a_beta_prime}, {"b_beta_prime", h.b_beta_prime},
              {"a_rho", h.a_rho},             {"a_rho_prime", h.a_rho_prime},
              {"kappa_rho_sq", h.kappa_rho_sq}, {"a_omega", h.a_omega},
              {"a_omega_prime", h.a_omega_prime}, {"kappa_omega_sq", h.kappa_omega_sq},
              {"a_prec", h.a_prec},           {"b_prec", h.b_prec}};
}

json config_json(const FitConfig& c) {
  return json{{"num_topics", c.num_topics},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"mc_samples", c.mc_samples},
              {"kappa", c.kappa},
              {"tau", c.tau},
              {"learning_rate", c.learning_rate},
              {"seed", c.seed},
              {"expectation_mode", to_string(c.expectation_mode)},
              {"position_mode", to_string(c.position_mode)},
              {"hpf_iters", c.hpf_iters},
              {"threads", c.threads},
              {"checkpoint_every", c.checkpoint_every},
              {"freeze_ideology", c.freeze_ideology}};
}

std::string json_value_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void apply_object(RunConfig& cfg, const json& obj) {
  for (const auto& [key, value] : obj.items()) {
    if (key == "baselines") {
      if (!value.is_object()) fail(ErrorCode::config, "'baselines' must be an object");
      for (const auto& [col, base] : value.items()) {
        if (!base.is_string()) fail(ErrorCode::config, "baseline labels must be strings");
        cfg.baselines[col] = base.get<std::string>();
      }
      continue;
    }
    set_run_config_value(cfg, key, json_value_text(value));
  }
}

json design_json(const DesignMatrix& d) {
  json groups = json::object();
  for (const auto& [name, cols] : d.term_groups) groups[name] = cols;
  json covs = json::array();
  for (const auto& c : d.covariates.columns) {
    covs.push_back(json{{"name", c.name}, {"labels", c.labels}, {"baseline", c.baseline}});
  }
  return json{{"x", matrix_json(d.x)},
              {"column_names", d.column_names},
              {"term_groups", groups},
              {"formula", d.formula},
              {"covariates", json{{"num_authors", d.covariates.num_authors}, {"columns", covs}}}};
}

DesignMatrix design_from_json(const json& j) {
  DesignMatrix d;
  d.x = matrix_from_json<Eigen::MatrixXd>(j.at("x"), "design");
  d.column_names = j.at("column_names").get<std::vector<std::string>>();
  for (const auto& [name, cols] : j.at("term_groups").items()) {
    d.term_groups[name] = cols.get<std::vector<std::size_t>>();
  }
  d.formula = j.at("formula").get<std::string>();
  const auto& c = j.at("covariates");
  d.covariates.num_authors = c.at("num_authors").get<std::size_t>();
  for (const auto& col : c.at("columns")) {
    d.covariates.columns.push_back(CovariateColumn{col.at("name").get<std::string>(),
                                                   col.at("labels").get<std::vector<std::string>>(),
                                                   col.at("baseline").get<std::string>()});
  }
  return d;
}

}  // namespace

std::string model_to_string(const Model& model) {
  const auto& s = model.state;
  json adam{{"m_eta_loc", matrix_json(s.adam.m_eta_loc)},
            {"v_eta_loc", matrix_json(s.adam.v_eta_loc)},
            {"m_eta_uvar", matrix_json(s.adam.m_eta_uvar)},
            {"v_eta_uvar", matrix_json(s.adam.v_eta_uvar)},
            {"m_pos_loc", matrix_json(s.adam.m_pos_loc)},
            {"v_pos_loc", matrix_json(s.adam.v_pos_loc)},
            {"m_pos_uvar", matrix_json(s.adam.m_pos_uvar)},
            {"v_pos_uvar", matrix_json(s.adam.v_pos_uvar)}};
  json state{{"num_docs", s.num_docs},
             {"num_terms", s.num_terms},
             {"num_topics", s.num_topics},
             {"num_authors", s.num_authors},
             {"num_covariates", s.num_covariates},
             {"position_mode", to_string(s.position_mode)},
             {"theta", gamma_json(s.theta)},
             {"btheta", gamma_json(s.btheta)},
             {"beta", gamma_json(s.beta)},
             {"bbeta", gamma_json(s.bbeta)},
             {"rho", gamma_json(s.rho)},
             {"brho", gamma_json(s.brho)},
             {"prec", gamma_json(s.prec)},
             {"omega", gamma_json(s.omega)},
             {"bomega", gamma_json(s.bomega)},
             {"eta", normal_json(s.eta)},
             {"positions", normal_json(s.positions)},
             {"iota_loc", matrix_json(s.iota_loc)},
             {"iota_chol", matrix_json(s.iota_chol)},
             {"iotadot_loc", matrix_json(s.iotadot_loc)},
             {"iotadot_var", matrix_json(s.iotadot_var)},
             {"adam", adam},
             {"step", s.step},
             {"rng_state", s.rng_state}};
  json doc{{"schema", kStateSchema},
           {"hyperparams", hyper_json(model.hyper)},
           {"config", config_json(model.config)},
           {"design", design_json(model.design)},
           {"state", state},
           {"elbo_trace", model.elbo_trace},
           {"labels",
            json{{"docs", model.doc_labels},
                 {"terms", model.term_labels},
                 {"authors", model.author_labels},
                 {"vocab", model.vocab}}}};
  return doc.dump(1) + "\n";
}

Model model_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("model state is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("schema")) {
    fail(ErrorCode::schema, "model state lacks a schema key");
  }
  const auto schema = doc.at("schema").get<std::string>();
  if (schema != kStateSchema) {
    fail(ErrorCode::schema,
         "unsupported model state schema '" + schema + "' (expected " + kStateSchema + ")");
  }
  try {
    Model model;
    RunConfig rc;
    apply_object(rc, doc.at("hyperparams"));
    apply_object(rc, doc.at("config"));
    model.hyper = rc.hyper;
    model.config = rc.fit;
    model.design = design_from_json(doc.at("design"));
    model.elbo_trace = doc.at("elbo_trace").get<std::vector<double>>();
    const auto& labels = doc.at("labels");
    model.doc_labels = labels.at("docs").get<std::vector<std::int64_t>>();
    model.term_labels = labels.at("terms").get<std::vector<std::int64_t>>();
    model.author_labels = labels.at("authors").get<std::vector<std::int64_t>>();
    model.vocab = labels.at("vocab").get<std::vector<std::string>>();

    const auto& js = doc.at("state");
    auto& s = model.state;
    s.num_docs = js.at("num_docs").get<std::size_t>();
    s.num_terms = js.at("num_terms").get<std::size_t>();
    s.num_topics = js.at("num_topics").get<std::size_t>();
    s.num_authors = js.at("num_authors").get<std::size_t>();
    s.num_covariates = js.at("num_covariates").get<std::size_t>();
    s.position_mode = parse_position_mode(js.at("position_mode").get<std::string>());
    s.theta = gamma_from_json(js.at("theta"), "theta");
    s.btheta = gamma_from_json(js.at("btheta"), "btheta");
    s.beta = gamma_from_json(js.at("beta"), "beta");
    s.bbeta = gamma_from_json(js.at("bbeta"), "bbeta");
    s.rho = gamma_from_json(js.at("rho"), "rho");
    s.brho = gamma_from_json(js.at("brho"), "brho");
    s.prec = gamma_from_json(js.at("prec"), "prec");
    s.omega = gamma_from_json(js.at("omega"), "omega");
    s.bomega = gamma_from_json(js.at("bomega"), "bomega");
    s.eta = normal_from_json(js.at("eta"), "eta");
    s.positions = normal_from_json(js.at("positions"), "positions");
    s.iota_loc = matrix_from_json<Mat>(js.at("iota_loc"), "iota_loc");
    s.iota_chol = matrix_from_json<Eigen::MatrixXd>(js.at("iota_chol"), "iota_chol");
    s.iotadot_loc = matrix_from_json<Eigen::MatrixXd>(js.at("iotadot_loc"), "iotadot_loc").col(0);
    s.iotadot_var = matrix_from_json<Eigen::MatrixXd>(js.at("iotadot_var"), "iotadot_var").col(0);
    const auto& adam = js.at("adam");
    s.adam.m_eta_loc = matrix_from_json<Mat>(adam.at("m_eta_loc"), "adam");
    s.adam.v_eta_loc = matrix_from_json<Mat>(adam.at("v_eta_loc"), "adam");
    s.adam.m_eta_uvar = matrix_from_json<Mat>(adam.at("m_eta_uvar"), "adam");
    s.adam.v_eta_uvar = matrix_from_json<Mat>(adam.at("v_eta_uvar"), "adam");
    s.adam.m_pos_loc = matrix_from_json<Mat>(adam.at("m_pos_loc"), "adam");
    s.adam.v_pos_loc = matrix_from_json<Mat>(adam.at("v_pos_loc"), "adam");
    s.adam.m_pos_uvar = matrix_from_json<Mat>(adam.at("m_pos_uvar"), "adam");
    s.adam.v_pos_uvar = matrix_from_json<Mat>(adam.at("v_pos_uvar"), "adam");
    s.step = js.at("step").get<std::uint64_t>();
    s.rng_state = js.at("rng_state").get<std::string>();
    s.validate();
    return model;
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("model state is malformed: ") + e.what());
  }
}

void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << model_to_string(model);
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_string(ss.str());
}

// ---------------------------------------------------------------------------

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail(ErrorCode::config, "config key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    fail(ErrorCode::config,
         "config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorCode::config, "config key '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace

void set_run_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto& h = cfg.hyper;
  auto& f = cfg.fit;
  const std::map<std::string, double*> doubles{
      {"a_theta", &h.a_theta},           {"a_theta_prime", &h.a_theta_prime},
      {"b_theta_prime", &h.b_theta_prime}, {"a_beta", &h.a_beta},
      {"a_beta_prime", &h.a_beta_prime}, {"b_beta_prime", &h.b_beta_prime},
      {"a_rho", &h.a_rho},               {"a_rho_prime", &h.a_rho_prime},
      {"kappa_rho_sq", &h.kappa_rho_sq}, {"a_omega", &h.a_omega},
      {"a_omega_prime", &h.a_omega_prime}, {"kappa_omega_sq", &h.kappa_omega_sq},
      {"a_prec", &h.a_prec},             {"b_prec", &h.b_prec},
      {"kappa", &f.kappa},               {"tau", &f.tau},
      {"learning_rate", &f.learning_rate}};
  const std::map<std::string, std::size_t*> sizes{{"num_topics", &f.num_topics},
                                                  {"epochs", &f.epochs},
                                                  {"batch_size", &f.batch_size},
                                                  {"mc_samples", &f.mc_samples},
                                                  {"hpf_iters", &f.hpf_iters},
                                                  {"threads", &f.threads},
                                                  {"checkpoint_every", &f.checkpoint_every}};
  if (auto it = doubles.find(key); it != doubles.end()) {
    *it->second = to_double(key, value);
  } else if (auto it2 = sizes.find(key); it2 != sizes.end()) {
    *it2->second = static_cast<std::size_t>(to_uint(key, value));
  } else if (key == "seed") {
    f.seed = to_uint(key, value);
  } else if (key == "expectation_mode") {
    f.expectation_mode = parse_expectation_mode(value);
  } else if (key == "position_mode") {
    f.position_mode = parse_position_mode(value);
  } else if (key == "freeze_ideology") {
    f.freeze_ideology = to_bool(key, value);
  } else if (key.rfind("baseline.", 0) == 0) {
    cfg.baselines[key.substr(9)] = value;
  } else {
    fail(ErrorCode::config, "unknown config key '" + key + "'");
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::config, "run config is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_object()) fail(ErrorCode::config, "run config must be a JSON object");
  RunConfig cfg;
  apply_object(cfg, doc);
  return cfg;
}

std::string run_config_to_string(const RunConfig& cfg) {
  json doc = hyper_json(cfg.hyper);
  const json fit = config_json(cfg.fit);
  for (const auto& [k, v] : fit.items()) doc[k] = v;
  doc["baselines"] = cfg.baselines;
  return doc.dump(1) + "\n";
}

}  // namespace stbs
