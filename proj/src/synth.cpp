#include "stbs/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "stbs/error.hpp"

namespace stbs {

using nlohmann::json;

namespace {

constexpr double kMaxIntensity = 1e9;
constexpr const char* kTruthSchema = "stbs_truth_v1";

/// Records which variables have been drawn so a child can never be sampled
/// before its parents.
class DrawOrder {
 public:
  void mark(const std::string& name, std::initializer_list<const char*> parents) {
    for (const char* p : parents) {
      if (done_.count(p) == 0) {
        fail(ErrorCode::internal, "sampling order violated: '" + name + "' before '" + p + "'");
      }
    }
    done_.insert(name);
  }

 private:
  std::set<std::string> done_;
};

template <typename M>
void check_shape(const M& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    fail(ErrorCode::invalid_argument, std::string("override '") + name + "' has the wrong shape");
  }
}

}  // namespace

SynthOverrides moderate_overrides(std::size_t A, std::size_t V, std::size_t K, std::size_t L,
                                  const Hyperparams& h, double residual_precision) {
  SynthOverrides o;
  o.btheta = Vec::Constant(static_cast<Eigen::Index>(A), h.a_theta);
  o.bbeta = Vec::Constant(static_cast<Eigen::Index>(V), h.a_beta);
  o.rho = Vec::Constant(static_cast<Eigen::Index>(K), 4.0);
  o.omega = Vec::Ones(static_cast<Eigen::Index>(L));
  o.prec = Vec::Constant(static_cast<Eigen::Index>(A), residual_precision);
  return o;
}

Hyperparams moderate_hyperparams() {
  Hyperparams h;
  h.a_beta = 1.0;
  return h;
}

double truth_intensity(const GroundTruth& t, std::size_t d, std::size_t v) {
  const auto a = t.doc_author[d];
  double lam = 0.0;
  for (Eigen::Index k = 0; k < t.theta.cols(); ++k) {
    lam += t.theta(d, k) * t.beta(k, v) * std::exp(t.eta(k, v) * t.positions(a, k));
  }
  return lam;
}

SynthResult generate(const Hyperparams& h, std::size_t D, std::size_t V, std::size_t K,
                     std::size_t A, const DesignMatrix& design, std::uint64_t seed,
                     const SynthOverrides& o) {
  h.validate();
  if (D < 1 || V < 1 || K < 1 || A < 1) {
    fail(ErrorCode::invalid_argument, "simulation sizes must be positive");
  }
  if (design.x.rows() != static_cast<Eigen::Index>(A) || design.x.cols() < 1) {
    fail(ErrorCode::invalid_argument, "design matrix must have one row per author");
  }
  const auto Di = static_cast<Eigen::Index>(D);
  const auto Vi = static_cast<Eigen::Index>(V);
  const auto Ki = static_cast<Eigen::Index>(K);
  const auto Ai = static_cast<Eigen::Index>(A);
  const auto L = design.x.cols();

  Rng rng(seed);
  DrawOrder order;
  GroundTruth t;
  t.seed = seed;

  if (o.doc_author) {
    if (o.doc_author->size() != D) fail(ErrorCode::invalid_argument, "author override size");
    for (auto a : *o.doc_author) {
      if (a >= A) fail(ErrorCode::invalid_argument, "author override out of range");
    }
    t.doc_author = *o.doc_author;
  } else {
    t.doc_author.resize(D);
    for (std::size_t d = 0; d < D; ++d) t.doc_author[d] = static_cast<std::uint32_t>(d % A);
  }

  auto gamma_vec = [&](const std::optional<Vec>& pinned, Eigen::Index n, const char* name,
                       auto shape, auto rate) {
    if (pinned) {
      check_shape(*pinned, n, 1, name);
      return *pinned;
    }
    Vec out(n);
    for (Eigen::Index i = 0; i < n; ++i) out(i) = sample_gamma({shape(i), rate(i)}, rng);
    return out;
  };

  // Regression hierarchy.
  const double bomega_rate = h.b_omega_prior_rate();
  t.bomega = gamma_vec(o.bomega, L, "bomega", [&](Eigen::Index) { return h.a_omega_prime; },
                       [&](Eigen::Index) { return bomega_rate; });
  order.mark("bomega", {});
  t.omega = gamma_vec(o.omega, L, "omega", [&](Eigen::Index) { return h.a_omega; },
                      [&](Eigen::Index l) { return t.bomega(l); });
  order.mark("omega", {"bomega"});
  if (o.iotadot) {
    check_shape(*o.iotadot, L, 1, "iotadot");
    t.iotadot = *o.iotadot;
  } else {
    t.iotadot.resize(L);
    for (Eigen::Index l = 0; l < L; ++l) t.iotadot(l) = rng.normal();
  }
  order.mark("iotadot", {});
  if (o.iota) {
    check_shape(*o.iota, Ki, L, "iota");
    t.iota = *o.iota;
  } else {
    t.iota.resize(Ki, L);
    for (Eigen::Index k = 0; k < Ki; ++k) {
      for (Eigen::Index l = 0; l < L; ++l) {
        t.iota(k, l) = t.iotadot(l) + rng.normal() / std::sqrt(t.omega(l));
      }
    }
  }
  order.mark("iota", {"iotadot", "omega"});
  t.prec = gamma_vec(o.prec, Ai, "prec", [&](Eigen::Index) { return h.a_prec; },
                     [&](Eigen::Index) { return h.b_prec; });
  order.mark("prec", {});
  if (o.positions) {
    check_shape(*o.positions, Ai, Ki, "positions");
    t.positions = *o.positions;
  } else {
    t.positions.resize(Ai, Ki);
    for (Eigen::Index a = 0; a < Ai; ++a) {
      const Eigen::VectorXd x = design.x.row(a).transpose();
      for (Eigen::Index k = 0; k < Ki; ++k) {
        t.positions(a, k) = t.iota.row(k).dot(x) + rng.normal() / std::sqrt(t.prec(a));
      }
    }
  }
  order.mark("positions", {"iota", "prec"});

  // Polarity hierarchy.
  const double brho_rate = h.b_rho_prior_rate();
  t.brho = gamma_vec(o.brho, Ki, "brho", [&](Eigen::Index) { return h.a_rho_prime; },
                     [&](Eigen::Index) { return brho_rate; });
  order.mark("brho", {});
  t.rho = gamma_vec(o.rho, Ki, "rho", [&](Eigen::Index) { return h.a_rho; },
                    [&](Eigen::Index k) { return t.brho(k); });
  order.mark("rho", {"brho"});
  if (o.eta) {
    check_shape(*o.eta, Ki, Vi, "eta");
    t.eta = *o.eta;
  } else {
    t.eta.resize(Ki, Vi);
    for (Eigen::Index k = 0; k < Ki; ++k) {
      const double sd = 1.0 / std::sqrt(t.rho(k));
      for (Eigen::Index v = 0; v < Vi; ++v) t.eta(k, v) = sd * rng.normal();
    }
  }
  order.mark("eta", {"rho"});

  // Document intensities.
  const double btheta_rate = h.a_theta_prime / h.b_theta_prime;
  t.btheta = gamma_vec(o.btheta, Ai, "btheta", [&](Eigen::Index) { return h.a_theta_prime; },
                       [&](Eigen::Index) { return btheta_rate; });
  order.mark("btheta", {});
  if (o.theta) {
    check_shape(*o.theta, Di, Ki, "theta");
    t.theta = *o.theta;
  } else {
    t.theta.resize(Di, Ki);
    for (Eigen::Index d = 0; d < Di; ++d) {
      const double rate = t.btheta(t.doc_author[d]);
      for (Eigen::Index k = 0; k < Ki; ++k) t.theta(d, k) = sample_gamma({h.a_theta, rate}, rng);
    }
  }
  order.mark("theta", {"btheta"});

  // Neutral term intensities.
  const double bbeta_rate = h.a_beta_prime / h.b_beta_prime;
  t.bbeta = gamma_vec(o.bbeta, Vi, "bbeta", [&](Eigen::Index) { return h.a_beta_prime; },
                      [&](Eigen::Index) { return bbeta_rate; });
  order.mark("bbeta", {});
  if (o.beta) {
    check_shape(*o.beta, Ki, Vi, "beta");
    t.beta = *o.beta;
  } else {
    t.beta.resize(Ki, Vi);
    for (Eigen::Index k = 0; k < Ki; ++k) {
      for (Eigen::Index v = 0; v < Vi; ++v) t.beta(k, v) = sample_gamma({h.a_beta, t.bbeta(v)}, rng);
    }
  }
  order.mark("beta", {"bbeta"});

  // Counts.
  order.mark("counts", {"theta", "beta", "eta", "positions"});
  std::vector<TripletEntry> entries;
  std::map<std::int64_t, std::int64_t> authors;
  for (std::size_t d = 0; d < D; ++d) {
    authors[static_cast<std::int64_t>(d)] = t.doc_author[d];
    for (std::size_t v = 0; v < V; ++v) {
      const double lam = truth_intensity(t, d, v);
      if (!(lam <= kMaxIntensity)) {
        fail(ErrorCode::numeric, "degenerate draw: intensity " + std::to_string(lam) +
                                     " exceeds 1e9 (try another seed)");
      }
      const auto y = sample_poisson(lam, rng);
      if (y > 0) {
        entries.push_back({static_cast<std::int64_t>(d), static_cast<std::int64_t>(v), y});
      }
    }
  }
  SynthResult out;
  out.corpus = make_doc_term_matrix(entries, authors);
  // Keep the full term range even if the last terms drew no counts.
  auto& c = out.corpus;
  while (c.num_terms < V) c.term_labels.push_back(static_cast<std::int64_t>(c.num_terms++));
  out.truth = std::move(t);
  return out;
}

CovariateTable simulated_covariates(std::size_t A) {
  CovariateTable t;
  t.num_authors = A;
  CovariateColumn group{"group", {}, "a"};
  CovariateColumn noise{"noise", {}, "x"};
  for (std::size_t a = 0; a < A; ++a) {
    group.labels.push_back(a % 2 == 0 ? "a" : "b");
    noise.labels.push_back((a / 2) % 2 == 0 ? "x" : "y");
  }
  t.columns = {group, noise};
  return t;
}

void write_covariates(const CovariateTable& table, const std::vector<std::int64_t>& author_labels,
                      const std::filesystem::path& path) {
  if (author_labels.size() != table.num_authors) {
    fail(ErrorCode::invalid_argument, "covariate table and author labels differ in size");
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << "author_id";
  for (const auto& c : table.columns) out << ',' << c.name;
  out << '\n';
  for (std::size_t a = 0; a < table.num_authors; ++a) {
    out << author_labels[a];
    for (const auto& c : table.columns) out << ',' << c.labels[a];
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

template <typename Derived>
json array_json(const Eigen::MatrixBase<Derived>& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Mat array_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    fail(ErrorCode::schema, "truth array has the wrong length");
  }
  Mat m(rows, cols);
  std::size_t n = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[n++].get<double>();
  }
  return m;
}

}  // namespace

std::string truth_to_string(const GroundTruth& t) {
  json doc{{"schema", kTruthSchema},
           {"seed", t.seed},
           {"theta", array_json(t.theta)},
           {"beta", array_json(t.beta)},
           {"eta", array_json(t.eta)},
           {"positions", array_json(t.positions)},
           {"iota", array_json(t.iota)},
           {"prec", array_json(t.prec)},
           {"btheta", array_json(t.btheta)},
           {"bbeta", array_json(t.bbeta)},
           {"rho", array_json(t.rho)},
           {"brho", array_json(t.brho)},
           {"iotadot", array_json(t.iotadot)},
           {"omega", array_json(t.omega)},
           {"bomega", array_json(t.bomega)},
           {"doc_author", t.doc_author}};
  return doc.dump(1) + "\n";
}

GroundTruth truth_from_string(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.value("schema", "") != kTruthSchema) {
      fail(ErrorCode::schema, std::string("truth file schema must be ") + kTruthSchema);
    }
    GroundTruth t;
    t.seed = doc.at("seed").get<std::uint64_t>();
    t.theta = array_from_json(doc.at("theta"));
    t.beta = array_from_json(doc.at("beta"));
    t.eta = array_from_json(doc.at("eta"));
    t.positions = array_from_json(doc.at("positions"));
    t.iota = array_from_json(doc.at("iota"));
    t.prec = array_from_json(doc.at("prec")).col(0);
    t.btheta = array_from_json(doc.at("btheta")).col(0);
    t.bbeta = array_from_json(doc.at("bbeta")).col(0);
    t.rho = array_from_json(doc.at("rho")).col(0);
    t.brho = array_from_json(doc.at("brho")).col(0);
    t.iotadot = array_from_json(doc.at("iotadot")).col(0);
    t.omega = array_from_json(doc.at("omega")).col(0);
    t.bomega = array_from_json(doc.at("bomega")).col(0);
    t.doc_author = doc.at("doc_author").get<std::vector<std::uint32_t>>();
    return t;
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("malformed truth file: ") + e.what());
  }
}

void save_truth(const GroundTruth& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << truth_to_string(t);
}

GroundTruth load_truth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return truth_from_string(ss.str());
}

// ---------------------------------------------------------------------------

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double scale = std::max(std::fabs(mx), std::fabs(my)) + 1.0;
  const double tiny = 1e-24 * scale * scale * n;
  if (!(sxx > tiny) || !(syy > tiny)) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

RecoveryReport recovery_metrics(const GroundTruth& truth, const Model& model, bool anchored) {
  const auto& s = model.state;
  const std::size_t K = s.num_topics;
  const std::size_t V = s.num_terms;
  const std::size_t A = s.num_authors;
  if (static_cast<std::size_t>(truth.beta.rows()) != K) {
    fail(ErrorCode::invalid_argument, "truth and model differ in the number of topics");
  }
  auto term_of = [&](std::size_t v) {
    const auto lab = model.term_labels.empty() ? static_cast<std::int64_t>(v) : model.term_labels[v];
    if (lab < 0 || lab >= truth.beta.cols()) fail(ErrorCode::invalid_argument, "term label outside truth");
    return static_cast<Eigen::Index>(lab);
  };
  auto author_of = [&](std::size_t a) {
    const auto lab =
        model.author_labels.empty() ? static_cast<std::int64_t>(a) : model.author_labels[a];
    if (lab < 0 || lab >= truth.positions.rows()) {
      fail(ErrorCode::invalid_argument, "author label outside truth");
    }
    return static_cast<Eigen::Index>(lab);
  };

  // Topic matching by beta-row correlation.
  const Mat beta = s.beta.means();
  std::vector<std::vector<double>> score(K, std::vector<double>(K, -2.0));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < K; ++j) {
      std::vector<double> x(V), y(V);
      for (std::size_t v = 0; v < V; ++v) {
        x[v] = beta(k, v);
        y[v] = truth.beta(j, term_of(v));
      }
      score[k][j] = pearson(x, y).value_or(-2.0);
    }
  }
  RecoveryReport r;
  r.topic_match.resize(K);
  if (K <= 8) {
    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    double best = -1e300;
    do {
      double tot = 0.0;
      for (std::size_t k = 0; k < K; ++k) tot += score[k][perm[k]];
      if (tot > best) {
        best = tot;
        r.topic_match = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::vector<bool> used_fit(K, false), used_true(K, false);
    for (std::size_t step = 0; step < K; ++step) {
      double best = -1e300;
      std::size_t bk = 0, bj = 0;
      for (std::size_t k = 0; k < K; ++k) {
        if (used_fit[k]) continue;
        for (std::size_t j = 0; j < K; ++j) {
          if (!used_true[j] && score[k][j] > best) {
            best = score[k][j];
            bk = k;
            bj = j;
          }
        }
      }
      used_fit[bk] = used_true[bj] = true;
      r.topic_match[bk] = bj;
    }
  }

  r.topic_sign.assign(K, 1);
  if (!anchored) {
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> x(A), y(A);
      for (std::size_t a = 0; a < A; ++a) {
        x[a] = s.positions.loc(static_cast<Eigen::Index>(a), s.pcol(k));
        y[a] = truth.positions(author_of(a), static_cast<Eigen::Index>(r.topic_match[k]));
      }
      if (pearson(x, y).value_or(0.0) < 0.0) r.topic_sign[k] = -1;
    }
  }

  std::vector<double> pe, pt;
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t k = 0; k < K; ++k) {
      pe.push_back(r.topic_sign[k] * s.positions.loc(static_cast<Eigen::Index>(a), s.pcol(k)));
      pt.push_back(truth.positions(author_of(a), static_cast<Eigen::Index>(r.topic_match[k])));
    }
  }
  r.position_corr = pearson(pe, pt);

  std::vector<double> ee, et;
  std::size_t agree = 0, strong = 0;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t v = 0; v < V; ++v) {
      const double est = r.topic_sign[k] * s.eta.loc(static_cast<Eigen::Index>(k),
                                                     static_cast<Eigen::Index>(v));
      const double tru = truth.eta(static_cast<Eigen::Index>(r.topic_match[k]), term_of(v));
      ee.push_back(est);
      et.push_back(tru);
      if (std::fabs(tru) > 0.5) {
        ++strong;
        if ((est > 0.0) == (tru > 0.0)) ++agree;
      }
    }
  }
  r.eta_corr = pearson(ee, et);
  if (strong > 0) r.eta_sign_agreement = static_cast<double>(agree) / static_cast<double>(strong);

  const auto L = std::min<Eigen::Index>(truth.iota.cols(), s.iota_loc.cols());
  double sq = 0.0;
  std::size_t n = 0;
  for (Eigen::Index l = 0; l < L; ++l) {
    std::vector<double> x, y;
    for (std::size_t k = 0; k < K; ++k) {
      const double est = r.topic_sign[k] * s.iota_loc(s.pcol(k), l);
      const double tru = truth.iota(static_cast<Eigen::Index>(r.topic_match[k]), l);
      x.push_back(est);
      y.push_back(tru);
      sq += (est - tru) * (est - tru);
      ++n;
    }
    r.iota_corr.push_back(pearson(x, y));
  }
  r.iota_rmse = n > 0 ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
  return r;
}

std::string format_metric(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os.precision(6);
  os << *v;
  return os.str();
}

}  // namespace stbs
