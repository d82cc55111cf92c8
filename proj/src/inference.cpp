#include "stbs/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "internal.hpp"
#include "parallel.hpp"
#include "stbs/error.hpp"

namespace stbs {

using detail::parallel_for;

namespace {

// Unconstrained variances are kept inside this band so the sigmoid never
// rounds to exactly 0 or 1.
constexpr double kMaxUvar = 30.0;

Mat expected_beta(const VariationalState& s) { return s.beta.means(); }

Mat expected_log_beta(const VariationalState& s, std::size_t threads) {
  Mat out(s.beta.shp.rows(), s.beta.shp.cols());
  parallel_for(static_cast<std::size_t>(out.rows()), threads, [&](std::size_t k) {
    for (Eigen::Index v = 0; v < out.cols(); ++v) out(k, v) = s.beta.elog(k, v);
  });
  return out;
}

}  // namespace

FactorMode factor_mode(const FitConfig& cfg) {
  return cfg.expectation_mode == ExpectationMode::exact ? FactorMode::exact
                                                       : FactorMode::geometric;
}

Batch Batch::full(const DocTermMatrix& m) {
  Batch b;
  b.docs.resize(m.num_docs);
  std::iota(b.docs.begin(), b.docs.end(), 0u);
  b.scale = 1.0;
  return b;
}

Batch Batch::of(const DocTermMatrix& m, std::vector<std::uint32_t> docs) {
  if (docs.empty()) fail(ErrorCode::invalid_argument, "batch must contain documents");
  std::sort(docs.begin(), docs.end());
  if (std::adjacent_find(docs.begin(), docs.end()) != docs.end()) {
    fail(ErrorCode::invalid_argument, "batch contains a document twice");
  }
  if (docs.back() >= m.num_docs) fail(ErrorCode::invalid_argument, "batch document out of range");
  Batch b;
  b.scale = static_cast<double>(m.num_docs) / static_cast<double>(docs.size());
  b.docs = std::move(docs);
  return b;
}

double ideological_factor(const VariationalState& s, std::size_t a, std::size_t k, std::size_t v,
                          FactorMode mode) {
  switch (mode) {
    case FactorMode::off:
      return 1.0;
    case FactorMode::geometric:
      return geometric_ideological_term(s.eta.at(k, v), s.positions.at(a, s.pcol(k)));
    case FactorMode::exact:
      return expected_ideological_term(s.eta.at(k, v), s.positions.at(a, s.pcol(k)));
  }
  return 1.0;
}

// ---------------------------------------------------------------------------
// Batch helpers

namespace detail {

std::vector<std::uint32_t> batch_authors(const DocTermMatrix& m, const Batch& batch) {
  std::vector<std::uint32_t> out;
  out.reserve(batch.docs.size());
  for (auto d : batch.docs) out.push_back(m.doc_author[d]);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Mat author_theta_sums(const VariationalState& s, const DocTermMatrix& m, const Batch& batch) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  Mat S = Mat::Zero(static_cast<Eigen::Index>(s.num_authors), K);
  for (auto d : batch.docs) {
    const auto a = m.doc_author[d];
    for (Eigen::Index k = 0; k < K; ++k) S(a, k) += s.theta.mean(d, k);
  }
  return S;
}

Mat author_topic_rates(const VariationalState& s, const Mat& ebeta,
                       const std::vector<std::uint32_t>& authors, FactorMode mode,
                       std::size_t threads) {
  const auto K = ebeta.rows();
  const auto V = ebeta.cols();
  Mat R = Mat::Zero(static_cast<Eigen::Index>(s.num_authors), K);
  if (mode == FactorMode::off) {
    const Eigen::VectorXd col = ebeta.rowwise().sum();
    for (auto a : authors) R.row(a) = col.transpose();
    return R;
  }
  parallel_for(authors.size(), threads, [&](std::size_t i) {
    const auto a = authors[i];
    for (Eigen::Index k = 0; k < K; ++k) {
      double acc = 0.0;
      for (Eigen::Index v = 0; v < V; ++v) {
        acc += ebeta(k, v) * ideological_factor(s, a, k, v, mode);
      }
      R(a, k) = acc;
    }
  });
  return R;
}

double design_quadratic(const VariationalState& s, const DesignMatrix& design, std::size_t a) {
  const Eigen::VectorXd x = design.x.row(static_cast<Eigen::Index>(a)).transpose();
  return (s.iota_chol.transpose() * x).squaredNorm();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Allocation

AllocationProbs allocation_probs(const VariationalState& s, const DocTermMatrix& m,
                                 const Batch& batch, FactorMode mode, std::size_t threads) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  AllocationProbs out;
  out.docs = batch.docs;
  out.offsets.resize(batch.docs.size() + 1, 0);
  for (std::size_t i = 0; i < batch.docs.size(); ++i) {
    out.offsets[i + 1] = out.offsets[i] + m.terms(batch.docs[i]).size();
  }
  out.phi.resize(static_cast<Eigen::Index>(out.offsets.back()), K);
  const Mat elog_beta = expected_log_beta(s, threads);

  parallel_for(batch.docs.size(), threads, [&](std::size_t i) {
    const auto d = batch.docs[i];
    const auto a = m.doc_author[d];
    std::vector<double> elog_theta(K);
    for (Eigen::Index k = 0; k < K; ++k) elog_theta[k] = s.theta.elog(d, k);
    const auto terms = m.terms(d);
    for (std::size_t j = 0; j < terms.size(); ++j) {
      const auto v = terms[j];
      const auto row = static_cast<Eigen::Index>(out.offsets[i] + j);
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < K; ++k) {
        double logit = elog_theta[k] + elog_beta(k, v);
        if (mode != FactorMode::off) logit += s.eta.loc(k, v) * s.positions.loc(a, s.pcol(k));
        out.phi(row, k) = logit;
        mx = std::max(mx, logit);
      }
      double total = 0.0;
      for (Eigen::Index k = 0; k < K; ++k) {
        out.phi(row, k) = std::exp(out.phi(row, k) - mx);
        total += out.phi(row, k);
      }
      out.phi.row(row) /= total;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// CAVI updates

void update_local_theta(VariationalState& s, const DocTermMatrix& m, const Batch& batch,
                        const AllocationProbs& alloc, const Hyperparams& h, FactorMode mode,
                        std::size_t threads) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const Mat ebeta = expected_beta(s);
  const auto authors = detail::batch_authors(m, batch);
  const Mat R = detail::author_topic_rates(s, ebeta, authors, mode, threads);

  parallel_for(batch.docs.size(), threads, [&](std::size_t i) {
    const auto d = batch.docs[i];
    const auto a = m.doc_author[d];
    const auto counts = m.doc_counts(d);
    const double eb = s.btheta.mean(a);
    for (Eigen::Index k = 0; k < K; ++k) {
      double shp = h.a_theta;
      for (std::size_t j = 0; j < counts.size(); ++j) {
        shp += static_cast<double>(counts[j]) *
               alloc.phi(static_cast<Eigen::Index>(alloc.offsets[i] + j), k);
      }
      s.theta.shp(d, k) = shp;
      s.theta.rte(d, k) = eb + R(a, k);
    }
  });
}

GammaArray propose_doc_rates(const VariationalState& s, const DocTermMatrix& m,
                             const Batch& batch, const Hyperparams& h) {
  const auto A = static_cast<Eigen::Index>(s.num_authors);
  const double K = static_cast<double>(s.num_topics);
  const Mat S = detail::author_theta_sums(s, m, batch);
  std::vector<double> n(A, 0.0);
  for (auto d : batch.docs) n[m.doc_author[d]] += 1.0;

  GammaArray out(A, 1, h.a_theta_prime, h.a_theta_prime / h.b_theta_prime);
  for (Eigen::Index a = 0; a < A; ++a) {
    out.shp(a, 0) += batch.scale * K * n[a] * h.a_theta;
    out.rte(a, 0) += batch.scale * S.row(a).sum();
  }
  return out;
}

GammaArray propose_beta(const VariationalState& s, const DocTermMatrix& m, const Batch& batch,
                        const AllocationProbs& alloc, const Hyperparams& h, FactorMode mode,
                        std::size_t threads) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const auto V = static_cast<Eigen::Index>(s.num_terms);
  GammaArray out(K, V, h.a_beta, 0.0);

  Mat counts_phi = Mat::Zero(K, V);
  for (std::size_t i = 0; i < alloc.docs.size(); ++i) {
    const auto d = alloc.docs[i];
    const auto terms = m.terms(d);
    const auto counts = m.doc_counts(d);
    for (std::size_t j = 0; j < terms.size(); ++j) {
      const auto row = static_cast<Eigen::Index>(alloc.offsets[i] + j);
      for (Eigen::Index k = 0; k < K; ++k) {
        counts_phi(k, terms[j]) += static_cast<double>(counts[j]) * alloc.phi(row, k);
      }
    }
  }
  out.shp.array() += batch.scale * counts_phi.array();

  const Mat S = detail::author_theta_sums(s, m, batch);
  const auto authors = detail::batch_authors(m, batch);
  parallel_for(static_cast<std::size_t>(V), threads, [&](std::size_t v) {
    const double eb = s.bbeta.mean(static_cast<Eigen::Index>(v));
    for (Eigen::Index k = 0; k < K; ++k) {
      double acc = 0.0;
      for (auto a : authors) acc += S(a, k) * ideological_factor(s, a, k, v, mode);
      out.rte(k, v) = eb + batch.scale * acc;
    }
  });
  return out;
}

GammaArray propose_word_rates(const VariationalState& s, const Hyperparams& h) {
  const auto V = static_cast<Eigen::Index>(s.num_terms);
  const double K = static_cast<double>(s.num_topics);
  GammaArray out(V, 1, h.a_beta_prime + K * h.a_beta, h.a_beta_prime / h.b_beta_prime);
  const Mat eb = s.beta.means();
  for (Eigen::Index v = 0; v < V; ++v) out.rte(v, 0) += eb.col(v).sum();
  return out;
}

GammaArray propose_eta_precisions(const VariationalState& s, const Hyperparams& h) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const auto V = static_cast<Eigen::Index>(s.num_terms);
  GammaArray out(K, 1, h.a_rho + 0.5 * static_cast<double>(V), 0.0);
  for (Eigen::Index k = 0; k < K; ++k) {
    double ss = 0.0;
    for (Eigen::Index v = 0; v < V; ++v) {
      ss += s.eta.loc(k, v) * s.eta.loc(k, v) + s.eta.var(k, v);
    }
    out.rte(k, 0) = s.brho.mean(k) + 0.5 * ss;
  }
  return out;
}

GammaArray propose_eta_precision_rates(const VariationalState& s, const Hyperparams& h) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  GammaArray out(K, 1, h.a_rho_prime + h.a_rho, 0.0);
  for (Eigen::Index k = 0; k < K; ++k) out.rte(k, 0) = h.b_rho_prior_rate() + s.rho.mean(k);
  return out;
}

RegressionProposal propose_regression(const VariationalState& s, const DesignMatrix& design) {
  const auto L = static_cast<Eigen::Index>(s.num_covariates);
  const auto A = static_cast<Eigen::Index>(s.num_authors);
  const auto Kp = static_cast<Eigen::Index>(s.position_cols());
  if (design.x.rows() != A || design.x.cols() != L) {
    fail(ErrorCode::invalid_argument, "design matrix does not match the state");
  }
  Eigen::VectorXd eomega(L);
  for (Eigen::Index l = 0; l < L; ++l) eomega(l) = s.omega.mean(l);

  Eigen::MatrixXd precision = eomega.asDiagonal();
  for (Eigen::Index a = 0; a < A; ++a) {
    const Eigen::VectorXd x = design.x.row(a).transpose();
    precision.noalias() += s.prec.mean(a) * x * x.transpose();
  }
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::internal, "regression precision is not positive definite");
  }
  RegressionProposal out;
  out.cov = llt.solve(Eigen::MatrixXd::Identity(L, L));
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.loc.resize(Kp, L);
  for (Eigen::Index c = 0; c < Kp; ++c) {
    Eigen::VectorXd rhs = eomega.cwiseProduct(s.iotadot_loc);
    for (Eigen::Index a = 0; a < A; ++a) {
      rhs += s.prec.mean(a) * s.positions.loc(a, c) * design.x.row(a).transpose();
    }
    out.loc.row(c) = (out.cov * rhs).transpose();
  }
  return out;
}

CenterProposal propose_regression_centers(const VariationalState& s) {
  const auto L = static_cast<Eigen::Index>(s.num_covariates);
  const double Kp = static_cast<double>(s.position_cols());
  CenterProposal out{Vec(L), Vec(L)};
  for (Eigen::Index l = 0; l < L; ++l) {
    const double eo = s.omega.mean(l);
    out.var(l) = 1.0 / (1.0 + Kp * eo);
    out.loc(l) = out.var(l) * eo * s.iota_loc.col(l).sum();
  }
  return out;
}

GammaArray propose_residual_precisions(const VariationalState& s, const DesignMatrix& design,
                                       const Hyperparams& h) {
  const auto A = static_cast<Eigen::Index>(s.num_authors);
  const auto Kp = static_cast<Eigen::Index>(s.position_cols());
  GammaArray out(A, 1, h.a_prec + 0.5 * static_cast<double>(Kp), h.b_prec);
  for (Eigen::Index a = 0; a < A; ++a) {
    const Eigen::VectorXd x = design.x.row(a).transpose();
    const double quad = detail::design_quadratic(s, design, a);
    double acc = 0.0;
    for (Eigen::Index c = 0; c < Kp; ++c) {
      const double r = s.positions.loc(a, c) - s.iota_loc.row(c).dot(x);
      acc += r * r + s.positions.var(a, c) + quad;
    }
    out.rte(a, 0) += 0.5 * acc;
  }
  return out;
}

GammaArray propose_coef_precisions(const VariationalState& s, const Hyperparams& h) {
  const auto L = static_cast<Eigen::Index>(s.num_covariates);
  const auto Kp = static_cast<Eigen::Index>(s.position_cols());
  const Eigen::MatrixXd cov = s.iota_cov();
  GammaArray out(L, 1, h.a_omega + 0.5 * static_cast<double>(Kp), 0.0);
  for (Eigen::Index l = 0; l < L; ++l) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < Kp; ++c) {
      const double r = s.iota_loc(c, l) - s.iotadot_loc(l);
      acc += r * r + cov(l, l) + s.iotadot_var(l);
    }
    out.rte(l, 0) = s.bomega.mean(l) + 0.5 * acc;
  }
  return out;
}

GammaArray propose_coef_precision_rates(const VariationalState& s, const Hyperparams& h) {
  const auto L = static_cast<Eigen::Index>(s.num_covariates);
  GammaArray out(L, 1, h.a_omega_prime + h.a_omega, 0.0);
  for (Eigen::Index l = 0; l < L; ++l) out.rte(l, 0) = h.b_omega_prior_rate() + s.omega.mean(l);
  return out;
}

// ---------------------------------------------------------------------------
// Blending

void blend_global(GammaArray& current, const GammaArray& proposal, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) fail(ErrorCode::invalid_argument, "blend weight outside (0, 1]");
  if (rho == 1.0) {
    current = proposal;
    return;
  }
  current.shp = rho * proposal.shp + (1.0 - rho) * current.shp;
  current.rte = rho * proposal.rte + (1.0 - rho) * current.rte;
}

void blend_global(VariationalState& s, const RegressionProposal& proposal, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) fail(ErrorCode::invalid_argument, "blend weight outside (0, 1]");
  Eigen::MatrixXd cov = proposal.cov;
  if (rho < 1.0) {
    cov = rho * proposal.cov + (1.0 - rho) * s.iota_cov();
    s.iota_loc = rho * proposal.loc + (1.0 - rho) * s.iota_loc;
  } else {
    s.iota_loc = proposal.loc;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::numeric, "blended regression covariance lost positive definiteness");
  }
  s.iota_chol = llt.matrixL();
}

void blend_global(VariationalState& s, const CenterProposal& proposal, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) fail(ErrorCode::invalid_argument, "blend weight outside (0, 1]");
  s.iotadot_loc = rho * proposal.loc + (1.0 - rho) * s.iotadot_loc;
  s.iotadot_var = rho * proposal.var + (1.0 - rho) * s.iotadot_var;
}

std::string to_string(GlobalBlock b) {
  switch (b) {
    case GlobalBlock::doc_rates: return "doc_rates";
    case GlobalBlock::beta: return "beta";
    case GlobalBlock::word_rates: return "word_rates";
    case GlobalBlock::eta_precisions: return "eta_precisions";
    case GlobalBlock::eta_precision_rates: return "eta_precision_rates";
    case GlobalBlock::regression: return "regression";
    case GlobalBlock::regression_centers: return "regression_centers";
    case GlobalBlock::residual_precisions: return "residual_precisions";
    case GlobalBlock::coef_precisions: return "coef_precisions";
    case GlobalBlock::coef_precision_rates: return "coef_precision_rates";
  }
  return "unknown";
}

void apply_global_update(VariationalState& s, GlobalBlock block, const DocTermMatrix& m,
                         const DesignMatrix& design, const Batch& batch,
                         const AllocationProbs& alloc, const Hyperparams& h, FactorMode mode,
                         double rho, std::size_t threads) {
  const bool ideology = mode != FactorMode::off;
  switch (block) {
    case GlobalBlock::doc_rates:
      blend_global(s.btheta, propose_doc_rates(s, m, batch, h), rho);
      break;
    case GlobalBlock::beta:
      blend_global(s.beta, propose_beta(s, m, batch, alloc, h, mode, threads), rho);
      break;
    case GlobalBlock::word_rates:
      blend_global(s.bbeta, propose_word_rates(s, h), rho);
      break;
    case GlobalBlock::eta_precisions:
      if (ideology) blend_global(s.rho, propose_eta_precisions(s, h), rho);
      break;
    case GlobalBlock::eta_precision_rates:
      if (ideology) blend_global(s.brho, propose_eta_precision_rates(s, h), rho);
      break;
    case GlobalBlock::regression:
      if (ideology) blend_global(s, propose_regression(s, design), rho);
      break;
    case GlobalBlock::regression_centers:
      if (ideology) blend_global(s, propose_regression_centers(s), rho);
      break;
    case GlobalBlock::residual_precisions:
      if (ideology) blend_global(s.prec, propose_residual_precisions(s, design, h), rho);
      break;
    case GlobalBlock::coef_precisions:
      if (ideology) blend_global(s.omega, propose_coef_precisions(s, h), rho);
      break;
    case GlobalBlock::coef_precision_rates:
      if (ideology) blend_global(s.bomega, propose_coef_precision_rates(s, h), rho);
      break;
  }
}

// ---------------------------------------------------------------------------
// Adam

Mat adam_step(Mat& m, Mat& v, const Mat& grad, double lr, std::uint64_t t) {
  if (t < 1) fail(ErrorCode::invalid_argument, "adam_step: step counter must be >= 1");
  m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
  v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
  const double td = static_cast<double>(t);
  const double c1 = 1.0 - std::pow(kAdamBeta1, td);
  const double c2 = 1.0 - std::pow(kAdamBeta2, td);
  Mat inc(grad.rows(), grad.cols());
  for (Eigen::Index i = 0; i < grad.rows(); ++i) {
    for (Eigen::Index j = 0; j < grad.cols(); ++j) {
      inc(i, j) = lr * (m(i, j) / c1) / (std::sqrt(v(i, j) / c2) + kAdamEps);
    }
  }
  return inc;
}

// ---------------------------------------------------------------------------
// Initialization

VariationalState init_state(const DocTermMatrix& m, const DesignMatrix& design,
                            const VariationalState& hpf,
                            const std::map<std::int64_t, double>& anchors,
                            const FitConfig& cfg, const Hyperparams& h) {
  cfg.validate();
  h.validate();
  const auto D = static_cast<Eigen::Index>(m.num_docs);
  const auto V = static_cast<Eigen::Index>(m.num_terms);
  const auto A = static_cast<Eigen::Index>(m.num_authors);
  const auto K = static_cast<Eigen::Index>(cfg.num_topics);
  const auto L = static_cast<Eigen::Index>(design.num_columns());
  if (hpf.theta.shp.rows() != D || hpf.theta.shp.cols() != K || hpf.beta.shp.rows() != K ||
      hpf.beta.shp.cols() != V || hpf.btheta.shp.rows() != A || hpf.bbeta.shp.rows() != V) {
    fail(ErrorCode::invalid_argument, "initial factorization does not match corpus and K");
  }
  if (design.x.rows() != A) {
    fail(ErrorCode::invalid_argument, "design matrix rows do not match the number of authors");
  }

  VariationalState s;
  s.num_docs = m.num_docs;
  s.num_terms = m.num_terms;
  s.num_topics = cfg.num_topics;
  s.num_authors = m.num_authors;
  s.num_covariates = design.num_columns();
  s.position_mode = cfg.position_mode;
  const auto Kp = static_cast<Eigen::Index>(s.position_cols());

  s.theta = hpf.theta;
  s.btheta = hpf.btheta;
  s.beta = hpf.beta;
  s.bbeta = hpf.bbeta;

  Rng rng(cfg.seed);
  const double uvar0 = logit(0.25);
  s.eta.loc.resize(K, V);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index v = 0; v < V; ++v) s.eta.loc(k, v) = 0.01 * rng.normal();
  }
  s.eta.uvar = Mat::Constant(K, V, uvar0);

  s.positions.loc.resize(A, Kp);
  for (Eigen::Index a = 0; a < A; ++a) {
    const auto it = anchors.find(m.author_labels[a]);
    if (it == anchors.end()) {
      fail(ErrorCode::invalid_argument,
           "missing anchor for author " + std::to_string(m.author_labels[a]));
    }
    s.positions.loc.row(a).setConstant(it->second);
  }
  s.positions.uvar = Mat::Constant(A, Kp, uvar0);

  // Remaining gamma blocks sit at their prior means: each block takes its
  // prior shape and the mean of its rate's prior.
  const double brho_rate = h.b_rho_prior_rate();
  const double bomega_rate = h.b_omega_prior_rate();
  s.rho = GammaArray(K, 1, h.a_rho, h.a_rho_prime / brho_rate);
  s.brho = GammaArray(K, 1, h.a_rho_prime, brho_rate);
  s.prec = GammaArray(A, 1, h.a_prec, h.b_prec);
  s.omega = GammaArray(L, 1, h.a_omega, h.a_omega_prime / bomega_rate);
  s.bomega = GammaArray(L, 1, h.a_omega_prime, bomega_rate);

  s.iota_loc = Mat::Zero(Kp, L);
  s.iota_chol = 0.1 * Eigen::MatrixXd::Identity(L, L);
  s.iotadot_loc = Vec::Zero(L);
  s.iotadot_var = Vec::Ones(L);

  s.adam.reset(K, V, A, Kp);
  s.step = 0;
  s.rng_state = rng.serialize();
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Fitting

std::vector<Batch> partition_batches(const DocTermMatrix& m, std::size_t batch_size, Rng& rng) {
  if (batch_size < 1) fail(ErrorCode::config, "batch_size must be >= 1");
  const std::size_t D = m.num_docs;
  std::vector<std::uint32_t> perm(D);
  std::iota(perm.begin(), perm.end(), 0u);
  for (std::size_t i = D; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  const std::size_t nb = (D + batch_size - 1) / batch_size;
  std::vector<Batch> out;
  out.reserve(nb);
  // Near-equal sizes so every batch carries a similar scale factor.
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t lo = b * D / nb;
    const std::size_t hi = (b + 1) * D / nb;
    out.push_back(Batch::of(m, std::vector<std::uint32_t>(perm.begin() + lo, perm.begin() + hi)));
  }
  return out;
}

double fit_batch_step(Model& model, const DocTermMatrix& m, const Batch& batch, Rng& rng) {
  auto& s = model.state;
  const auto& cfg = model.config;
  const auto& h = model.hyper;
  const FactorMode mode = factor_mode(cfg);
  const std::size_t threads = cfg.threads;

  s.step += 1;
  const double rho = step_size(s.step, cfg.tau, cfg.kappa);

  const AllocationProbs alloc = allocation_probs(s, m, batch, mode, threads);
  update_local_theta(s, m, batch, alloc, h, mode, threads);
  for (GlobalBlock block : kGlobalOrder) {
    apply_global_update(s, block, m, model.design, batch, alloc, h, mode, rho, threads);
  }

  if (cfg.freeze_ideology) {
    return exact_elbo(s, m, model.design, h, mode, nullptr, threads).total();
  }

  const NoiseDraws z = draw_noise(s, cfg.mc_samples, rng);
  Gradients g;
  const McElbo value = mc_elbo_with_gradients(s, m, model.design, h, batch, z, &g, threads);

  auto& ad = s.adam;
  s.eta.loc += adam_step(ad.m_eta_loc, ad.v_eta_loc, g.eta_loc, cfg.learning_rate, s.step);
  s.eta.uvar += adam_step(ad.m_eta_uvar, ad.v_eta_uvar, g.eta_uvar, cfg.learning_rate, s.step);
  s.positions.loc += adam_step(ad.m_pos_loc, ad.v_pos_loc, g.pos_loc, cfg.learning_rate, s.step);
  s.positions.uvar +=
      adam_step(ad.m_pos_uvar, ad.v_pos_uvar, g.pos_uvar, cfg.learning_rate, s.step);
  s.eta.uvar = s.eta.uvar.cwiseMax(-kMaxUvar).cwiseMin(kMaxUvar);
  s.positions.uvar = s.positions.uvar.cwiseMax(-kMaxUvar).cwiseMin(kMaxUvar);
  return value.total();
}

void fit(Model& model, const DocTermMatrix& m, const FitOptions& opts) {
  model.config.validate();
  model.hyper.validate();
  auto& s = model.state;
  s.validate();
  if (s.num_docs != m.num_docs || s.num_terms != m.num_terms || s.num_authors != m.num_authors) {
    fail(ErrorCode::invalid_argument, "model state does not match the corpus");
  }
  Rng rng = s.rng_state.empty() ? Rng(model.config.seed) : Rng::deserialize(s.rng_state);

  for (std::size_t epoch = 0; epoch < model.config.epochs; ++epoch) {
    const auto batches = partition_batches(m, model.config.batch_size, rng);
    double last = 0.0;
    for (const auto& batch : batches) {
      last = fit_batch_step(model, m, batch, rng);
      model.elbo_trace.push_back(last);
      if (!std::isfinite(last) || !s.all_finite()) {
        s.rng_state = rng.serialize();
        if (opts.on_checkpoint) opts.on_checkpoint(model, "non-finite");
        fail(ErrorCode::numeric,
             "non-finite state or objective at step " + std::to_string(s.step));
      }
      if (model.config.checkpoint_every > 0 && s.step % model.config.checkpoint_every == 0 &&
          opts.on_checkpoint) {
        s.rng_state = rng.serialize();
        opts.on_checkpoint(model, "periodic");
      }
    }
    s.rng_state = rng.serialize();
    if (opts.on_epoch) opts.on_epoch(FitProgress{epoch + 1, s.step, last});
  }
  s.rng_state = rng.serialize();
}

}  // namespace stbs
