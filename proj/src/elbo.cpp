#include <cmath>
#include <numeric>

#include "internal.hpp"
#include "parallel.hpp"
#include "stbs/error.hpp"
#include "stbs/inference.hpp"

namespace stbs {

using detail::gamma_prior_term;
using detail::kHalfLog2Pi;
using detail::parallel_for;

namespace detail {

void closed_form_terms(const VariationalState& s, const DocTermMatrix& m,
                       const DesignMatrix& design, const Hyperparams& h, FactorMode mode,
                       const std::vector<std::uint32_t>& docs, double scale,
                       std::map<std::string, double>& terms) {
  (void)design;
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const auto V = static_cast<Eigen::Index>(s.num_terms);
  const auto A = static_cast<Eigen::Index>(s.num_authors);

  double p_theta = 0.0, h_theta = 0.0;
  for (auto d : docs) {
    const auto a = m.doc_author[d];
    const double elog_b = s.btheta.elog(a);
    const double eb = s.btheta.mean(a);
    for (Eigen::Index k = 0; k < K; ++k) {
      p_theta += gamma_prior_term(h.a_theta, elog_b, eb, s.theta.at(d, k));
      h_theta += gamma_entropy(s.theta.at(d, k));
    }
  }
  terms["prior.theta"] = scale * p_theta;
  terms["entropy.theta"] = scale * h_theta;

  const double btheta_rate = h.a_theta_prime / h.b_theta_prime;
  double p = 0.0, e = 0.0;
  for (Eigen::Index a = 0; a < A; ++a) {
    p += gamma_prior_term(h.a_theta_prime, std::log(btheta_rate), btheta_rate, s.btheta.at(a));
    e += gamma_entropy(s.btheta.at(a));
  }
  terms["prior.btheta"] = p;
  terms["entropy.btheta"] = e;

  p = e = 0.0;
  for (Eigen::Index v = 0; v < V; ++v) {
    const double elog_b = s.bbeta.elog(v);
    const double eb = s.bbeta.mean(v);
    for (Eigen::Index k = 0; k < K; ++k) {
      p += gamma_prior_term(h.a_beta, elog_b, eb, s.beta.at(k, v));
      e += gamma_entropy(s.beta.at(k, v));
    }
  }
  terms["prior.beta"] = p;
  terms["entropy.beta"] = e;

  const double bbeta_rate = h.a_beta_prime / h.b_beta_prime;
  p = e = 0.0;
  for (Eigen::Index v = 0; v < V; ++v) {
    p += gamma_prior_term(h.a_beta_prime, std::log(bbeta_rate), bbeta_rate, s.bbeta.at(v));
    e += gamma_entropy(s.bbeta.at(v));
  }
  terms["prior.bbeta"] = p;
  terms["entropy.bbeta"] = e;

  if (mode == FactorMode::off) return;

  const auto L = static_cast<Eigen::Index>(s.num_covariates);
  const auto Kp = static_cast<Eigen::Index>(s.position_cols());

  p = e = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index v = 0; v < V; ++v) e += normal_entropy(s.eta.at(k, v));
  }
  terms["entropy.eta"] = e;
  e = 0.0;
  for (Eigen::Index a = 0; a < A; ++a) {
    for (Eigen::Index c = 0; c < Kp; ++c) e += normal_entropy(s.positions.at(a, c));
  }
  terms["entropy.positions"] = e;

  const double brho_rate = h.b_rho_prior_rate();
  double p2 = 0.0, e2 = 0.0;
  p = e = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    p += gamma_prior_term(h.a_rho, s.brho.elog(k), s.brho.mean(k), s.rho.at(k));
    e += gamma_entropy(s.rho.at(k));
    p2 += gamma_prior_term(h.a_rho_prime, std::log(brho_rate), brho_rate, s.brho.at(k));
    e2 += gamma_entropy(s.brho.at(k));
  }
  terms["prior.rho"] = p;
  terms["entropy.rho"] = e;
  terms["prior.brho"] = p2;
  terms["entropy.brho"] = e2;

  p = e = 0.0;
  for (Eigen::Index a = 0; a < A; ++a) {
    p += gamma_prior_term(h.a_prec, std::log(h.b_prec), h.b_prec, s.prec.at(a));
    e += gamma_entropy(s.prec.at(a));
  }
  terms["prior.prec"] = p;
  terms["entropy.prec"] = e;

  const Eigen::MatrixXd cov = s.iota_cov();
  p = 0.0;
  for (Eigen::Index c = 0; c < Kp; ++c) {
    for (Eigen::Index l = 0; l < L; ++l) {
      const double r = s.iota_loc(c, l) - s.iotadot_loc(l);
      p += 0.5 * s.omega.elog(l) - kHalfLog2Pi -
           0.5 * s.omega.mean(l) * (r * r + cov(l, l) + s.iotadot_var(l));
    }
  }
  terms["prior.iota"] = p;
  terms["entropy.iota"] =
      static_cast<double>(Kp) * mvn_entropy(MvnParams{Eigen::VectorXd::Zero(L), s.iota_chol});

  p = e = 0.0;
  for (Eigen::Index l = 0; l < L; ++l) {
    p += -kHalfLog2Pi -
         0.5 * (s.iotadot_loc(l) * s.iotadot_loc(l) + s.iotadot_var(l));
    e += normal_entropy({s.iotadot_loc(l), s.iotadot_var(l)});
  }
  terms["prior.iotadot"] = p;
  terms["entropy.iotadot"] = e;

  const double bomega_rate = h.b_omega_prior_rate();
  p = e = p2 = e2 = 0.0;
  for (Eigen::Index l = 0; l < L; ++l) {
    p += gamma_prior_term(h.a_omega, s.bomega.elog(l), s.bomega.mean(l), s.omega.at(l));
    e += gamma_entropy(s.omega.at(l));
    p2 += gamma_prior_term(h.a_omega_prime, std::log(bomega_rate), bomega_rate, s.bomega.at(l));
    e2 += gamma_entropy(s.bomega.at(l));
  }
  terms["prior.omega"] = p;
  terms["entropy.omega"] = e;
  terms["prior.bomega"] = p2;
  terms["entropy.bomega"] = e2;
}

}  // namespace detail

namespace {

void check_finite(const std::map<std::string, double>& terms) {
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) fail(ErrorCode::numeric, "non-finite ELBO term '" + name + "'");
  }
}

void split_terms(const std::map<std::string, double>& terms, double& recon, double& prior,
                 double& entropy) {
  recon = prior = entropy = 0.0;
  for (const auto& [name, value] : terms) {
    if (name.rfind("prior.", 0) == 0) {
      prior += value;
    } else if (name.rfind("entropy.", 0) == 0) {
      entropy += value;
    } else {
      recon += value;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

ElboTerms exact_elbo(const VariationalState& s, const DocTermMatrix& m,
                     const DesignMatrix& design, const Hyperparams& h, FactorMode mode,
                     const AllocationProbs* fixed_alloc, std::size_t threads) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const std::size_t D = m.num_docs;
  if (fixed_alloc != nullptr) {
    bool ok = fixed_alloc->docs.size() == D;
    for (std::size_t i = 0; ok && i < D; ++i) ok = fixed_alloc->docs[i] == i;
    if (!ok) fail(ErrorCode::invalid_argument, "fixed allocation must cover every document");
  }

  Mat elog_beta(s.beta.shp.rows(), s.beta.shp.cols());
  for (Eigen::Index k = 0; k < elog_beta.rows(); ++k) {
    for (Eigen::Index v = 0; v < elog_beta.cols(); ++v) elog_beta(k, v) = s.beta.elog(k, v);
  }

  std::vector<double> doc_value(D, 0.0);
  parallel_for(D, threads, [&](std::size_t d) {
    const auto a = m.doc_author[d];
    const auto terms = m.terms(d);
    const auto counts = m.doc_counts(d);
    std::vector<double> logit(K);
    double acc = 0.0;
    for (std::size_t j = 0; j < terms.size(); ++j) {
      const auto v = terms[j];
      const double y = static_cast<double>(counts[j]);
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < K; ++k) {
        logit[k] = s.theta.elog(d, k) + elog_beta(k, v);
        if (mode != FactorMode::off) logit[k] += s.eta.loc(k, v) * s.positions.loc(a, s.pcol(k));
        mx = std::max(mx, logit[k]);
      }
      if (fixed_alloc != nullptr) {
        const auto row = static_cast<Eigen::Index>(fixed_alloc->offsets[d] + j);
        for (Eigen::Index k = 0; k < K; ++k) {
          const double ph = fixed_alloc->phi(row, k);
          if (ph > 0.0) acc += y * ph * (logit[k] - std::log(ph));
        }
      } else {
        double se = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) se += std::exp(logit[k] - mx);
        acc += y * (mx + std::log(se));
      }
      acc -= log_gamma(y + 1.0);
    }
    doc_value[d] = acc;
  });

  const Batch all = Batch::full(m);
  const Mat S = detail::author_theta_sums(s, m, all);
  std::vector<std::uint32_t> authors(m.num_authors);
  std::iota(authors.begin(), authors.end(), 0u);
  const Mat R = detail::author_topic_rates(s, s.beta.means(), authors, mode, threads);

  std::map<std::string, double> terms;
  double recon = 0.0;
  for (double v : doc_value) recon += v;
  for (Eigen::Index a = 0; a < S.rows(); ++a) {
    for (Eigen::Index k = 0; k < K; ++k) recon -= S(a, k) * R(a, k);
  }
  terms["reconstruction"] = recon;

  detail::closed_form_terms(s, m, design, h, mode, all.docs, 1.0, terms);

  if (mode != FactorMode::off) {
    const auto V = static_cast<Eigen::Index>(s.num_terms);
    double p = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double er = s.rho.mean(k);
      const double elr = s.rho.elog(k);
      for (Eigen::Index v = 0; v < V; ++v) {
        const double l = s.eta.loc(k, v);
        p += 0.5 * elr - kHalfLog2Pi - 0.5 * er * (l * l + s.eta.var(k, v));
      }
    }
    terms["prior.eta"] = p;

    p = 0.0;
    const auto Kp = static_cast<Eigen::Index>(s.position_cols());
    for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(s.num_authors); ++a) {
      const Eigen::VectorXd x = design.x.row(a).transpose();
      const double quad = detail::design_quadratic(s, design, a);
      const double ei = s.prec.mean(a);
      const double eli = s.prec.elog(a);
      for (Eigen::Index c = 0; c < Kp; ++c) {
        const double r = s.positions.loc(a, c) - s.iota_loc.row(c).dot(x);
        p += 0.5 * eli - kHalfLog2Pi - 0.5 * ei * (r * r + s.positions.var(a, c) + quad);
      }
    }
    terms["prior.positions"] = p;
  }

  check_finite(terms);
  ElboTerms out;
  split_terms(terms, out.reconstruction, out.log_prior, out.entropy);
  return out;
}

// ---------------------------------------------------------------------------

NoiseDraws draw_noise(const VariationalState& s, std::size_t samples, Rng& rng) {
  NoiseDraws z;
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const auto V = static_cast<Eigen::Index>(s.num_terms);
  const auto A = static_cast<Eigen::Index>(s.num_authors);
  const auto Kp = static_cast<Eigen::Index>(s.position_cols());
  for (std::size_t i = 0; i < samples; ++i) {
    Mat ze(K, V);
    for (Eigen::Index k = 0; k < K; ++k) {
      for (Eigen::Index v = 0; v < V; ++v) ze(k, v) = rng.normal();
    }
    Mat zp(A, Kp);
    for (Eigen::Index a = 0; a < A; ++a) {
      for (Eigen::Index c = 0; c < Kp; ++c) zp(a, c) = rng.normal();
    }
    z.eta.push_back(std::move(ze));
    z.pos.push_back(std::move(zp));
  }
  return z;
}

McElbo mc_elbo_with_gradients(const VariationalState& s, const DocTermMatrix& m,
                              const DesignMatrix& design, const Hyperparams& h,
                              const Batch& batch, const NoiseDraws& z, Gradients* grads,
                              std::size_t threads) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const auto V = static_cast<Eigen::Index>(s.num_terms);
  const auto A = static_cast<Eigen::Index>(s.num_authors);
  const auto Kp = static_cast<Eigen::Index>(s.position_cols());
  const std::size_t draws = z.eta.size();
  if (draws == 0 || z.pos.size() != draws) {
    fail(ErrorCode::invalid_argument, "noise draws are empty or inconsistent");
  }
  for (std::size_t i = 0; i < draws; ++i) {
    if (z.eta[i].rows() != K || z.eta[i].cols() != V || z.pos[i].rows() != A ||
        z.pos[i].cols() != Kp) {
      fail(ErrorCode::invalid_argument, "noise draws do not match the state");
    }
  }

  const bool want = grads != nullptr;
  const Mat ebeta = s.beta.means();
  const Mat S = detail::author_theta_sums(s, m, batch);
  const auto authors = detail::batch_authors(m, batch);
  const std::size_t nb = batch.docs.size();

  std::vector<std::size_t> offsets(nb + 1, 0);
  for (std::size_t i = 0; i < nb; ++i) offsets[i + 1] = offsets[i] + m.terms(batch.docs[i]).size();

  Mat eta_sd(K, V), pos_sd(A, Kp);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index v = 0; v < V; ++v) eta_sd(k, v) = std::sqrt(s.eta.var(k, v));
  }
  for (Eigen::Index a = 0; a < A; ++a) {
    for (Eigen::Index c = 0; c < Kp; ++c) pos_sd(a, c) = std::sqrt(s.positions.var(a, c));
  }

  // Position means implied by the regression, and x^T Sigma x per author.
  Mat pos_mean(A, Kp);
  std::vector<double> quad(A);
  for (Eigen::Index a = 0; a < A; ++a) {
    const Eigen::VectorXd x = design.x.row(a).transpose();
    quad[a] = detail::design_quadratic(s, design, a);
    for (Eigen::Index c = 0; c < Kp; ++c) pos_mean(a, c) = s.iota_loc.row(c).dot(x);
  }

  if (want) {
    grads->eta_loc = Mat::Zero(K, V);
    grads->eta_uvar = Mat::Zero(K, V);
    grads->pos_loc = Mat::Zero(A, Kp);
    grads->pos_uvar = Mat::Zero(A, Kp);
  }

  double recon_sum = 0.0, prior_eta_sum = 0.0, prior_pos_sum = 0.0;
  std::vector<double> doc_value(nb), author_value(A);
  Mat ratio, doc_gpos, author_gpos;

  for (std::size_t i = 0; i < draws; ++i) {
    const Mat eta = s.eta.loc + eta_sd.cwiseProduct(z.eta[i]);
    const Mat pos = s.positions.loc + pos_sd.cwiseProduct(z.pos[i]);
    if (want) {
      ratio.resize(static_cast<Eigen::Index>(offsets.back()), K);
      doc_gpos = Mat::Zero(static_cast<Eigen::Index>(nb), Kp);
      author_gpos = Mat::Zero(A, Kp);
    }

    // Observed counts.
    parallel_for(nb, threads, [&](std::size_t b) {
      const auto d = batch.docs[b];
      const auto a = m.doc_author[d];
      const auto terms = m.terms(d);
      const auto counts = m.doc_counts(d);
      std::vector<double> lam(K);
      double acc = 0.0;
      for (std::size_t j = 0; j < terms.size(); ++j) {
        const auto v = terms[j];
        const double y = static_cast<double>(counts[j]);
        double total = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) {
          lam[k] = s.theta.mean(d, k) * ebeta(k, v) * std::exp(eta(k, v) * pos(a, s.pcol(k)));
          total += lam[k];
        }
        acc += y * std::log(total) - log_gamma(y + 1.0);
        if (want) {
          const auto row = static_cast<Eigen::Index>(offsets[b] + j);
          for (Eigen::Index k = 0; k < K; ++k) {
            const double r = y * lam[k] / total;
            ratio(row, k) = r;
            doc_gpos(static_cast<Eigen::Index>(b), s.pcol(k)) += r * eta(k, v);
          }
        }
      }
      doc_value[b] = acc;
    });

    // Implicit zeros: sum over every term of lambda, factorized by author.
    std::fill(author_value.begin(), author_value.end(), 0.0);
    parallel_for(authors.size(), threads, [&](std::size_t idx) {
      const auto a = authors[idx];
      double val = 0.0;
      for (Eigen::Index k = 0; k < K; ++k) {
        const auto c = s.pcol(k);
        const double p = pos(a, c);
        double sv = 0.0, sg = 0.0;
        for (Eigen::Index v = 0; v < V; ++v) {
          const double e = ebeta(k, v) * std::exp(eta(k, v) * p);
          sv += e;
          sg += e * eta(k, v);
        }
        val += S(a, k) * sv;
        if (want) author_gpos(a, c) -= S(a, k) * sg;
      }
      author_value[a] = val;
    });

    double recon = 0.0;
    for (double v : doc_value) recon += v;
    for (auto a : authors) recon -= author_value[a];
    recon_sum += batch.scale * recon;

    Mat geta, gpos;
    if (want) {
      geta = Mat::Zero(K, V);
      parallel_for(static_cast<std::size_t>(V), threads, [&](std::size_t v) {
        for (Eigen::Index k = 0; k < K; ++k) {
          const auto c = s.pcol(k);
          double acc = 0.0;
          for (auto a : authors) {
            const double p = pos(a, c);
            acc += S(a, k) * p * std::exp(eta(k, v) * p);
          }
          geta(k, v) = -ebeta(k, v) * acc;
        }
      });
      for (std::size_t b = 0; b < nb; ++b) {
        const auto d = batch.docs[b];
        const auto a = m.doc_author[d];
        const auto terms = m.terms(d);
        for (std::size_t j = 0; j < terms.size(); ++j) {
          const auto row = static_cast<Eigen::Index>(offsets[b] + j);
          for (Eigen::Index k = 0; k < K; ++k) {
            geta(k, terms[j]) += ratio(row, k) * pos(a, s.pcol(k));
          }
        }
      }
      gpos = author_gpos;
      for (std::size_t b = 0; b < nb; ++b) {
        gpos.row(m.doc_author[batch.docs[b]]) += doc_gpos.row(static_cast<Eigen::Index>(b));
      }
      geta *= batch.scale;
      gpos *= batch.scale;
    }

    // Sampled priors of eta and positions.
    double pe = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double er = s.rho.mean(k);
      const double elr = s.rho.elog(k);
      for (Eigen::Index v = 0; v < V; ++v) {
        pe += 0.5 * elr - kHalfLog2Pi - 0.5 * er * eta(k, v) * eta(k, v);
        if (want) geta(k, v) -= er * eta(k, v);
      }
    }
    prior_eta_sum += pe;
    double pp = 0.0;
    for (Eigen::Index a = 0; a < A; ++a) {
      const double ei = s.prec.mean(a);
      const double eli = s.prec.elog(a);
      for (Eigen::Index c = 0; c < Kp; ++c) {
        const double r = pos(a, c) - pos_mean(a, c);
        pp += 0.5 * eli - kHalfLog2Pi - 0.5 * ei * (r * r + quad[a]);
        if (want) gpos(a, c) -= ei * r;
      }
    }
    prior_pos_sum += pp;

    if (want) {
      const double w = 1.0 / static_cast<double>(draws);
      for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index v = 0; v < V; ++v) {
          const double var = eta_sd(k, v) * eta_sd(k, v);
          grads->eta_loc(k, v) += w * geta(k, v);
          grads->eta_uvar(k, v) +=
              w * geta(k, v) * z.eta[i](k, v) * eta_sd(k, v) * (1.0 - var) * 0.5;
        }
      }
      for (Eigen::Index a = 0; a < A; ++a) {
        for (Eigen::Index c = 0; c < Kp; ++c) {
          const double var = pos_sd(a, c) * pos_sd(a, c);
          grads->pos_loc(a, c) += w * gpos(a, c);
          grads->pos_uvar(a, c) +=
              w * gpos(a, c) * z.pos[i](a, c) * pos_sd(a, c) * (1.0 - var) * 0.5;
        }
      }
    }
  }

  const double inv = 1.0 / static_cast<double>(draws);
  std::map<std::string, double> terms;
  terms["reconstruction"] = inv * recon_sum;
  terms["prior.eta"] = inv * prior_eta_sum;
  terms["prior.positions"] = inv * prior_pos_sum;
  detail::closed_form_terms(s, m, design, h, FactorMode::exact, batch.docs, batch.scale, terms);
  check_finite(terms);

  if (want) {
    // Entropy: d/duvar of 0.5 log(sigmoid(uvar)) = 0.5 (1 - var).
    for (Eigen::Index k = 0; k < K; ++k) {
      for (Eigen::Index v = 0; v < V; ++v) {
        grads->eta_uvar(k, v) += 0.5 * (1.0 - eta_sd(k, v) * eta_sd(k, v));
      }
    }
    for (Eigen::Index a = 0; a < A; ++a) {
      for (Eigen::Index c = 0; c < Kp; ++c) {
        grads->pos_uvar(a, c) += 0.5 * (1.0 - pos_sd(a, c) * pos_sd(a, c));
      }
    }
  }

  McElbo out;
  out.terms = terms;
  split_terms(terms, out.reconstruction, out.log_prior, out.entropy);
  return out;
}

McElbo mc_elbo(const VariationalState& s, const DocTermMatrix& m, const DesignMatrix& design,
               const Hyperparams& h, const Batch& batch, const NoiseDraws& z,
               std::size_t threads) {
  return mc_elbo_with_gradients(s, m, design, h, batch, z, nullptr, threads);
}

Gradients reparam_gradients(const VariationalState& s, const DocTermMatrix& m,
                            const DesignMatrix& design, const Hyperparams& h,
                            const Batch& batch, const NoiseDraws& z, std::size_t threads) {
  Gradients g;
  mc_elbo_with_gradients(s, m, design, h, batch, z, &g, threads);
  return g;
}

}  // namespace stbs
