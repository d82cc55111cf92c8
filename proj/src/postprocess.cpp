#include "stbs/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/minima.hpp>

#include "stbs/error.hpp"

namespace stbs {

PosteriorMeans posterior_means(const VariationalState& s) {
  PosteriorMeans p;
  p.theta = s.theta.means();
  p.btheta = s.btheta.means();
  p.beta = s.beta.means();
  p.bbeta = s.bbeta.means();
  p.rho = s.rho.means();
  p.brho = s.brho.means();
  p.prec = s.prec.means();
  p.omega = s.omega.means();
  p.bomega = s.bomega.means();
  p.eta = s.eta.loc;
  p.positions = s.positions.loc;
  p.iota = s.iota_loc;
  p.iotadot = s.iotadot_loc;
  return p;
}

double ccp_scalar(double loc, double sd) {
  if (!(sd > 0.0)) fail(ErrorCode::domain, "ccp_scalar: sd must be positive");
  return std::erfc(std::fabs(loc) / (sd * std::sqrt(2.0)));
}

std::string star_label(double ccp) {
  if (ccp < 0.001) return "***";
  if (ccp < 0.01) return "**";
  if (ccp < 0.05) return "*";
  if (ccp < 0.1) return "·";
  return "";
}

JointCcp ccp_joint(const Eigen::MatrixXd& contrast, const Eigen::VectorXd& loc,
                   const Eigen::MatrixXd& cov) {
  if (contrast.cols() != loc.size() || cov.rows() != loc.size() || cov.cols() != loc.size()) {
    fail(ErrorCode::invalid_argument, "ccp_joint: dimension mismatch");
  }
  JointCcp out;
  if (contrast.rows() == 0) {
    out.degenerate = true;
    return out;
  }
  const Eigen::MatrixXd m = contrast * cov * contrast.transpose();
  const Eigen::VectorXd c = contrast * loc;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  const double tol = top * 1e-10 * static_cast<double>(ev.size());
  double q = 0.0;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) > tol && ev(i) > 0.0) {
      const double proj = eig.eigenvectors().col(i).dot(c);
      q += proj * proj / ev(i);
      ++rank;
    }
  }
  if (rank == 0) {
    out.degenerate = true;
    return out;
  }
  out.statistic = q;
  out.df = rank;
  out.degenerate = rank < static_cast<std::size_t>(contrast.rows());
  boost::math::chi_squared_distribution<double> chi(static_cast<double>(rank));
  out.ccp = boost::math::cdf(boost::math::complement(chi, q));
  return out;
}

Interval hpd_interval(const NormalParams& n, double level) {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::domain, "HPD level must lie in (0, 1)");
  if (!(n.var > 0.0)) fail(ErrorCode::domain, "normal variance must be positive");
  const boost::math::normal_distribution<double> std_normal;
  const double z = boost::math::quantile(std_normal, 0.5 * (1.0 + level));
  const double sd = std::sqrt(n.var);
  return {n.loc - z * sd, n.loc + z * sd};
}

Interval hpd_interval(const GammaParams& g, double level) {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::domain, "HPD level must lie in (0, 1)");
  if (!(g.shape > 0.0 && g.rate > 0.0)) fail(ErrorCode::domain, "invalid gamma parameters");
  const boost::math::gamma_distribution<double> dist(g.shape, 1.0 / g.rate);
  if (g.shape <= 1.0) return {0.0, boost::math::quantile(dist, level)};
  // Width as a function of the lower tail mass is unimodal for a unimodal
  // density; Brent's method finds its minimum.
  auto width = [&](double p) {
    if (p + level >= 1.0) return std::numeric_limits<double>::infinity();
    return boost::math::quantile(dist, p + level) -
           (p > 0.0 ? boost::math::quantile(dist, p) : 0.0);
  };
  const auto best = boost::math::tools::brent_find_minima(width, 0.0, 1.0 - level, 40);
  const double p = best.first;
  return {p > 0.0 ? boost::math::quantile(dist, p) : 0.0, boost::math::quantile(dist, p + level)};
}

Vec topic_polarity(const VariationalState& s) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const auto V = static_cast<Eigen::Index>(s.num_terms);
  const auto A = static_cast<Eigen::Index>(s.num_authors);
  Vec out(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto c = s.pcol(static_cast<std::size_t>(k));
    double ex = 0.0, ex2 = 0.0, ey = 0.0, ey2 = 0.0;
    for (Eigen::Index v = 0; v < V; ++v) {
      const double x = s.eta.loc(k, v);
      ex += x;
      ex2 += x * x;
    }
    for (Eigen::Index a = 0; a < A; ++a) {
      const double y = s.positions.loc(a, c);
      ey += y;
      ey2 += y * y;
    }
    ex /= static_cast<double>(V);
    ex2 /= static_cast<double>(V);
    ey /= static_cast<double>(A);
    ey2 /= static_cast<double>(A);
    out(k) = std::max(0.0, ex2 * ey2 - (ex * ey) * (ex * ey));
  }
  return out;
}

Mat author_topic_weights(const VariationalState& s, const DocTermMatrix& m) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const auto A = static_cast<Eigen::Index>(s.num_authors);
  Mat w = Mat::Zero(A, K);
  std::vector<std::size_t> n(A, 0);
  for (std::size_t d = 0; d < m.num_docs; ++d) {
    const auto a = m.doc_author[d];
    ++n[a];
    for (Eigen::Index k = 0; k < K; ++k) w(a, k) += s.theta.mean(static_cast<Eigen::Index>(d), k);
  }
  for (Eigen::Index a = 0; a < A; ++a) {
    if (n[a] == 0) {
      fail(ErrorCode::invalid_argument,
           "author " + std::to_string(m.author_labels[a]) + " has no documents");
    }
    w.row(a) /= static_cast<double>(n[a]);
  }
  return w;
}

Vec weighted_average_positions(const VariationalState& s, const Mat& weights) {
  const auto A = static_cast<Eigen::Index>(s.num_authors);
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  if (weights.rows() != A || weights.cols() != K) {
    fail(ErrorCode::invalid_argument, "weights do not match the state");
  }
  Vec out(A);
  for (Eigen::Index a = 0; a < A; ++a) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      num += weights(a, k) * s.positions.loc(a, s.pcol(static_cast<std::size_t>(k)));
      den += weights(a, k);
    }
    out(a) = num / den;
  }
  return out;
}

double corrected_log_intensity(const VariationalState& s, std::size_t k, std::size_t v,
                               double ideology) {
  const auto kk = static_cast<Eigen::Index>(k);
  const auto vv = static_cast<Eigen::Index>(v);
  double value = s.beta.elog(kk, vv);
  if (ideology != 0.0) value += ideology * s.eta.loc(kk, vv);
  return value;
}

std::vector<double> corrected_log_intensities(const VariationalState& s, std::size_t k,
                                              double ideology) {
  if (k >= s.num_topics) fail(ErrorCode::invalid_argument, "topic index out of range");
  std::vector<double> vals(s.num_terms);
  for (std::size_t v = 0; v < s.num_terms; ++v) vals[v] = corrected_log_intensity(s, k, v, ideology);
  const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
  const double shift = -*lo + 0.05 * (*hi - *lo);
  for (double& x : vals) x += shift;
  return vals;
}

std::vector<std::size_t> top_terms(const VariationalState& s, std::size_t k, double ideology,
                                   std::size_t n) {
  const auto vals = corrected_log_intensities(s, k, ideology);
  std::vector<std::size_t> idx(vals.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t keep = std::min(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return vals[a] != vals[b] ? vals[a] > vals[b] : a < b;
                    });
  idx.resize(keep);
  return idx;
}

double influence_statistic(const VariationalState& s, const DocTermMatrix& m, std::size_t d,
                           std::size_t k, bool* clamped) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const auto V = static_cast<Eigen::Index>(s.num_terms);
  const auto dd = static_cast<Eigen::Index>(d);
  const auto kk = static_cast<Eigen::Index>(k);
  const auto a = m.doc_author[d];
  const auto terms = m.terms(d);
  const auto counts = m.doc_counts(d);
  bool flag = false;

  std::vector<double> theta(K);
  for (Eigen::Index j = 0; j < K; ++j) theta[j] = s.theta.mean(dd, j);

  double chi = 0.0;
  std::size_t next = 0;
  for (Eigen::Index v = 0; v < V; ++v) {
    const double e = std::exp(s.positions.loc(a, s.pcol(k)) * s.eta.loc(kk, v));
    const double dif = theta[kk] * s.beta.mean(kk, v) * (1.0 - e);
    chi += dif;
    if (next < terms.size() && terms[next] == v) {
      double lam1 = 0.0;
      for (Eigen::Index j = 0; j < K; ++j) {
        lam1 += theta[j] * s.beta.mean(j, v) *
                std::exp(s.positions.loc(a, s.pcol(static_cast<std::size_t>(j))) *
                         s.eta.loc(j, v));
      }
      double lam0 = lam1 + dif;
      if (!(lam0 > 1e-12)) {
        lam0 = 1e-12;
        flag = true;
      }
      chi += static_cast<double>(counts[next]) * std::log(lam1 / lam0);
      ++next;
    }
  }
  if (clamped != nullptr) *clamped = flag;
  return 2.0 * chi;
}

std::vector<InfluentialDoc> influential_docs(const VariationalState& s, const DocTermMatrix& m,
                                             std::size_t k, std::size_t pool_size,
                                             std::size_t top_n) {
  if (k >= s.num_topics) fail(ErrorCode::invalid_argument, "topic index out of range");
  if (top_n < 1 || pool_size < top_n) {
    fail(ErrorCode::invalid_argument, "influential_docs requires pool_size >= top_n >= 1");
  }
  const auto kk = static_cast<Eigen::Index>(k);
  std::vector<std::size_t> docs(m.num_docs);
  std::iota(docs.begin(), docs.end(), 0);
  const std::size_t pool = std::min(pool_size, docs.size());
  std::partial_sort(docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(pool), docs.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double ta = s.theta.mean(static_cast<Eigen::Index>(a), kk);
                      const double tb = s.theta.mean(static_cast<Eigen::Index>(b), kk);
                      return ta != tb ? ta > tb : a < b;
                    });
  docs.resize(pool);

  std::vector<InfluentialDoc> out;
  out.reserve(pool);
  for (auto d : docs) {
    bool clamped = false;
    const double chi = influence_statistic(s, m, d, k, &clamped);
    out.push_back({d, chi, clamped});
  }
  std::stable_sort(out.begin(), out.end(), [](const InfluentialDoc& a, const InfluentialDoc& b) {
    return a.chi != b.chi ? a.chi > b.chi : a.doc < b.doc;
  });
  out.resize(std::min(top_n, out.size()));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

bool column_is_zero(const DesignMatrix& design, std::size_t l) {
  return (design.x.col(static_cast<Eigen::Index>(l)).array() == 0.0).all();
}

GroupRow group_test(const VariationalState& s, const Eigen::MatrixXd& cov, std::size_t c,
                    const std::string& name, const std::vector<std::size_t>& columns,
                    const DesignMatrix& design) {
  std::vector<std::size_t> kept;
  for (auto l : columns) {
    if (!column_is_zero(design, l)) kept.push_back(l);
  }
  const auto L = static_cast<Eigen::Index>(s.num_covariates);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kept.size()), L);
  for (std::size_t r = 0; r < kept.size(); ++r) C(static_cast<Eigen::Index>(r), kept[r]) = 1.0;
  const Eigen::VectorXd loc = s.iota_loc.row(static_cast<Eigen::Index>(c)).transpose();
  GroupRow row{c, name, kept, ccp_joint(C, loc, cov), ""};
  row.stars = star_label(row.test.ccp);
  return row;
}

}  // namespace

RegressionSummary regression_summary(const VariationalState& s, const DesignMatrix& design,
                                     const std::optional<std::string>& main_covariate,
                                     std::size_t bins) {
  const auto L = static_cast<Eigen::Index>(s.num_covariates);
  const auto A = static_cast<Eigen::Index>(s.num_authors);
  const std::size_t Kp = s.position_cols();
  if (design.x.cols() != L || design.x.rows() != A) {
    fail(ErrorCode::invalid_argument, "design matrix does not match the state");
  }
  if (bins < 1) fail(ErrorCode::invalid_argument, "histogram needs at least one bin");
  const CovariateColumn* main = nullptr;
  if (main_covariate) {
    if (!design.covariates.has_column(*main_covariate)) {
      fail(ErrorCode::invalid_argument, "unknown covariate '" + *main_covariate + "'");
    }
    main = &design.covariates.column(*main_covariate);
  }

  RegressionSummary out;
  const Eigen::MatrixXd cov = s.iota_cov();
  std::vector<std::size_t> col_count(static_cast<std::size_t>(L));
  for (Eigen::Index l = 0; l < L; ++l) {
    col_count[l] = static_cast<std::size_t>((design.x.col(l).array() != 0.0).count());
  }

  std::vector<std::size_t> interaction_cols;
  for (const auto& [name, cols] : design.term_groups) {
    if (name.find(':') != std::string::npos) {
      interaction_cols.insert(interaction_cols.end(), cols.begin(), cols.end());
    }
  }
  std::sort(interaction_cols.begin(), interaction_cols.end());

  for (std::size_t c = 0; c < Kp; ++c) {
    for (Eigen::Index l = 0; l < L; ++l) {
      const double est = s.iota_loc(static_cast<Eigen::Index>(c), l);
      const double se = std::sqrt(std::max(cov(l, l), 0.0));
      const double ccp = se > 0.0 ? ccp_scalar(est, se) : 1.0;
      out.coefficients.push_back({c, static_cast<std::size_t>(l),
                                  design.column_names.empty() ? std::to_string(l)
                                                              : design.column_names[l],
                                  est, se, ccp, star_label(ccp), col_count[l]});
    }
    for (const auto& [name, cols] : design.term_groups) {
      out.groups.push_back(group_test(s, cov, c, name, cols, design));
    }
    if (!interaction_cols.empty()) {
      out.groups.push_back(
          group_test(s, cov, c, kAllInteractionsGroup, interaction_cols, design));
    }

    // Histogram of estimated positions, optionally split by the main covariate.
    std::vector<double> pos(static_cast<std::size_t>(A));
    for (Eigen::Index a = 0; a < A; ++a) pos[a] = s.positions.loc(a, static_cast<Eigen::Index>(c));
    const auto [lo_it, hi_it] = std::minmax_element(pos.begin(), pos.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
    std::vector<std::string> labels;
    if (main != nullptr) {
      labels = main->labels;
    } else {
      labels.assign(pos.size(), "all");
    }
    std::vector<std::string> groups = labels;
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    for (const auto& g : groups) {
      std::vector<std::size_t> counts(bins, 0);
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t a = 0; a < pos.size(); ++a) {
        if (labels[a] != g) continue;
        auto b = hi > lo ? static_cast<std::size_t>((pos[a] - lo) / width) : 0;
        b = std::min(b, bins - 1);
        ++counts[b];
        sum += pos[a];
        ++n;
      }
      for (std::size_t b = 0; b < bins; ++b) {
        out.histogram.push_back({c, b, lo + width * static_cast<double>(b),
                                 lo + width * static_cast<double>(b + 1), g, counts[b]});
      }
      out.group_means.push_back({c, g, sum / static_cast<double>(n), n});
    }
  }

  for (const auto& col : design.covariates.columns) {
    std::map<std::string, std::size_t> counts;
    for (const auto& l : col.labels) ++counts[l];
    for (const auto& [label, n] : counts) out.categories.push_back({col.name, label, n});
  }
  return out;
}

}  // namespace stbs
