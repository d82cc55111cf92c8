#pragma once

// Summaries of a fitted state: point estimates, HPD intervals, CCPs, polarity,
// weighted positions, ideology-corrected term rankings, influential documents
// and regression tables.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stbs/corpus.hpp"
#include "stbs/model.hpp"

namespace stbs {

struct PosteriorMeans {
  Mat theta, btheta, beta, bbeta, rho, brho, prec, omega, bomega;
  Mat eta, positions;
  Mat iota;  // Kp x L
  Vec iotadot;
};

PosteriorMeans posterior_means(const VariationalState& s);

/// Probability mass outside the symmetric normal HPD region that touches 0.
double ccp_scalar(double loc, double sd);
/// "***", "**", "*", "." for CCP below 0.001, 0.01, 0.05, 0.1; blank otherwise.
std::string star_label(double ccp);

struct JointCcp {
  double ccp = 1.0;
  double statistic = 0.0;  // quadratic form q
  std::size_t df = 0;
  bool degenerate = false;
};

/// Chi-square test of C * loc = 0 under covariance `cov`. Degrees of freedom
/// are the numerical rank of C cov C^T; rank zero gives CCP 1, degenerate.
JointCcp ccp_joint(const Eigen::MatrixXd& contrast, const Eigen::VectorXd& loc,
                   const Eigen::MatrixXd& cov);

struct Interval {
  double lo;
  double hi;
};

Interval hpd_interval(const NormalParams& n, double level);
/// Shortest interval of the given mass; starts at 0 when shape <= 1.
Interval hpd_interval(const GammaParams& g, double level);

/// Per topic, the population variance of eta_loc[k, v] * position_loc[a, k]
/// over all (a, v) pairs.
Vec topic_polarity(const VariationalState& s);

/// w(a, k) = mean of E[theta_dk] over the documents of author a.
Mat author_topic_weights(const VariationalState& s, const DocTermMatrix& m);
/// sum_k w_ak position_ak / sum_k w_ak.
Vec weighted_average_positions(const VariationalState& s, const Mat& weights);

/// psi(shape) - log(rate) + ideology * eta_loc for term v in topic k.
double corrected_log_intensity(const VariationalState& s, std::size_t k, std::size_t v,
                               double ideology);
/// All terms of topic k, shifted by -min + 5% of the range.
std::vector<double> corrected_log_intensities(const VariationalState& s, std::size_t k,
                                              double ideology);
/// Indices of the n largest corrected intensities, descending (ties by index).
std::vector<std::size_t> top_terms(const VariationalState& s, std::size_t k, double ideology,
                                   std::size_t n = 10);

struct InfluentialDoc {
  std::size_t doc;
  double chi;
  bool clamped;  // a baseline intensity had to be clamped
};

/// Among the `pool_size` documents with the largest E[theta_dk], the `top_n`
/// with the largest likelihood-ratio statistic chi_dk.
std::vector<InfluentialDoc> influential_docs(const VariationalState& s, const DocTermMatrix& m,
                                             std::size_t k, std::size_t pool_size,
                                             std::size_t top_n);
/// chi_dk for one document.
double influence_statistic(const VariationalState& s, const DocTermMatrix& m, std::size_t d,
                           std::size_t k, bool* clamped = nullptr);

// ---------------------------------------------------------------------------

struct CoefficientRow {
  std::size_t topic;
  std::size_t column;
  std::string name;
  double estimate;
  double se;
  double ccp;
  std::string stars;
  std::size_t count;  // authors with a 1 in this column
};

struct GroupRow {
  std::size_t topic;
  std::string group;
  std::vector<std::size_t> columns;  // columns kept in the test
  JointCcp test;
  std::string stars;
};

struct HistogramRow {
  std::size_t topic;
  std::size_t bin;
  double lo, hi;
  std::string group;  // label of the main covariate, or "all"
  std::size_t count;
};

struct GroupMeanRow {
  std::size_t topic;
  std::string group;
  double mean;
  std::size_t count;
};

struct CategoryCount {
  std::string covariate;
  std::string label;
  std::size_t count;
};

struct RegressionSummary {
  std::vector<CoefficientRow> coefficients;
  std::vector<GroupRow> groups;
  std::vector<HistogramRow> histogram;
  std::vector<GroupMeanRow> group_means;
  std::vector<CategoryCount> categories;
};

/// Name of the joint test that drops every interaction column at once.
inline constexpr const char* kAllInteractionsGroup = "(all interactions)";

RegressionSummary regression_summary(const VariationalState& s, const DesignMatrix& design,
                                     const std::optional<std::string>& main_covariate,
                                     std::size_t bins = 20);

}  // namespace stbs
