#pragma once

// Helpers shared by the update, objective and summary code.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stbs/inference.hpp"

namespace stbs::detail {

/// Authors with at least one document in the batch, increasing.
std::vector<std::uint32_t> batch_authors(const DocTermMatrix& m, const Batch& batch);

/// S(a, k) = sum of E[theta_dk] over batch documents of author a. Rows of
/// absent authors are zero. Summation follows batch order.
Mat author_theta_sums(const VariationalState& s, const DocTermMatrix& m, const Batch& batch);

/// R(a, k) = sum_v E[beta_kv] * E_akv for the listed authors (other rows zero).
Mat author_topic_rates(const VariationalState& s, const Mat& ebeta,
                       const std::vector<std::uint32_t>& authors, FactorMode mode,
                       std::size_t threads);

/// E[log p(x)] for x ~ q = Gamma(g) under a Gamma(shape, rate) prior whose
/// rate has expectation `erate` and expected log `elog_rate`.
inline double gamma_prior_term(double shape, double elog_rate, double erate,
                               const GammaParams& g) {
  return shape * elog_rate - log_gamma(shape) + (shape - 1.0) * expected_log(g) -
         erate * g.mean();
}

/// x_a^T Sigma x_a for the shared regression covariance.
double design_quadratic(const VariationalState& s, const DesignMatrix& design, std::size_t a);

/// Closed-form prior and entropy terms of every block except the priors of
/// eta and positions. theta terms cover `docs` and are multiplied by `scale`.
/// Values are added into `terms` under "prior.*" / "entropy.*" keys.
void closed_form_terms(const VariationalState& s, const DocTermMatrix& m,
                       const DesignMatrix& design,
                       const Hyperparams& h, FactorMode mode,
                       const std::vector<std::uint32_t>& docs, double scale,
                       std::map<std::string, double>& terms);

constexpr double kHalfLog2Pi = 0.91893853320467274178;

}  // namespace stbs::detail
