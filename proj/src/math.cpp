#include "stbs/math.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "stbs/error.hpp"

namespace stbs {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    fail(ErrorCode::domain, "digamma: argument must be positive and finite");
  }
  double shift = 0.0;
  while (x < 6.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Asymptotic series in 1/x^2 with Bernoulli-number coefficients.
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 -
                                               inv2 * (691.0 / 32760.0 -
                                                       inv2 * (1.0 / 12.0)))))));
  return shift + std::log(x) - 0.5 * inv - series;
}

double log_gamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    fail(ErrorCode::domain, "log_gamma: argument must be positive and finite");
  }
  double prod = 1.0;
  while (x < 7.0) {
    prod *= x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv * (1.0 / 12.0 -
             inv2 * (1.0 / 360.0 -
                     inv2 * (1.0 / 1260.0 -
                             inv2 * (1.0 / 1680.0 -
                                     inv2 * (1.0 / 1188.0 -
                                             inv2 * (691.0 / 360360.0 -
                                                     inv2 * (1.0 / 156.0)))))));
  return (x - 0.5) * std::log(x) - x + 0.5 * kLog2Pi + series - std::log(prod);
}

double expected_ideological_term(const NormalParams& eta, const NormalParams& pos) {
  const double vv = eta.var * pos.var;
  if (!(vv < 1.0)) {
    fail(ErrorCode::domain,
         "expected_ideological_term: variance product >= 1, expectation is infinite");
  }
  const double denom = 1.0 - vv;
  const double num = eta.loc * eta.loc * pos.var + 2.0 * eta.loc * pos.loc +
                     pos.loc * pos.loc * eta.var;
  return std::exp(0.5 * num / denom) / std::sqrt(denom);
}

double geometric_ideological_term(const NormalParams& eta, const NormalParams& pos) {
  return std::exp(eta.loc * pos.loc);
}

double gamma_entropy(const GammaParams& g) {
  return g.shape - std::log(g.rate) + log_gamma(g.shape) +
         (1.0 - g.shape) * digamma(g.shape);
}

double normal_entropy(const NormalParams& n) {
  return 0.5 * (kLog2Pi + 1.0 + std::log(n.var));
}

double mvn_entropy(const MvnParams& m) {
  const auto dim = static_cast<double>(m.loc.size());
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < m.chol.rows(); ++i) logdet += std::log(m.chol(i, i));
  return 0.5 * dim * (kLog2Pi + 1.0) + logdet;
}

double poisson_logpmf(double y, double lambda) {
  if (!(lambda > 0.0) || y < 0.0) {
    fail(ErrorCode::domain, "poisson_logpmf: requires lambda > 0 and y >= 0");
  }
  return y * std::log(lambda) - lambda - log_gamma(y + 1.0);
}

double gamma_logpdf(double x, double shape, double rate) {
  if (!(x > 0.0) || !(shape > 0.0) || !(rate > 0.0)) {
    fail(ErrorCode::domain, "gamma_logpdf: requires x, shape, rate > 0");
  }
  return shape * std::log(rate) - log_gamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

double normal_logpdf(double x, double mean, double var) {
  if (!(var > 0.0)) fail(ErrorCode::domain, "normal_logpdf: requires var > 0");
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                  const Eigen::MatrixXd& chol) {
  const Eigen::VectorXd r =
      chol.triangularView<Eigen::Lower>().solve(Eigen::VectorXd(x - mean));
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < chol.rows(); ++i) {
    if (!(chol(i, i) > 0.0)) fail(ErrorCode::domain, "mvn_logpdf: invalid Cholesky factor");
    logdet += std::log(chol(i, i));
  }
  return -0.5 * static_cast<double>(x.size()) * kLog2Pi - logdet - 0.5 * r.squaredNorm();
}

// ---------------------------------------------------------------------------

double Rng::uniform() {
  // 53 random bits mapped onto (0, 1); zero is excluded.
  for (;;) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    if (u > 0.0) return u;
  }
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  for (;;) {
    const std::uint64_t r = engine_();
    if (r < limit) return r % n;
  }
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

Rng Rng::deserialize(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng.engine_;
  if (is.fail()) fail(ErrorCode::schema, "corrupt RNG state");
  return rng;
}

double sample_gamma(const GammaParams& g, Rng& rng) {
  if (!(g.shape > 0.0) || !(g.rate > 0.0)) {
    fail(ErrorCode::domain, "sample_gamma: requires shape, rate > 0");
  }
  // Marsaglia-Tsang squeeze; shapes below one are boosted by u^(1/shape).
  const bool boost = g.shape < 1.0;
  const double a = boost ? g.shape + 1.0 : g.shape;
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  double x = 0.0;
  for (;;) {
    double z = 0.0;
    double v = 0.0;
    do {
      z = rng.normal();
      v = 1.0 + c * z;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * z * z * z * z) {
      x = d * v;
      break;
    }
    if (std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v))) {
      x = d * v;
      break;
    }
  }
  if (boost) x *= std::pow(rng.uniform(), 1.0 / g.shape);
  return x / g.rate;
}

std::int64_t sample_poisson(double lambda, Rng& rng) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    fail(ErrorCode::domain, "sample_poisson: requires finite lambda >= 0");
  }
  if (lambda == 0.0) return 0;
  if (lambda < 10.0) {
    const double limit = std::exp(-lambda);
    std::int64_t k = 0;
    double p = rng.uniform();
    while (p > limit) {
      ++k;
      p *= rng.uniform();
    }
    return k;
  }
  // Transformed rejection with squeeze (Hormann's PTRS).
  const double slam = std::sqrt(lambda);
  const double loglam = std::log(lambda);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = rng.uniform() - 0.5;
    const double v = rng.uniform();
    const double us = 0.5 - std::fabs(u);
    const double kd = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<std::int64_t>(kd);
    if (kd < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
        -lambda + kd * loglam - log_gamma(kd + 1.0)) {
      return static_cast<std::int64_t>(kd);
    }
  }
}

Eigen::VectorXd sample_mvn(const MvnParams& m, const Eigen::VectorXd& z) {
  return m.loc + m.chol.triangularView<Eigen::Lower>() * z;
}

double step_size(std::uint64_t t, double delay, double exponent) {
  if (!(exponent > 0.5 && exponent <= 1.0)) {
    fail(ErrorCode::config, "step_size: exponent must lie in (0.5, 1]");
  }
  if (!(delay >= 0.0)) fail(ErrorCode::config, "step_size: delay must be >= 0");
  if (t < 1) fail(ErrorCode::config, "step_size: step counter must be >= 1");
  return std::pow(static_cast<double>(t) + delay, -exponent);
}

}  // namespace stbs
