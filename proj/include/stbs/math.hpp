#pragma once

// Scalar kernels shared by inference and post-processing.

#include <cstdint>
#include <random>
#include <span>
#include <string>

#include <Eigen/Dense>

namespace stbs {

struct GammaParams {
  double shape;
  double rate;

  double mean() const { return shape / rate; }
};

struct NormalParams {
  double loc;
  double var;
};

/// Multivariate normal with covariance chol * chol^T.
struct MvnParams {
  Eigen::VectorXd loc;
  Eigen::MatrixXd chol;
};

// ---------------------------------------------------------------------------
// Special functions. Local implementations (recurrence + asymptotic series)
// so results are identical across platforms and standard libraries.

double digamma(double x);
double log_gamma(double x);

/// E[log X] for X ~ Gamma(shape, rate).
inline double expected_log(const GammaParams& g);

// ---------------------------------------------------------------------------
// Ideological factor E[exp(X*Y)] for independent normals X and Y.

/// Closed form of E[exp(XY)]. Throws a domain error when var_x * var_y >= 1,
/// where the expectation is infinite.
double expected_ideological_term(const NormalParams& eta, const NormalParams& pos);

/// exp(E[X] E[Y]); the plug-in approximation of the above.
double geometric_ideological_term(const NormalParams& eta, const NormalParams& pos);

// ---------------------------------------------------------------------------
// Entropies and log densities.

double gamma_entropy(const GammaParams& g);
double normal_entropy(const NormalParams& n);
double mvn_entropy(const MvnParams& m);

double poisson_logpmf(double y, double lambda);
double gamma_logpdf(double x, double shape, double rate);
double normal_logpdf(double x, double mean, double var);
double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                  const Eigen::MatrixXd& chol);

// ---------------------------------------------------------------------------
// Random numbers. All sampling goes through Rng so that the complete stream
// position can be saved into and restored from a model-state file.

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::string serialize() const;
  static Rng deserialize(const std::string& s);

  bool operator==(const Rng& o) const { return engine_ == o.engine_; }

 private:
  std::mt19937_64 engine_;
};

double sample_gamma(const GammaParams& g, Rng& rng);
std::int64_t sample_poisson(double lambda, Rng& rng);

/// loc + sqrt(var) * z: the reparameterization map for a normal draw.
inline double sample_normal_reparam(const NormalParams& n, double z);
Eigen::VectorXd sample_mvn(const MvnParams& m, const Eigen::VectorXd& z);

// ---------------------------------------------------------------------------
// Step-size schedule (t + delay)^(-exponent). Requires exponent in (0.5, 1].
double step_size(std::uint64_t t, double delay, double exponent);

// ---------------------------------------------------------------------------
// Bijectors.

inline double sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

inline double inverse_softplus(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}

// ---------------------------------------------------------------------------
// inline definitions

inline double expected_log(const GammaParams& g) {
  return digamma(g.shape) - std::log(g.rate);
}

inline double sample_normal_reparam(const NormalParams& n, double z) {
  return n.loc + std::sqrt(n.var) * z;
}

}  // namespace stbs
