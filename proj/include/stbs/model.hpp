#pragma once

// Hyperparameters, run configuration and the complete variational state.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stbs/corpus.hpp"
#include "stbs/math.hpp"

namespace stbs {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Fixed prior constants. Primes are spelled `_prime`, squared kappas `_sq`.
struct Hyperparams {
  double a_theta = 0.3;
  double a_theta_prime = 0.3;
  double b_theta_prime = 0.3;
  double a_beta = 0.3;
  double a_beta_prime = 0.3;
  double b_beta_prime = 0.3;
  double a_rho = 0.3;
  double a_rho_prime = 0.3;
  double kappa_rho_sq = 10.0;
  double a_omega = 0.3;
  double a_omega_prime = 0.3;
  double kappa_omega_sq = 10.0;
  double a_prec = 0.3;  // a_I
  double b_prec = 0.3;  // b_I

  /// Rate of the top-level gamma prior on b_rho (and b_omega).
  double b_rho_prior_rate() const { return 0.5 * kappa_rho_sq * a_rho_prime / a_rho; }
  double b_omega_prior_rate() const { return 0.5 * kappa_omega_sq * a_omega_prime / a_omega; }

  void validate() const;
};

enum class ExpectationMode { exact, geometric };
enum class PositionMode { topic_specific, fixed_across_topics };

struct FitConfig {
  std::size_t num_topics = 25;
  std::size_t epochs = 1000;
  std::size_t batch_size = 512;
  std::size_t mc_samples = 1;
  double kappa = 0.51;  // step-size exponent
  double tau = 0.0;     // step-size delay
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  ExpectationMode expectation_mode = ExpectationMode::exact;
  PositionMode position_mode = PositionMode::topic_specific;
  std::size_t hpf_iters = 200;
  std::size_t threads = 1;
  std::size_t checkpoint_every = 0;  // batches; 0 disables
  /// Keep eta and the ideological positions at their current values. The
  /// ELBO trace then records the exact (closed-form) objective.
  bool freeze_ideology = false;

  void validate() const;
};

std::string to_string(ExpectationMode m);
std::string to_string(PositionMode m);
ExpectationMode parse_expectation_mode(const std::string& s);
PositionMode parse_position_mode(const std::string& s);

/// Gamma variational parameters for an array of variables.
struct GammaArray {
  Mat shp;
  Mat rte;

  GammaArray() = default;
  GammaArray(Eigen::Index rows, Eigen::Index cols, double shape, double rate)
      : shp(Mat::Constant(rows, cols, shape)), rte(Mat::Constant(rows, cols, rate)) {}

  double mean(Eigen::Index i, Eigen::Index j = 0) const { return shp(i, j) / rte(i, j); }
  double elog(Eigen::Index i, Eigen::Index j = 0) const {
    return digamma(shp(i, j)) - std::log(rte(i, j));
  }
  GammaParams at(Eigen::Index i, Eigen::Index j = 0) const { return {shp(i, j), rte(i, j)}; }
  Mat means() const { return shp.cwiseQuotient(rte); }
};

/// Normal variational parameters with variance restricted to (0, 1). The
/// variance is stored unconstrained and mapped through the logistic sigmoid.
struct BoundedNormalArray {
  Mat loc;
  Mat uvar;

  double var(Eigen::Index i, Eigen::Index j) const { return sigmoid(uvar(i, j)); }
  NormalParams at(Eigen::Index i, Eigen::Index j) const { return {loc(i, j), var(i, j)}; }
};

struct AdamMoments {
  Mat m_eta_loc, v_eta_loc, m_eta_uvar, v_eta_uvar;
  Mat m_pos_loc, v_pos_loc, m_pos_uvar, v_pos_uvar;

  void reset(Eigen::Index K, Eigen::Index V, Eigen::Index A, Eigen::Index Kp);
};

/// Every variational parameter plus optimizer bookkeeping.
///
/// Shapes: theta D x K, btheta A x 1, beta K x V, bbeta V x 1, eta K x V,
/// rho/brho K x 1, positions A x Kp, prec A x 1, iota_loc Kp x L, iota_chol
/// L x L (one covariance shared by all topics), iotadot L, omega/bomega L x 1.
/// Kp is K for topic-specific positions and 1 for fixed positions.
struct VariationalState {
  std::size_t num_docs = 0, num_terms = 0, num_topics = 0, num_authors = 0,
              num_covariates = 0;
  PositionMode position_mode = PositionMode::topic_specific;

  GammaArray theta, btheta, beta, bbeta, rho, brho, prec, omega, bomega;
  BoundedNormalArray eta, positions;
  Mat iota_loc;
  Eigen::MatrixXd iota_chol;
  Vec iotadot_loc, iotadot_var;

  AdamMoments adam;
  std::uint64_t step = 0;
  std::string rng_state;

  /// Number of position columns (K or 1).
  std::size_t position_cols() const {
    return position_mode == PositionMode::topic_specific ? num_topics : 1;
  }
  /// Position column used by topic k.
  Eigen::Index pcol(std::size_t k) const {
    return position_mode == PositionMode::topic_specific ? static_cast<Eigen::Index>(k) : 0;
  }
  Eigen::MatrixXd iota_cov() const { return iota_chol * iota_chol.transpose(); }

  /// Throws if any block has the wrong shape or leaves its valid domain.
  void validate() const;
  bool all_finite() const;
};

/// Everything needed to continue or summarize a fit.
struct Model {
  Hyperparams hyper;
  FitConfig config;
  DesignMatrix design;
  VariationalState state;
  std::vector<double> elbo_trace;

  std::vector<std::int64_t> doc_labels, term_labels, author_labels;
  std::vector<std::string> vocab;
};

/// Versioned JSON document (schema key `stbs_state_v1`).
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
std::string model_to_string(const Model& model);
Model model_from_string(const std::string& text);

/// Run configuration: flat JSON object with every FitConfig and Hyperparams
/// field plus an optional "baselines" object. Unknown keys are an error.
struct RunConfig {
  Hyperparams hyper;
  FitConfig fit;
  std::map<std::string, std::string> baselines;
};

RunConfig load_run_config(const std::filesystem::path& path);
/// Applies one key/value pair (value given as text). Throws on unknown keys.
void set_run_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string run_config_to_string(const RunConfig& cfg);

}  // namespace stbs
