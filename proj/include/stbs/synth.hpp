#pragma once

// Corpora drawn from the generative model, with the ground truth kept for
// recovery checks.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stbs/corpus.hpp"
#include "stbs/model.hpp"

namespace stbs {

struct GroundTruth {
  Mat theta;      // D x K
  Mat beta;       // K x V
  Mat eta;        // K x V
  Mat positions;  // A x K
  Mat iota;       // K x L
  Vec prec;       // A
  Vec btheta;     // A
  Vec bbeta;      // V
  Vec rho;        // K
  Vec brho;       // K
  Vec iotadot;    // L
  Vec omega;      // L
  Vec bomega;     // L
  std::vector<std::uint32_t> doc_author;
  std::uint64_t seed = 0;
};

/// Blocks to hold fixed instead of drawing them. Children of a pinned block
/// are still drawn from the pinned values.
struct SynthOverrides {
  std::optional<Vec> bomega, omega, iotadot, prec, btheta, bbeta, brho, rho;
  std::optional<Mat> iota, positions, eta, theta, beta;
  std::optional<std::vector<std::uint32_t>> doc_author;
};

/// Tame settings for test corpora: theta and beta rates pinned so both have
/// mean one, precision 4 for eta, unit precision for coefficients, and the
/// given residual precision for positions.
SynthOverrides moderate_overrides(std::size_t A, std::size_t V, std::size_t K, std::size_t L,
                                  const Hyperparams& h, double residual_precision = 16.0);

/// Default hyperparameters except a beta shape of one. With the default
/// shape of 0.3 about a third of the term rates sit near zero, and eta is
/// not identified there.
Hyperparams moderate_hyperparams();

/// Sum_k theta_dk beta_kv exp(eta_kv * position_ak).
double truth_intensity(const GroundTruth& t, std::size_t d, std::size_t v);

struct SynthResult {
  DocTermMatrix corpus;
  GroundTruth truth;
};

/// Ancestral sampling through the full hierarchy. Documents go to authors
/// round-robin unless overridden. Throws "degenerate draw" if an intensity
/// exceeds 1e9.
SynthResult generate(const Hyperparams& h, std::size_t D, std::size_t V, std::size_t K,
                     std::size_t A, const DesignMatrix& design, std::uint64_t seed,
                     const SynthOverrides& overrides = {});

/// Two categorical covariates for simulated authors: "group" (levels a, b,
/// alternating) and "noise" (levels x, y, in pairs), with baselines a and x.
CovariateTable simulated_covariates(std::size_t A);
void write_covariates(const CovariateTable& table, const std::vector<std::int64_t>& author_labels,
                      const std::filesystem::path& path);

std::string truth_to_string(const GroundTruth& t);
GroundTruth truth_from_string(const std::string& text);
void save_truth(const GroundTruth& t, const std::filesystem::path& path);
GroundTruth load_truth(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

/// Pearson correlation; empty when either side has zero variance.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

struct RecoveryReport {
  /// topic_match[k] = true topic matched to fitted topic k.
  std::vector<std::size_t> topic_match;
  /// Per fitted topic, +1 or -1 (always +1 when anchors were used).
  std::vector<int> topic_sign;
  std::optional<double> position_corr;
  std::optional<double> eta_corr;
  std::optional<double> eta_sign_agreement;  // over |true eta| > 0.5
  std::vector<std::optional<double>> iota_corr;  // per covariate column
  double iota_rmse = 0.0;
};

/// Compares a fitted model with the truth; the model's author and term
/// labels index the truth arrays. Topics are matched by the correlation of
/// beta rows. Without anchors each topic's sign is chosen to agree with the
/// truth; with anchors no flipping happens.
RecoveryReport recovery_metrics(const GroundTruth& truth, const Model& model, bool anchored);

std::string format_metric(const std::optional<double>& v);

}  // namespace stbs
