#pragma once

// Hybrid coordinate-ascent / stochastic-gradient variational inference.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stbs/corpus.hpp"
#include "stbs/model.hpp"

namespace stbs {

/// How the ideological factor exp(eta * position) enters expectations.
/// `off` pins it to 1 (plain hierarchical Poisson factorization).
enum class FactorMode { exact, geometric, off };

FactorMode factor_mode(const FitConfig& cfg);

/// A subset of documents plus the stochastic scale D / |B|.
struct Batch {
  std::vector<std::uint32_t> docs;  // increasing
  double scale = 1.0;

  static Batch full(const DocTermMatrix& m);
  static Batch of(const DocTermMatrix& m, std::vector<std::uint32_t> docs);
};

/// Multinomial allocation of each nonzero count over topics. Row r of `phi`
/// belongs to the r-th nonzero of the batch, visiting documents in batch order.
struct AllocationProbs {
  std::vector<std::uint32_t> docs;
  std::vector<std::size_t> offsets;  // size docs.size() + 1, rows into phi
  Mat phi;                           // nnz_in_batch x K
};

AllocationProbs allocation_probs(const VariationalState& s, const DocTermMatrix& m,
                                 const Batch& batch, FactorMode mode, std::size_t threads = 1);

/// E[exp(eta_kv * position_ak)] under `mode`.
double ideological_factor(const VariationalState& s, std::size_t a, std::size_t k, std::size_t v,
                          FactorMode mode);

// ---------------------------------------------------------------------------
// CAVI block updates. Local theta is written into the state; every global
// update returns a proposal that the caller blends with the current value.

void update_local_theta(VariationalState& s, const DocTermMatrix& m, const Batch& batch,
                        const AllocationProbs& alloc, const Hyperparams& h, FactorMode mode,
                        std::size_t threads = 1);

GammaArray propose_doc_rates(const VariationalState& s, const DocTermMatrix& m,
                             const Batch& batch, const Hyperparams& h);
GammaArray propose_beta(const VariationalState& s, const DocTermMatrix& m, const Batch& batch,
                        const AllocationProbs& alloc, const Hyperparams& h, FactorMode mode,
                        std::size_t threads = 1);
GammaArray propose_word_rates(const VariationalState& s, const Hyperparams& h);
GammaArray propose_eta_precisions(const VariationalState& s, const Hyperparams& h);
GammaArray propose_eta_precision_rates(const VariationalState& s, const Hyperparams& h);

struct RegressionProposal {
  Mat loc;             // Kp x L
  Eigen::MatrixXd cov;  // L x L, shared by every topic
};
RegressionProposal propose_regression(const VariationalState& s, const DesignMatrix& design);

struct CenterProposal {
  Vec loc, var;
};
CenterProposal propose_regression_centers(const VariationalState& s);
GammaArray propose_residual_precisions(const VariationalState& s, const DesignMatrix& design,
                                       const Hyperparams& h);
GammaArray propose_coef_precisions(const VariationalState& s, const Hyperparams& h);
GammaArray propose_coef_precision_rates(const VariationalState& s, const Hyperparams& h);

/// rho * proposal + (1 - rho) * current, in (shape, rate) coordinates.
void blend_global(GammaArray& current, const GammaArray& proposal, double rho);
/// Blends locations and the covariance, then refactors the covariance.
void blend_global(VariationalState& s, const RegressionProposal& proposal, double rho);
void blend_global(VariationalState& s, const CenterProposal& proposal, double rho);

/// The ten global blocks in update order.
enum class GlobalBlock {
  doc_rates,
  beta,
  word_rates,
  eta_precisions,
  eta_precision_rates,
  regression,
  regression_centers,
  residual_precisions,
  coef_precisions,
  coef_precision_rates,
};
inline constexpr GlobalBlock kGlobalOrder[] = {
    GlobalBlock::doc_rates,         GlobalBlock::beta,
    GlobalBlock::word_rates,        GlobalBlock::eta_precisions,
    GlobalBlock::eta_precision_rates, GlobalBlock::regression,
    GlobalBlock::regression_centers, GlobalBlock::residual_precisions,
    GlobalBlock::coef_precisions,   GlobalBlock::coef_precision_rates,
};
std::string to_string(GlobalBlock b);

/// Computes one block's proposal and blends it in.
void apply_global_update(VariationalState& s, GlobalBlock block, const DocTermMatrix& m,
                         const DesignMatrix& design, const Batch& batch,
                         const AllocationProbs& alloc, const Hyperparams& h, FactorMode mode,
                         double rho, std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Exact objective.

struct ElboTerms {
  double reconstruction = 0.0;
  double log_prior = 0.0;
  double entropy = 0.0;
  double total() const { return reconstruction + log_prior + entropy; }
};

/// Closed-form ELBO over the whole corpus. Counts enter through the auxiliary
/// multinomial bound: with `fixed_alloc` (covering every document) that
/// allocation is used, otherwise the optimal one. With mode `off` only the
/// theta/beta hierarchy contributes.
ElboTerms exact_elbo(const VariationalState& s, const DocTermMatrix& m,
                     const DesignMatrix& design, const Hyperparams& h, FactorMode mode,
                     const AllocationProbs* fixed_alloc = nullptr, std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Monte-Carlo objective and reparameterization gradients.

/// Standard-normal draws for every eta and position entry, one set per sample.
struct NoiseDraws {
  std::vector<Mat> eta;  // K x V each
  std::vector<Mat> pos;  // A x Kp each
};
NoiseDraws draw_noise(const VariationalState& s, std::size_t samples, Rng& rng);

struct McElbo {
  double reconstruction = 0.0;
  double log_prior = 0.0;
  double entropy = 0.0;
  std::map<std::string, double> terms;
  double total() const { return reconstruction + log_prior + entropy; }
};

/// Gradients with respect to the unconstrained parameters (loc, uvar).
struct Gradients {
  Mat eta_loc, eta_uvar, pos_loc, pos_uvar;
};

McElbo mc_elbo(const VariationalState& s, const DocTermMatrix& m, const DesignMatrix& design,
               const Hyperparams& h, const Batch& batch, const NoiseDraws& z,
               std::size_t threads = 1);
Gradients reparam_gradients(const VariationalState& s, const DocTermMatrix& m,
                            const DesignMatrix& design, const Hyperparams& h,
                            const Batch& batch, const NoiseDraws& z, std::size_t threads = 1);
/// Both at once, sharing the forward pass.
McElbo mc_elbo_with_gradients(const VariationalState& s, const DocTermMatrix& m,
                              const DesignMatrix& design, const Hyperparams& h,
                              const Batch& batch, const NoiseDraws& z, Gradients* grads,
                              std::size_t threads = 1);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One Adam ascent step; updates `m` and `v` and returns the increment.
Mat adam_step(Mat& m, Mat& v, const Mat& grad, double lr, std::uint64_t t);

// ---------------------------------------------------------------------------

/// Builds the starting state. `anchors` maps author labels to initial
/// positions and must cover every author.
VariationalState init_state(const DocTermMatrix& m, const DesignMatrix& design,
                            const VariationalState& hpf,
                            const std::map<std::int64_t, double>& anchors,
                            const FitConfig& cfg, const Hyperparams& h);

struct FitProgress {
  std::size_t epoch;
  std::uint64_t step;
  double elbo;
};

struct FitOptions {
  /// Called after every epoch with the last ELBO value.
  std::function<void(const FitProgress&)> on_epoch;
  /// Called with the model when a checkpoint is due or before aborting on a
  /// non-finite state.
  std::function<void(const Model&, const std::string& reason)> on_checkpoint;
};

/// Runs `model.config.epochs` further epochs, starting from model.state.
/// Appends one ELBO value per batch to model.elbo_trace.
void fit(Model& model, const DocTermMatrix& m, const FitOptions& opts = {});

/// One batch step of the algorithm (exposed for tests).
double fit_batch_step(Model& model, const DocTermMatrix& m, const Batch& batch, Rng& rng);

/// Random partition of [0, D) into ceil(D / batch_size) batches.
std::vector<Batch> partition_batches(const DocTermMatrix& m, std::size_t batch_size, Rng& rng);

}  // namespace stbs
