#pragma once

// Hierarchical Poisson factorization, fitted by full-batch coordinate ascent.
// Used to initialize the topic and intensity blocks of the full model.

#include <cstdint>
#include <vector>

#include "stbs/inference.hpp"

namespace stbs {

struct HpfResult {
  /// Only the theta, btheta, beta and bbeta blocks (and the dimensions) are set.
  VariationalState state;
  /// Exact objective after every sweep.
  std::vector<double> elbo_trace;
};

/// Runs `iters` sweeps of the shared CAVI updates with the ideological factor
/// pinned to 1. Starting values are the prior means with +-10% seeded jitter.
HpfResult fit_hpf(const DocTermMatrix& m, std::size_t num_topics, const Hyperparams& h,
                  std::size_t iters, std::uint64_t seed, std::size_t threads = 1);

/// Starting state used by fit_hpf.
VariationalState hpf_initial_state(const DocTermMatrix& m, std::size_t num_topics,
                                   const Hyperparams& h, std::uint64_t seed);

/// One full sweep: allocation, theta, btheta, beta, bbeta.
void hpf_sweep(VariationalState& s, const DocTermMatrix& m, const Hyperparams& h,
               std::size_t threads = 1);

/// Exact objective of the factorization model.
double hpf_elbo(const VariationalState& s, const DocTermMatrix& m, const Hyperparams& h,
                std::size_t threads = 1);

}  // namespace stbs
