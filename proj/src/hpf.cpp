#include "stbs/hpf.hpp"

#include <cmath>

#include "stbs/error.hpp"

namespace stbs {

namespace {

// Decorrelates the jitter stream from the one used by init_state.
constexpr std::uint64_t kSeedSalt = 0x9E3779B97F4A7C15ULL;

GammaArray jittered(Eigen::Index rows, Eigen::Index cols, double shape, double rate, Rng& rng) {
  GammaArray g(rows, cols, shape, rate);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      g.shp(i, j) *= 0.9 + 0.2 * rng.uniform();
      g.rte(i, j) *= 0.9 + 0.2 * rng.uniform();
    }
  }
  return g;
}

}  // namespace

VariationalState hpf_initial_state(const DocTermMatrix& m, std::size_t num_topics,
                                   const Hyperparams& h, std::uint64_t seed) {
  if (num_topics < 1) fail(ErrorCode::config, "number of topics must be >= 1");
  h.validate();
  m.validate();
  VariationalState s;
  s.num_docs = m.num_docs;
  s.num_terms = m.num_terms;
  s.num_topics = num_topics;
  s.num_authors = m.num_authors;
  const auto D = static_cast<Eigen::Index>(m.num_docs);
  const auto V = static_cast<Eigen::Index>(m.num_terms);
  const auto A = static_cast<Eigen::Index>(m.num_authors);
  const auto K = static_cast<Eigen::Index>(num_topics);

  Rng rng(seed ^ kSeedSalt);
  // The rate of theta (beta) is set to the prior mean of its own rate variable.
  s.theta = jittered(D, K, h.a_theta, h.b_theta_prime, rng);
  s.btheta = jittered(A, 1, h.a_theta_prime, h.a_theta_prime / h.b_theta_prime, rng);
  s.beta = jittered(K, V, h.a_beta, h.b_beta_prime, rng);
  s.bbeta = jittered(V, 1, h.a_beta_prime, h.a_beta_prime / h.b_beta_prime, rng);
  return s;
}

void hpf_sweep(VariationalState& s, const DocTermMatrix& m, const Hyperparams& h,
               std::size_t threads) {
  const Batch all = Batch::full(m);
  const DesignMatrix none;
  const AllocationProbs alloc = allocation_probs(s, m, all, FactorMode::off, threads);
  update_local_theta(s, m, all, alloc, h, FactorMode::off, threads);
  for (GlobalBlock b : {GlobalBlock::doc_rates, GlobalBlock::beta, GlobalBlock::word_rates}) {
    apply_global_update(s, b, m, none, all, alloc, h, FactorMode::off, 1.0, threads);
  }
}

double hpf_elbo(const VariationalState& s, const DocTermMatrix& m, const Hyperparams& h,
                std::size_t threads) {
  return exact_elbo(s, m, DesignMatrix{}, h, FactorMode::off, nullptr, threads).total();
}

HpfResult fit_hpf(const DocTermMatrix& m, std::size_t num_topics, const Hyperparams& h,
                  std::size_t iters, std::uint64_t seed, std::size_t threads) {
  if (iters < 1) fail(ErrorCode::config, "HPF iterations must be >= 1");
  HpfResult out;
  out.state = hpf_initial_state(m, num_topics, h, seed);
  out.elbo_trace.reserve(iters);
  for (std::size_t it = 0; it < iters; ++it) {
    hpf_sweep(out.state, m, h, threads);
    const double elbo = hpf_elbo(out.state, m, h, threads);
    if (!std::isfinite(elbo)) {
      fail(ErrorCode::numeric, "HPF objective became non-finite at iteration " +
                                   std::to_string(it + 1));
    }
    out.elbo_trace.push_back(elbo);
  }
  return out;
}

}  // namespace stbs
