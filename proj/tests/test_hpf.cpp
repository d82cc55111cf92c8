#include <cmath>

#include <doctest.h>

#include "stbs/hpf.hpp"
#include "support.hpp"

using namespace stbs;
using namespace stbs::testing;
using doctest::Approx;

namespace {

double poisson_deviance(const DocTermMatrix& m, const Mat& mean) {
  double dev = 0.0;
  for (std::size_t d = 0; d < m.num_docs; ++d) {
    const auto t = m.terms(d);
    const auto c = m.doc_counts(d);
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double y = static_cast<double>(c[j]);
      dev += y * std::log(y / mean(static_cast<Eigen::Index>(d), t[j]));
    }
  }
  dev -= static_cast<double>(m.total());
  dev += mean.sum();
  return 2.0 * dev;
}

Fixture hpf_data(std::size_t D, std::size_t V, std::size_t K, std::uint64_t seed) {
  SynthOverrides o;
  o.eta = Mat::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(V));
  return simulated(D, V, K, 10, seed, "~ 1", &o);
}

}  // namespace

TEST_CASE("single topic, single document") {
  const auto m = toy_matrix({{0, 0, 5}}, {0});
  const Hyperparams h;
  auto s = hpf_initial_state(m, 1, h, 1);
  hpf_sweep(s, m, h);
  CHECK(s.theta.shp(0, 0) == Approx(5.3).epsilon(1e-12));
}

TEST_CASE("objective never decreases") {
  const auto f = hpf_data(60, 40, 3, 8);
  const auto res = fit_hpf(f.sim.corpus, 3, Hyperparams{}, 150, 2);
  REQUIRE(res.elbo_trace.size() == 150);
  for (std::size_t i = 1; i < res.elbo_trace.size(); ++i) {
    REQUIRE(res.elbo_trace[i] >= res.elbo_trace[i - 1] - 1e-6 * std::fabs(res.elbo_trace[i - 1]));
  }
}

TEST_CASE("fit beats the rank-one baseline") {
  const auto f = hpf_data(200, 100, 3, 21);
  const auto& m = f.sim.corpus;
  const auto res = fit_hpf(m, 3, Hyperparams{}, 200, 3);
  const Mat fitted = res.state.theta.means() * res.state.beta.means();

  Vec rows = Vec::Zero(static_cast<Eigen::Index>(m.num_docs));
  Vec cols = Vec::Zero(static_cast<Eigen::Index>(m.num_terms));
  for (std::size_t d = 0; d < m.num_docs; ++d) {
    const auto t = m.terms(d);
    const auto c = m.doc_counts(d);
    for (std::size_t j = 0; j < t.size(); ++j) {
      rows(static_cast<Eigen::Index>(d)) += static_cast<double>(c[j]);
      cols(t[j]) += static_cast<double>(c[j]);
    }
  }
  const Mat baseline = rows * cols.transpose() / static_cast<double>(m.total());
  CHECK(poisson_deviance(m, fitted) < poisson_deviance(m, baseline));
}

TEST_CASE("converged sweeps reach a fixed point") {
  const auto f = hpf_data(30, 20, 2, 5);
  const auto& m = f.sim.corpus;
  const Hyperparams h;
  auto res = fit_hpf(m, 2, h, 3000, 4);
  auto s = res.state;
  hpf_sweep(s, m, h);
  auto rel = [](const Mat& a, const Mat& b) {
    return ((a - b).cwiseAbs().array() / b.cwiseAbs().array()).maxCoeff();
  };
  CHECK(rel(s.theta.shp, res.state.theta.shp) < 1e-8);
  CHECK(rel(s.theta.rte, res.state.theta.rte) < 1e-8);
  CHECK(rel(s.beta.rte, res.state.beta.rte) < 1e-8);
  CHECK(rel(s.btheta.rte, res.state.btheta.rte) < 1e-8);
  CHECK(rel(s.bbeta.rte, res.state.bbeta.rte) < 1e-8);
}

TEST_CASE("matches a term-by-term objective") {
  // 2 documents x 2 terms, one topic, one author.
  const auto m = toy_matrix({{0, 0, 2}, {0, 1, 1}, {1, 1, 4}}, {0, 0});
  const Hyperparams h;
  auto s = hpf_initial_state(m, 1, h, 9);
  hpf_sweep(s, m, h);

  auto elog = [](double shp, double rte) { return digamma(shp) - std::log(rte); };
  // E_q log Gamma(x; a, b) with independent random x and b.
  auto prior = [&](double a, double elog_b, double eb, double shp, double rte) {
    return a * elog_b - std::lgamma(a) + (a - 1.0) * elog(shp, rte) - eb * shp / rte;
  };
  double expected = 0.0;
  const double ys[2][2] = {{2, 1}, {0, 4}};
  for (int d = 0; d < 2; ++d) {
    for (int v = 0; v < 2; ++v) {
      const double y = ys[d][v];
      const double el = elog(s.theta.shp(d, 0), s.theta.rte(d, 0)) +
                        elog(s.beta.shp(0, v), s.beta.rte(0, v));
      expected += y * el - std::lgamma(y + 1.0) - s.theta.mean(d, 0) * s.beta.mean(0, v);
    }
  }
  const double eb_theta = s.btheta.mean(0);
  const double elog_btheta = elog(s.btheta.shp(0, 0), s.btheta.rte(0, 0));
  for (int d = 0; d < 2; ++d) {
    expected += prior(h.a_theta, elog_btheta, eb_theta, s.theta.shp(d, 0), s.theta.rte(d, 0));
    expected += gamma_entropy(s.theta.at(d, 0));
  }
  const double rt = h.a_theta_prime / h.b_theta_prime;
  expected += prior(h.a_theta_prime, std::log(rt), rt, s.btheta.shp(0, 0), s.btheta.rte(0, 0));
  expected += gamma_entropy(s.btheta.at(0));
  const double rb = h.a_beta_prime / h.b_beta_prime;
  for (int v = 0; v < 2; ++v) {
    expected += prior(h.a_beta, elog(s.bbeta.shp(v, 0), s.bbeta.rte(v, 0)), s.bbeta.mean(v),
                      s.beta.shp(0, v), s.beta.rte(0, v));
    expected += gamma_entropy(s.beta.at(0, v));
    expected += prior(h.a_beta_prime, std::log(rb), rb, s.bbeta.shp(v, 0), s.bbeta.rte(v, 0));
    expected += gamma_entropy(s.bbeta.at(v));
  }
  CHECK(hpf_elbo(s, m, h) == Approx(expected).epsilon(1e-10));
}

TEST_CASE("seeded start") {
  const auto f = hpf_data(20, 15, 2, 6);
  const Hyperparams h;
  const auto a = hpf_initial_state(f.sim.corpus, 2, h, 3);
  const auto b = hpf_initial_state(f.sim.corpus, 2, h, 3);
  const auto c = hpf_initial_state(f.sim.corpus, 2, h, 4);
  CHECK(a.theta.shp == b.theta.shp);
  CHECK(a.theta.shp != c.theta.shp);
  const double ratio = (a.theta.shp.array() / h.a_theta).maxCoeff();
  CHECK(ratio <= 1.1);
  CHECK((a.theta.shp.array() / h.a_theta).minCoeff() >= 0.9);
}
