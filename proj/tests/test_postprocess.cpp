#include <algorithm>
#include <cmath>

#include <boost/math/distributions/gamma.hpp>
#include <doctest.h>

#include "stbs/error.hpp"
#include "stbs/postprocess.hpp"
#include "support.hpp"

using namespace stbs;
using namespace stbs::testing;
using doctest::Approx;

namespace {

VariationalState state_for(const DocTermMatrix& m, const DesignMatrix& design, std::size_t K,
                           PositionMode mode = PositionMode::topic_specific) {
  const Hyperparams h;
  FitConfig cfg;
  cfg.num_topics = K;
  cfg.position_mode = mode;
  return init_state(m, design, hpf_initial_state(m, K, h, 1), zero_anchors(m), cfg, h);
}

// chi for one document and topic, evaluated straight from the definition.
double chi_direct(const VariationalState& s, const DocTermMatrix& m, std::size_t d,
                  std::size_t k, bool kl_form) {
  const auto K = static_cast<Eigen::Index>(s.num_topics);
  const auto a = m.doc_author[d];
  std::vector<double> y(s.num_terms, 0.0);
  const auto terms = m.terms(d);
  const auto counts = m.doc_counts(d);
  for (std::size_t i = 0; i < terms.size(); ++i) y[terms[i]] = counts[i];
  double chi = 0.0;
  for (std::size_t v = 0; v < s.num_terms; ++v) {
    const auto vv = static_cast<Eigen::Index>(v);
    double lam1 = 0.0;
    for (Eigen::Index j = 0; j < K; ++j) {
      lam1 += s.theta.mean(d, j) * s.beta.mean(j, vv) *
              std::exp(s.positions.loc(a, j) * s.eta.loc(j, vv));
    }
    const auto kk = static_cast<Eigen::Index>(k);
    const double dif = s.theta.mean(d, kk) * s.beta.mean(kk, vv) *
                       (1.0 - std::exp(s.positions.loc(a, kk) * s.eta.loc(kk, vv)));
    const double weight = kl_form ? lam1 : y[v];
    if (weight > 0.0) chi += weight * std::log(lam1 / (lam1 + dif));
    chi += dif;
  }
  return 2.0 * chi;
}

}  // namespace

TEST_CASE("posterior means") {
  const auto m = toy_matrix({{0, 0, 1}, {1, 1, 2}}, {0, 1});
  auto s = state_for(m, DesignMatrix::intercept_only(2), 2);
  s.theta.shp(0, 0) = 2.0;
  s.theta.rte(0, 0) = 4.0;
  s.eta.loc(1, 0) = -1.3;
  const auto p = posterior_means(s);
  CHECK(p.theta(0, 0) == 0.5);
  CHECK(p.eta(1, 0) == -1.3);
  CHECK(p.theta.rows() == 2);
  CHECK(p.beta.cols() == 2);
  CHECK(p.positions.rows() == 2);
  CHECK(p.iota.rows() == 2);
  CHECK(p.iotadot.size() == 1);
}

TEST_CASE("scalar credible-region probability") {
  CHECK(ccp_scalar(0.0, 1.0) == 1.0);
  CHECK(star_label(1.0).empty());
  CHECK(ccp_scalar(1.959964 * 0.3, 0.3) == Approx(0.05).epsilon(1e-6));
  CHECK(std::fabs(ccp_scalar(1.959964, 1.0) - 0.05) < 1e-6);
  CHECK(ccp_scalar(-10.0, 1.0) < 1e-21);
  CHECK_THROWS_AS(ccp_scalar(1.0, 0.0), Error);

  CHECK(star_label(0.05) == "·");
  CHECK(star_label(0.0499) == "*");
  CHECK(star_label(0.01) == "*");
  CHECK(star_label(0.0099) == "**");
  CHECK(star_label(0.001) == "**");
  CHECK(star_label(0.0009) == "***");
  CHECK(star_label(0.1).empty());

  double prev = 2.0;
  for (double z = 0.0; z < 8.0; z += 0.1) {
    const double c = ccp_scalar(z, 1.0);
    CHECK(c < prev);
    prev = c;
  }
}

TEST_CASE("joint credible-region probability") {
  const Eigen::MatrixXd I2 = Eigen::MatrixXd::Identity(2, 2);
  const auto j = ccp_joint(I2, Eigen::Vector2d(1.0, 1.0), I2);
  CHECK(j.statistic == Approx(2.0));
  CHECK(j.df == 2);
  CHECK(std::fabs(j.ccp - std::exp(-1.0)) < 1e-6);
  CHECK_FALSE(j.degenerate);

  const auto zero = ccp_joint(I2, Eigen::Vector2d::Zero(), I2);
  CHECK(zero.ccp == Approx(1.0));

  Eigen::MatrixXd cov(3, 3);
  cov << 2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5;
  const Eigen::Vector3d loc(0.4, -1.1, 0.7);
  Eigen::MatrixXd row = Eigen::MatrixXd::Zero(1, 3);
  row(0, 1) = 1.0;
  CHECK(ccp_joint(row, loc, cov).ccp == Approx(ccp_scalar(-1.1, 1.0)).epsilon(1e-10));

  double prev = 2.0;
  for (double t = 0.0; t < 5.0; t += 0.25) {
    const double c = ccp_joint(I2, Eigen::Vector2d(t, 0.5 * t), I2).ccp;
    CHECK(c < prev);
    prev = c;
  }

  // Rank deficiency: two identical rows.
  Eigen::MatrixXd dup = Eigen::MatrixXd::Zero(2, 3);
  dup(0, 0) = dup(1, 0) = 1.0;
  const auto d = ccp_joint(dup, loc, cov);
  CHECK(d.degenerate);
  CHECK(d.df == 1);
  CHECK(ccp_joint(Eigen::MatrixXd::Zero(2, 3), loc, cov).ccp == 1.0);
  CHECK(ccp_joint(Eigen::MatrixXd(0, 3), loc, cov).degenerate);
  CHECK_THROWS_AS(ccp_joint(I2, loc, cov), Error);
}

TEST_CASE("highest posterior density intervals") {
  const auto n = hpd_interval(NormalParams{0.0, 1.0}, 0.95);
  CHECK(n.lo == Approx(-1.959964).epsilon(1e-6));
  CHECK(n.hi == Approx(1.959964).epsilon(1e-6));
  CHECK_THROWS_AS(hpd_interval(NormalParams{0.0, 1.0}, 1.0), Error);

  const auto e = hpd_interval(GammaParams{1.0, 1.0}, 0.95);
  CHECK(e.lo == 0.0);
  CHECK(e.hi == Approx(-std::log(0.05)).epsilon(1e-9));

  Rng rng(21);
  for (const GammaParams g : {GammaParams{3.0, 2.0}, GammaParams{1.5, 0.4}, GammaParams{0.5, 1.0}}) {
    const auto iv = hpd_interval(g, 0.9);
    const boost::math::gamma_distribution<double> dist(g.shape, 1.0 / g.rate);
    CHECK(boost::math::cdf(dist, iv.hi) - boost::math::cdf(dist, iv.lo) ==
          Approx(0.9).epsilon(1e-6));
    if (g.shape > 1.0) {
      // Equal density at both ends, and shorter than the equal-tailed interval.
      CHECK(boost::math::pdf(dist, iv.lo) == Approx(boost::math::pdf(dist, iv.hi)).epsilon(1e-4));
      CHECK(iv.hi - iv.lo < boost::math::quantile(dist, 0.95) - boost::math::quantile(dist, 0.05));
    }
    std::size_t inside = 0;
    constexpr std::size_t draws = 1'000'000;
    for (std::size_t i = 0; i < draws; ++i) {
      const double x = sample_gamma(g, rng);
      inside += (x >= iv.lo && x <= iv.hi) ? 1 : 0;
    }
    CHECK(static_cast<double>(inside) / draws == Approx(0.9).epsilon(0.003));
  }
}

TEST_CASE("topic polarity") {
  const auto m = toy_matrix({{0, 0, 1}, {1, 1, 1}}, {0, 1});
  auto s = state_for(m, DesignMatrix::intercept_only(2), 1);
  s.eta.loc << 1.0, -1.0;
  s.positions.loc << 1.0, 0.0;
  CHECK(topic_polarity(s)(0) == Approx(0.5));

  s.positions.loc.setZero();
  CHECK(topic_polarity(s)(0) == 0.0);

  const auto m1 = toy_matrix({{0, 0, 1}}, {0});
  auto s1 = state_for(m1, DesignMatrix::intercept_only(1), 1);
  s1.eta.loc << 0.7;
  s1.positions.loc << -1.4;
  CHECK(topic_polarity(s1)(0) == Approx(0.0).epsilon(1e-15));

  // Direct enumeration and the joint sign flip on a random three-topic state.
  auto f = simulated(20, 15, 3, 6, 4);
  auto r = state_for(f.sim.corpus, f.design, 3);
  r.eta.loc.setRandom();
  r.positions.loc.setRandom();
  const Vec pol = topic_polarity(r);
  for (Eigen::Index k = 0; k < 3; ++k) {
    std::vector<double> prods;
    for (Eigen::Index a = 0; a < r.positions.loc.rows(); ++a) {
      for (Eigen::Index v = 0; v < r.eta.loc.cols(); ++v) {
        prods.push_back(r.eta.loc(k, v) * r.positions.loc(a, k));
      }
    }
    double mean = 0.0, var = 0.0;
    for (double p : prods) mean += p;
    mean /= prods.size();
    for (double p : prods) var += (p - mean) * (p - mean);
    CHECK(pol(k) == Approx(var / prods.size()).epsilon(1e-12));
  }
  r.eta.loc.row(1) *= -1.0;
  r.positions.loc.col(1) *= -1.0;
  CHECK(topic_polarity(r)(1) == Approx(pol(1)).epsilon(1e-14));
}

TEST_CASE("author weights and weighted positions") {
  // Author 0 writes documents 0 and 1, author 1 writes document 2.
  const auto m = toy_matrix({{0, 0, 1}, {1, 1, 1}, {2, 0, 2}}, {0, 0, 1});
  auto s = state_for(m, DesignMatrix::intercept_only(2), 2);
  s.theta.shp << 1.0, 3.0, 2.0, 1.0, 4.0, 4.0;
  s.theta.rte << 1.0, 1.0, 2.0, 4.0, 1.0, 2.0;
  const Mat w = author_topic_weights(s, m);
  CHECK(w(0, 0) == Approx((1.0 + 1.0) / 2));
  CHECK(w(0, 1) == Approx((3.0 + 0.25) / 2));
  CHECK(w(1, 0) == Approx(4.0));
  CHECK(w(1, 1) == Approx(2.0));

  s.positions.loc << 0.4, -1.0, 2.0, 0.5;
  const Vec avg = weighted_average_positions(s, w);
  CHECK(avg(0) == Approx((1.0 * 0.4 + 1.625 * -1.0) / 2.625));
  CHECK(avg(1) == Approx((4.0 * 2.0 + 2.0 * 0.5) / 6.0));

  const Mat uniform = Mat::Ones(2, 2);
  CHECK(weighted_average_positions(s, uniform)(0) == Approx(-0.3));

  CHECK_THROWS_AS(weighted_average_positions(s, Mat::Ones(3, 2)), Error);

  auto f = simulated(30, 12, 3, 5, 6);
  auto r = state_for(f.sim.corpus, f.design, 3);
  r.positions.loc.setRandom();
  const Vec ra = weighted_average_positions(r, author_topic_weights(r, f.sim.corpus));
  for (Eigen::Index a = 0; a < ra.size(); ++a) {
    CHECK(ra(a) >= r.positions.loc.row(a).minCoeff() - 1e-12);
    CHECK(ra(a) <= r.positions.loc.row(a).maxCoeff() + 1e-12);
  }
}

TEST_CASE("ideology-corrected intensities") {
  const auto m = toy_matrix({{0, 0, 1}, {0, 1, 1}, {0, 2, 1}}, {0});
  auto s = state_for(m, DesignMatrix::intercept_only(1), 1);
  s.beta.shp << 1.0, 2.0, 0.5;
  s.beta.rte << 1.0, 1.0, 3.0;
  s.eta.loc << 0.0, 0.5, -2.0;
  CHECK(corrected_log_intensity(s, 0, 0, 0.0) == Approx(-0.5772157).epsilon(1e-7));
  CHECK(corrected_log_intensity(s, 0, 1, 1.0) == Approx(0.9227843).epsilon(1e-7));

  const auto vals = corrected_log_intensities(s, 0, -1.0);
  std::vector<double> raw;
  for (std::size_t v = 0; v < 3; ++v) raw.push_back(corrected_log_intensity(s, 0, v, -1.0));
  const double lo = *std::min_element(raw.begin(), raw.end());
  const double hi = *std::max_element(raw.begin(), raw.end());
  CHECK(*std::min_element(vals.begin(), vals.end()) == Approx(0.05 * (hi - lo)));

  std::vector<std::size_t> by_raw = {0, 1, 2};
  std::sort(by_raw.begin(), by_raw.end(), [&](auto a, auto b) { return raw[a] > raw[b]; });
  CHECK(top_terms(s, 0, -1.0, 3) == by_raw);
  CHECK(top_terms(s, 0, -1.0, 1).size() == 1);
  CHECK(top_terms(s, 0, 1.0, 10).size() == 3);

  const auto neutral = top_terms(s, 0, 0.0, 3);
  s.eta.loc << 9.0, -4.0, 3.0;
  CHECK(top_terms(s, 0, 0.0, 3) == neutral);
  CHECK_THROWS_AS(top_terms(s, 1, 0.0), Error);
}

TEST_CASE("influential documents") {
  auto f = simulated(25, 12, 2, 5, 19);
  const auto& m = f.sim.corpus;
  auto s = state_for(m, f.design, 2);

  SUBCASE("no ideology gives zero") {
    s.positions.loc.setZero();
    s.eta.loc.setRandom();
    for (std::size_t d = 0; d < m.num_docs; ++d) CHECK(influence_statistic(s, m, d, 1) == 0.0);
  }
  SUBCASE("direct evaluation") {
    s.positions.loc = 0.5 * Mat::Random(s.positions.loc.rows(), s.positions.loc.cols());
    s.eta.loc = 0.5 * Mat::Random(s.eta.loc.rows(), s.eta.loc.cols());
    for (std::size_t d = 0; d < m.num_docs; ++d) {
      for (std::size_t k = 0; k < 2; ++k) {
        bool clamped = true;
        const double chi = influence_statistic(s, m, d, k, &clamped);
        CHECK_FALSE(clamped);
        CHECK(chi == Approx(chi_direct(s, m, d, k, false)).epsilon(1e-12));
        CHECK(chi_direct(s, m, d, k, true) >= -1e-12);
      }
    }
    const auto top = influential_docs(s, m, 0, 10, 4);
    REQUIRE(top.size() == 4);
    for (std::size_t i = 1; i < top.size(); ++i) CHECK(top[i - 1].chi >= top[i].chi);
    // Every ranked document comes from the pool of the ten largest E[theta_d0].
    std::vector<double> t;
    for (std::size_t d = 0; d < m.num_docs; ++d) t.push_back(s.theta.mean(d, 0));
    std::vector<double> sorted = t;
    std::sort(sorted.rbegin(), sorted.rend());
    for (const auto& r : top) CHECK(t[r.doc] >= sorted[9]);
    CHECK_THROWS_AS(influential_docs(s, m, 0, 3, 4), Error);
    CHECK_THROWS_AS(influential_docs(s, m, 0, 3, 0), Error);
  }
  SUBCASE("document without counts") {
    auto small = toy_matrix({{0, 0, 1}, {1, 1, 1}}, {0, 0});
    auto t = state_for(small, DesignMatrix::intercept_only(1), 1);
    t.positions.loc << 0.8;
    t.eta.loc << 0.5, -0.25;
    small.doc_offsets = {0, 0, 1};
    small.term_index = {1};
    small.counts = {1};
    double dif = 0.0;
    for (Eigen::Index v = 0; v < 2; ++v) {
      dif += t.theta.mean(0, 0) * t.beta.mean(0, v) * (1.0 - std::exp(0.8 * t.eta.loc(0, v)));
    }
    CHECK(influence_statistic(t, small, 0, 0) == Approx(2.0 * dif).epsilon(1e-12));
  }
}

TEST_CASE("regression summary") {
  SUBCASE("intercept only") {
    const auto m = toy_matrix({{0, 0, 1}, {1, 1, 1}, {2, 0, 1}}, {0, 1, 2});
    const auto design = DesignMatrix::intercept_only(3);
    auto s = state_for(m, design, 2);
    s.positions.loc << -1.0, 0.0, 0.5, 1.0, 2.0, 3.0;
    const auto r = regression_summary(s, design, std::nullopt, 4);
    CHECK(r.coefficients.size() == 2);
    CHECK(r.groups.empty());
    CHECK(r.histogram.size() == 8);
    REQUIRE(r.group_means.size() == 2);
    CHECK(r.group_means[0].mean == Approx(0.5));
    CHECK(r.group_means[1].mean == Approx(4.0 / 3.0));
    std::size_t total = 0;
    for (const auto& h : r.histogram) total += h.topic == 0 ? h.count : 0;
    CHECK(total == 3);
    CHECK(r.coefficients[0].count == 3);
    CHECK(r.coefficients[0].se == Approx(0.1));
  }
  SUBCASE("empty interaction cell") {
    const auto m = toy_matrix({{0, 0, 1}, {1, 0, 1}, {2, 0, 1}, {3, 0, 1}}, {0, 1, 2, 3});
    CovariateTable t;
    t.num_authors = 4;
    t.columns.push_back({"g", {"a", "a", "b", "b"}, "a"});
    t.columns.push_back({"h", {"x", "y", "x", "x"}, "x"});
    const auto design = build_design_matrix(t, "~ g * h");
    auto s = state_for(m, design, 1);
    s.iota_loc.setConstant(0.3);
    const auto r = regression_summary(s, design, std::string("g"));
    bool saw_interaction = false;
    for (const auto& g : r.groups) {
      if (g.group.find(':') != std::string::npos || g.group == kAllInteractionsGroup) {
        saw_interaction = true;
        CHECK(g.test.degenerate);
        CHECK(g.test.ccp == 1.0);
        CHECK(g.stars.empty());
      } else {
        CHECK_FALSE(g.test.degenerate);
      }
    }
    CHECK(saw_interaction);
    CHECK(r.group_means.size() == 2);
    CHECK(r.categories.size() == 4);
    CHECK_THROWS_AS(regression_summary(s, design, std::string("nope")), Error);
  }
  SUBCASE("shared positions") {
    auto f = simulated(20, 10, 3, 6, 2);
    auto s = state_for(f.sim.corpus, f.design, 3, PositionMode::fixed_across_topics);
    const auto r = regression_summary(s, f.design, std::nullopt);
    CHECK(r.coefficients.size() == f.design.num_columns());
  }
}
