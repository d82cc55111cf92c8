// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.
//
// Usage: stbs_acceptance [path-to-stbs-cli]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/distributions/normal.hpp>

#include "stbs/error.hpp"
#include "stbs/postprocess.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace stbs;
using namespace stbs::testing;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, x);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. E[exp(XY)] against Monte Carlo.
//
// Y is integrated out exactly given X (normal moment generating function);
// X is drawn from a normal four times wider than its own law and reweighted,
// which keeps the estimator's variance finite for var_x * var_y < 0.875.

Outcome lemma_oracle() {
  std::mt19937_64 gen(20240501);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  constexpr std::size_t kTuples = 50;
  constexpr std::size_t kDraws = 10'000'000;
  constexpr double kWiden = 4.0;
  double worst = 0.0;
  for (std::size_t t = 0; t < kTuples; ++t) {
    const double mx = -1.0 + 2.0 * unif(gen);
    const double my = -1.0 + 2.0 * unif(gen);
    const double vx = 0.05 + 1.45 * unif(gen);
    const double vy = (0.01 + 0.79 * unif(gen)) / vx;
    const double sq = std::sqrt(kWiden * vx);
    double acc = 0.0;
    for (std::size_t i = 0; i < kDraws; ++i) {
      const double z = std_normal(gen);
      const double x = mx + sq * z;
      // log N(x; mx, vx) - log N(x; mx, kWiden vx)
      const double logw = 0.5 * std::log(kWiden) - 0.5 * z * z * (kWiden - 1.0);
      acc += std::exp(logw + my * x + 0.5 * vy * x * x);
    }
    const double mc = acc / static_cast<double>(kDraws);
    const double closed = expected_ideological_term({mx, vx}, {my, vy});
    worst = std::max(worst, std::fabs(closed - mc) / mc);
  }
  bool domain = false;
  try {
    expected_ideological_term({0.1, 2.0}, {0.2, 0.5});
  } catch (const Error& e) {
    domain = e.code() == ErrorCode::domain;
  }
  return {worst < 0.005 && domain,
          "max rel err " + fmt("%.2e", worst) + " (< 5e-3), domain error " +
              (domain ? "raised" : "NOT raised")};
}

// ---------------------------------------------------------------------------
// 2. Reparameterization gradients against central differences.

Outcome gradient_check() {
  auto f = simulated(10, 12, 2, 4, 13);
  const auto& m = f.sim.corpus;
  FitConfig cfg;
  cfg.num_topics = 2;
  cfg.hpf_iters = 20;
  cfg.seed = 3;
  Model model = initial_model(f, cfg, zero_anchors(m));
  const Hyperparams& h = model.hyper;
  Rng rng(99);
  double worst = 0.0;
  constexpr double kStep = 1e-5;
  const Batch batch = Batch::of(m, {0, 2, 3, 5, 8});
  for (int rep = 0; rep < 20; ++rep) {
    auto& s = model.state;
    for (Eigen::Index i = 0; i < s.eta.loc.size(); ++i) {
      s.eta.loc.data()[i] = 0.7 * rng.normal();
      s.eta.uvar.data()[i] = -3.0 + 3.0 * rng.uniform();
    }
    for (Eigen::Index i = 0; i < s.positions.loc.size(); ++i) {
      s.positions.loc.data()[i] = rng.normal();
      s.positions.uvar.data()[i] = -3.0 + 3.0 * rng.uniform();
    }
    for (Eigen::Index i = 0; i < s.iota_loc.size(); ++i) s.iota_loc.data()[i] = 0.5 * rng.normal();
    const NoiseDraws z = draw_noise(s, 2, rng);
    Gradients g;
    mc_elbo_with_gradients(s, m, f.design, h, batch, z, &g);
    auto check = [&](Mat& param, const Mat& grad) {
      for (Eigen::Index i = 0; i < param.size(); ++i) {
        const double orig = param.data()[i];
        param.data()[i] = orig + kStep;
        const double up = mc_elbo(s, m, f.design, h, batch, z).total();
        param.data()[i] = orig - kStep;
        const double down = mc_elbo(s, m, f.design, h, batch, z).total();
        param.data()[i] = orig;
        const double fd = (up - down) / (2.0 * kStep);
        const double an = grad.data()[i];
        const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-2});
        worst = std::max(worst, std::fabs(an - fd) / denom);
      }
    };
    check(s.eta.loc, g.eta_loc);
    check(s.eta.uvar, g.eta_uvar);
    check(s.positions.loc, g.pos_loc);
    check(s.positions.uvar, g.pos_uvar);
  }
  return {worst < 1e-4, "max rel err " + fmt("%.2e", worst) + " over 20 states (< 1e-4)"};
}

// ---------------------------------------------------------------------------
// 3. Full-batch factorization sweeps never lower the objective.

Outcome cavi_monotone() {
  auto f = simulated(50, 40, 3, 5, 21, "~ 1");
  const auto res = fit_hpf(f.sim.corpus, 3, Hyperparams{}, 100, 5);
  double worst = 0.0;
  for (std::size_t i = 1; i < res.elbo_trace.size(); ++i) {
    const double drop = res.elbo_trace[i - 1] - res.elbo_trace[i];
    worst = std::max(worst, drop / std::fabs(res.elbo_trace[i]));
  }
  return {res.elbo_trace.size() == 100 && worst <= 1e-6,
          std::to_string(res.elbo_trace.size()) + " sweeps, worst relative drop " +
              fmt("%.2e", worst) + " (<= 1e-6)"};
}

// ---------------------------------------------------------------------------
// 4. Every global block update lands on a maximum of the objective.

std::vector<VariationalState> block_perturbations(const VariationalState& s, GlobalBlock b) {
  std::vector<VariationalState> out;
  auto gamma = [&](GammaArray VariationalState::*field) {
    for (double f : {1.01, 0.99}) {
      VariationalState p = s;
      (p.*field).rte *= f;
      out.push_back(p);
      p = s;
      (p.*field).shp *= f;
      out.push_back(p);
    }
  };
  switch (b) {
    case GlobalBlock::doc_rates: gamma(&VariationalState::btheta); break;
    case GlobalBlock::beta: gamma(&VariationalState::beta); break;
    case GlobalBlock::word_rates: gamma(&VariationalState::bbeta); break;
    case GlobalBlock::eta_precisions: gamma(&VariationalState::rho); break;
    case GlobalBlock::eta_precision_rates: gamma(&VariationalState::brho); break;
    case GlobalBlock::residual_precisions: gamma(&VariationalState::prec); break;
    case GlobalBlock::coef_precisions: gamma(&VariationalState::omega); break;
    case GlobalBlock::coef_precision_rates: gamma(&VariationalState::bomega); break;
    case GlobalBlock::regression: {
      const Eigen::VectorXd sd = s.iota_cov().diagonal().cwiseSqrt();
      for (double sign : {1.0, -1.0}) {
        VariationalState p = s;
        for (Eigen::Index c = 0; c < p.iota_loc.rows(); ++c) {
          p.iota_loc.row(c) += sign * 0.01 * sd.transpose();
        }
        out.push_back(p);
      }
      for (double f : {1.01, 0.99}) {
        VariationalState p = s;
        p.iota_chol *= std::sqrt(f);
        out.push_back(p);
      }
      break;
    }
    case GlobalBlock::regression_centers: {
      for (double sign : {1.0, -1.0}) {
        VariationalState p = s;
        p.iotadot_loc += sign * 0.01 * s.iotadot_var.cwiseSqrt();
        out.push_back(p);
      }
      for (double f : {1.01, 0.99}) {
        VariationalState p = s;
        p.iotadot_var *= f;
        out.push_back(p);
      }
      break;
    }
  }
  return out;
}

Outcome cavi_optimal() {
  auto f = simulated(8, 10, 2, 3, 31, "~ group");
  const auto& m = f.sim.corpus;
  FitConfig cfg;
  cfg.num_topics = 2;
  cfg.hpf_iters = 30;
  cfg.seed = 8;
  Model model = initial_model(f, cfg, group_anchors(m));
  auto& s = model.state;
  const Hyperparams& h = model.hyper;
  Rng rng(4);
  for (Eigen::Index i = 0; i < s.eta.loc.size(); ++i) s.eta.loc.data()[i] = 0.4 * rng.normal();
  s.eta.uvar.setConstant(logit(0.1));
  s.positions.uvar.setConstant(logit(0.2));
  const FactorMode mode = FactorMode::exact;
  const Batch full = Batch::full(m);
  std::size_t checked = 0, failures = 0;
  double tightest = 1e300;
  for (int round = 0; round < 2; ++round) {
    const auto alloc0 = allocation_probs(s, m, full, mode);
    update_local_theta(s, m, full, alloc0, h, mode);
    for (GlobalBlock b : kGlobalOrder) {
      const auto alloc = allocation_probs(s, m, full, mode);
      apply_global_update(s, b, m, f.design, full, alloc, h, mode, 1.0);
      const double base = exact_elbo(s, m, f.design, h, mode, &alloc).total();
      for (const auto& p : block_perturbations(s, b)) {
        const double val = exact_elbo(p, m, f.design, h, mode, &alloc).total();
        ++checked;
        tightest = std::min(tightest, base - val);
        if (!(val < base)) ++failures;
      }
    }
  }
  return {failures == 0, std::to_string(checked) + " perturbations, " + std::to_string(failures) +
                             " not lower; smallest decrease " + fmt("%.3e", tightest)};
}

// ---------------------------------------------------------------------------
// 5. Minibatch proposals average to the full-batch proposal.

Outcome batch_unbiased() {
  auto f = simulated(4, 9, 2, 2, 42, "~ 1");
  const auto& m = f.sim.corpus;
  if (m.num_docs != 4) return {false, "fixture lost a document"};
  FitConfig cfg;
  cfg.num_topics = 2;
  cfg.hpf_iters = 10;
  Model model = initial_model(f, cfg, zero_anchors(m));
  auto& s = model.state;
  Rng rng(5);
  for (Eigen::Index i = 0; i < s.eta.loc.size(); ++i) s.eta.loc.data()[i] = 0.3 * rng.normal();
  const Hyperparams& h = model.hyper;
  const FactorMode mode = FactorMode::exact;
  const Batch full = Batch::full(m);
  const auto full_alloc = allocation_probs(s, m, full, mode);
  const GammaArray bt = propose_doc_rates(s, m, full, h);
  const GammaArray be = propose_beta(s, m, full, full_alloc, h, mode);

  Mat bt_shp = Mat::Zero(bt.shp.rows(), 1), bt_rte = bt_shp;
  Mat be_shp = Mat::Zero(be.shp.rows(), be.shp.cols()), be_rte = be_shp;
  int n = 0;
  for (std::uint32_t i = 0; i < 4; ++i) {
    for (std::uint32_t j = i + 1; j < 4; ++j) {
      const Batch b = Batch::of(m, {i, j});
      const auto alloc = allocation_probs(s, m, b, mode);
      const GammaArray pt = propose_doc_rates(s, m, b, h);
      const GammaArray pb = propose_beta(s, m, b, alloc, h, mode);
      bt_shp += pt.shp;
      bt_rte += pt.rte;
      be_shp += pb.shp;
      be_rte += pb.rte;
      ++n;
    }
  }
  const double k = 1.0 / n;
  const double err = std::max({(k * bt_shp - bt.shp).cwiseAbs().maxCoeff(),
                               (k * bt_rte - bt.rte).cwiseAbs().maxCoeff(),
                               (k * be_shp - be.shp).cwiseAbs().maxCoeff(),
                               (k * be_rte - be.rte).cwiseAbs().maxCoeff()});
  return {n == 6 && err < 1e-10, std::to_string(n) + " batches, max abs diff " + fmt("%.2e", err)};
}

// ---------------------------------------------------------------------------
// 6. Closed-form shapes and the step size.

Outcome formula_spots() {
  const Hyperparams h;
  std::vector<std::string> bad;
  auto expect = [&](const char* what, double got, double want) {
    if (got != want && std::fabs(got - want) > 1e-12 * std::fabs(want)) {
      bad.push_back(std::string(what) + "=" + fmt("%.15g", got));
    }
  };

  VariationalState s;
  s.num_terms = 5031;
  s.num_topics = 25;
  s.num_authors = 1;
  s.num_covariates = 1;
  s.eta.loc = Mat::Zero(25, 5031);
  s.eta.uvar = Mat::Constant(25, 5031, logit(0.25));
  s.brho = GammaArray(25, 1, 0.3, 0.3);
  s.rho = GammaArray(25, 1, 0.3, 0.3);
  s.beta = GammaArray(25, 5031, 0.3, 0.3);
  s.bbeta = GammaArray(5031, 1, 0.3, 0.3);
  expect("rho shape", propose_eta_precisions(s, h).shp(0, 0), 2515.8);
  expect("b_rho shape", propose_eta_precision_rates(s, h).shp(0, 0), 0.6);
  expect("b_beta shape", propose_word_rates(s, h).shp(0, 0), 7.8);

  VariationalState c;
  c.num_topics = 1;
  c.num_covariates = 1;
  c.position_mode = PositionMode::fixed_across_topics;
  c.iota_loc = Mat::Zero(1, 1);
  c.iota_chol = Eigen::MatrixXd::Identity(1, 1);
  c.omega = GammaArray(1, 1, 2.0, 2.0);  // mean 1
  expect("iotadot var", propose_regression_centers(c).var(0), 0.5);
  expect("step_size(1,0,0.51)", step_size(1, 0.0, 0.51), 1.0);
  std::string detail = bad.empty() ? "2515.8, 0.6, 7.8, 0.5, 1 all exact" : "";
  for (const auto& b : bad) detail += b + " ";
  return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------
// 7. Recovery of positions, polarities and the covariate effect.

Outcome recovery() {
  constexpr std::size_t D = 400, V = 150, K = 3, A = 20;
  SynthOverrides extra;
  Mat iota(K, 3);
  for (std::size_t k = 0; k < K; ++k) iota.row(static_cast<Eigen::Index>(k)) << -1.0, 2.0, 0.0;
  extra.iota = iota;
  auto f = simulated(D, V, K, A, 2024, "~ group + noise", &extra);
  const auto& m = f.sim.corpus;
  FitConfig cfg;
  cfg.num_topics = K;
  cfg.epochs = 50;
  cfg.batch_size = 64;
  cfg.seed = 17;
  Model model = initial_model(f, cfg, group_anchors(m));
  fit(model, m);

  const auto rep = recovery_metrics(f.sim.truth, model, true);
  const auto reg = regression_summary(model.state, model.design, std::nullopt);
  double group_ccp = 0.0, noise_ccp = 1.0;
  for (const auto& g : reg.groups) {
    if (g.group == "group") group_ccp = std::max(group_ccp, g.test.ccp);
    if (g.group == "noise") noise_ccp = std::min(noise_ccp, g.test.ccp);
  }
  const double corr = rep.position_corr.value_or(-1.0);
  const double agree = rep.eta_sign_agreement.value_or(0.0);
  const bool ok = corr > 0.8 && agree > 0.9 && group_ccp < 0.001 && noise_ccp > 0.05;
  return {ok, "position corr " + fmt("%.3f", corr) + " (> 0.8), eta sign agreement " +
                  fmt("%.3f", agree) + " (> 0.9), group CCP max " + fmt("%.2e", group_ccp) +
                  " (< 1e-3), noise CCP min " + fmt("%.3f", noise_ccp) + " (> 0.05)"};
}

// ---------------------------------------------------------------------------
// 8. Topic-constant truth: weighted averages track the true positions.

Outcome congruence() {
  constexpr std::size_t D = 400, V = 150, K = 3, A = 20;
  Rng rng(77);
  Mat pos(A, K);
  for (std::size_t a = 0; a < A; ++a) {
    const double p = (a % 2 == 0 ? -1.0 : 1.0) + 0.5 * rng.normal();
    pos.row(static_cast<Eigen::Index>(a)).setConstant(p);
  }
  SynthOverrides extra;
  extra.positions = pos;
  auto f = simulated(D, V, K, A, 4048, "~ group + noise", &extra);
  const auto& m = f.sim.corpus;
  FitConfig cfg;
  cfg.num_topics = K;
  cfg.epochs = 50;
  cfg.batch_size = 64;
  cfg.seed = 19;
  Model model = initial_model(f, cfg, group_anchors(m));
  fit(model, m);
  const Mat w = author_topic_weights(model.state, m);
  const Vec avg = weighted_average_positions(model.state, w);
  std::vector<double> est, truth;
  for (std::size_t a = 0; a < m.num_authors; ++a) {
    est.push_back(avg(static_cast<Eigen::Index>(a)));
    truth.push_back(pos(m.author_labels[a], 0));
  }
  const double corr = pearson(est, truth).value_or(-1.0);
  return {corr > 0.9, "corr(weighted average, truth) " + fmt("%.3f", corr) + " (> 0.9)"};
}

// ---------------------------------------------------------------------------
// 9. Post-processing closed forms.

Outcome postprocess_exact() {
  std::vector<std::string> bad;
  const double c1 = ccp_scalar(1.959964 * 0.7, 0.7);
  if (std::fabs(c1 - 0.05) > 1e-6) bad.push_back("ccp_scalar " + fmt("%.9f", c1));

  const Eigen::MatrixXd C = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd loc = Eigen::VectorXd::Ones(2);
  const double c2 = ccp_joint(C, loc, Eigen::MatrixXd::Identity(2, 2)).ccp;
  if (std::fabs(c2 - std::exp(-1.0)) > 1e-6) bad.push_back("ccp_joint " + fmt("%.9f", c2));

  auto f = simulated(12, 15, 2, 3, 51, "~ 1");
  FitConfig cfg;
  cfg.num_topics = 2;
  cfg.hpf_iters = 10;
  Model model = initial_model(f, cfg, zero_anchors(f.sim.corpus));
  model.state.positions.loc.setZero();
  double chi_max = 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t d = 0; d < f.sim.corpus.num_docs; ++d) {
      chi_max = std::max(chi_max, std::fabs(influence_statistic(model.state, f.sim.corpus, d, k)));
    }
  }
  if (chi_max != 0.0) bad.push_back("chi " + fmt("%.3e", chi_max));

  VariationalState s;
  s.num_topics = 1;
  s.num_terms = 2;
  s.num_authors = 2;
  s.beta = GammaArray(1, 2, 1.0, 1.0);
  s.eta.loc = Mat(1, 2);
  s.eta.loc << 1.0, -1.0;
  s.eta.uvar = Mat::Zero(1, 2);
  s.positions.loc = Mat(2, 1);
  s.positions.loc << 1.0, 0.0;
  s.positions.uvar = Mat::Zero(2, 1);
  const double cli = corrected_log_intensity(s, 0, 0, 0.0);
  if (std::fabs(cli - boost::math::digamma(1.0)) > 1e-12) bad.push_back("corrected " + fmt("%.12f", cli));
  const double pol = topic_polarity(s)(0);
  if (std::fabs(pol - 0.5) > 1e-12) bad.push_back("polarity " + fmt("%.12f", pol));

  return {bad.empty(), bad.empty() ? "CCP 0.05, joint e^-1, chi 0, psi(1), polarity 0.5"
                                   : [&] {
                                       std::string s2;
                                       for (const auto& b : bad) s2 += b + " ";
                                       return s2;
                                     }()};
}

// ---------------------------------------------------------------------------
// 10. Two identical pipeline runs give byte-identical files.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(const std::string& cli) {
  if (cli.empty()) return {false, "no CLI path given"};
  const fs::path root = fs::temp_directory_path() / ("stbs_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::vector<std::string> compared;
  for (const char* run : {"one", "two"}) {
    const fs::path dir = root / run;
    fs::create_directories(dir);
    const std::string q = "'" + cli + "'";
    const std::string d = "'" + dir.string() + "'";
    const std::string cmds[] = {
        q + " simulate --d 120 --v 60 --k 3 --a 12 --seed 5 --out " + d + "/sim",
        q + " fit --counts " + d + "/sim/counts.csv --authors " + d + "/sim/authors.csv" +
            " --covariates " + d + "/sim/covariates.csv --formula '~ group + noise'" +
            " --set baseline.group=a --set baseline.noise=x --anchor-covariate group" +
            " --anchor-levels 'a=-1,b=1' --k 3 --epochs 4 --batch 32 --seed 9 --threads 2" +
            " --hpf-iters 20 --quiet --out " + d + "/run",
        q + " summarize --model " + d + "/run/state --main group --out " + d + "/summary",
    };
    for (const auto& c : cmds) {
      if (std::system((c + " > /dev/null 2>&1").c_str()) != 0) {
        return {false, "command failed: " + c};
      }
    }
  }
  std::vector<fs::path> files = {"sim/counts.csv", "sim/truth.json", "run/state", "run/trace.csv"};
  for (const auto& e : fs::directory_iterator(root / "one" / "summary")) {
    files.push_back(fs::path("summary") / e.path().filename());
  }
  std::sort(files.begin(), files.end());
  std::size_t differ = 0;
  for (const auto& rel : files) {
    if (slurp(root / "one" / rel) != slurp(root / "two" / rel)) ++differ;
  }
  fs::remove_all(root);
  return {differ == 0 && files.size() > 5,
          std::to_string(files.size()) + " files compared, " + std::to_string(differ) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"1 ideological-term oracle", lemma_oracle},
      {"2 gradient check", gradient_check},
      {"3 CAVI monotonicity", cavi_monotone},
      {"4 CAVI optimality", cavi_optimal},
      {"5 batch unbiasedness", batch_unbiased},
      {"6 formula spot-checks", formula_spots},
      {"7 parameter recovery", recovery},
      {"8 fixed-vs-topic congruence", congruence},
      {"9 post-processing exactness", postprocess_exact},
      {"10 determinism", [&] { return determinism(cli); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s  %-30s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
