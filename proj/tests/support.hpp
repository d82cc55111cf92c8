#pragma once

// Small fixtures shared by the unit and acceptance tests.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <unistd.h>

#include "stbs/hpf.hpp"
#include "stbs/inference.hpp"
#include "stbs/synth.hpp"

namespace stbs::testing {

/// Simulated corpus with tame rates; `formula` is applied to the simulated
/// covariates ("group" and "noise").
struct Fixture {
  SynthResult sim;
  DesignMatrix design;
};

inline Fixture simulated(std::size_t D, std::size_t V, std::size_t K, std::size_t A,
                         std::uint64_t seed, const std::string& formula = "~ group + noise",
                         SynthOverrides* extra = nullptr) {
  const Hyperparams h = moderate_hyperparams();
  Fixture f;
  const auto table = simulated_covariates(A);
  f.design = formula == "~ 1" ? DesignMatrix::intercept_only(A) : build_design_matrix(table, formula);
  SynthOverrides o = moderate_overrides(A, V, K, f.design.num_columns(), h);
  if (extra != nullptr) {
    if (extra->iota) o.iota = extra->iota;
    if (extra->positions) o.positions = extra->positions;
    if (extra->eta) o.eta = extra->eta;
    if (extra->theta) o.theta = extra->theta;
    if (extra->beta) o.beta = extra->beta;
  }
  f.sim = generate(h, D, V, K, A, f.design, seed, o);
  // Authors that lost every document are dropped from the corpus; keep the
  // design aligned with it.
  if (f.sim.corpus.num_authors != A) {
    CovariateTable t;
    t.num_authors = f.sim.corpus.num_authors;
    for (const auto& c : table.columns) {
      CovariateColumn col{c.name, {}, c.baseline};
      for (auto lab : f.sim.corpus.author_labels) col.labels.push_back(c.labels[lab]);
      t.columns.push_back(col);
    }
    f.design = formula == "~ 1" ? DesignMatrix::intercept_only(t.num_authors)
                                : build_design_matrix(t, formula);
  }
  return f;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("stbs_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  std::filesystem::path write(const std::string& name, const std::string& text) const {
    const auto p = path_ / name;
    std::ofstream(p) << text;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Matrix from (doc, term, count) triplets; author of doc d is authors[d].
inline DocTermMatrix toy_matrix(const std::vector<TripletEntry>& entries,
                                const std::vector<std::int64_t>& authors,
                                std::vector<std::string> vocab = {}) {
  std::map<std::int64_t, std::int64_t> amap;
  for (std::size_t d = 0; d < authors.size(); ++d) amap[static_cast<std::int64_t>(d)] = authors[d];
  return make_doc_term_matrix(entries, amap, std::move(vocab));
}

inline std::map<std::int64_t, double> zero_anchors(const DocTermMatrix& m) {
  std::map<std::int64_t, double> out;
  for (auto a : m.author_labels) out[a] = 0.0;
  return out;
}

/// Anchors -1 / +1 from the alternating "group" covariate.
inline std::map<std::int64_t, double> group_anchors(const DocTermMatrix& m) {
  std::map<std::int64_t, double> out;
  for (auto a : m.author_labels) out[a] = a % 2 == 0 ? -1.0 : 1.0;
  return out;
}

inline Model initial_model(const Fixture& f, const FitConfig& cfg,
                           const std::map<std::int64_t, double>& anchors,
                           const Hyperparams& h = {}) {
  const auto& m = f.sim.corpus;
  Model model;
  model.hyper = h;
  model.config = cfg;
  model.design = f.design;
  const auto hpf = fit_hpf(m, cfg.num_topics, h, cfg.hpf_iters, cfg.seed, cfg.threads);
  model.state = init_state(m, f.design, hpf.state, anchors, cfg, h);
  model.doc_labels = m.doc_labels;
  model.term_labels = m.term_labels;
  model.author_labels = m.author_labels;
  return model;
}

}  // namespace stbs::testing
