// Command-line front end: fit, simulate and summarize. Everything goes
// through the C interface.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stbs/stbs.h"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Failure {
  std::string message;
};

void check(stbs_status st, const std::string& what) {
  if (st != STBS_OK) throw Failure{what + ": " + stbs_last_error()};
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
};

using Corpus = Handle<stbs_corpus, stbs_corpus_free>;
using Config = Handle<stbs_config, stbs_config_free>;
using ModelHandle = Handle<stbs_model, stbs_model_free>;

/// 64-bit FNV-1a over the file contents.
std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{"cannot read " + path.string()};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

ordered_json file_entry(const fs::path& path) {
  return {{"path", path.string()}, {"bytes", fs::file_size(path)}, {"fnv1a64", file_hash(path)}};
}

std::optional<std::size_t> env_threads() {
  const char* v = std::getenv("STBS_THREADS");
  if (v == nullptr || *v == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto n = std::stoul(v, &used);
    if (used == std::string(v).size() && n >= 1) return n;
  } catch (const std::exception&) {
  }
  throw Failure{std::string("STBS_THREADS must be a positive integer, got '") + v + "'"};
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{"cannot create " + dir.string() + ": " + ec.message()};
}

void print_progress(const stbs_progress* p, void* user) {
  if (*static_cast<bool*>(user)) return;
  std::fprintf(stderr, "epoch %zu/%zu step %llu elbo %.6f\n", p->epoch, p->epochs,
               static_cast<unsigned long long>(p->step), p->elbo);
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string counts, authors, covariates, vocab, formula, out, config, resume, init;
  std::string anchors, anchor_covariate, anchor_levels;
  std::vector<std::string> sets;
  std::optional<std::size_t> k, epochs, batch, threads, hpf_iters, mc_samples, checkpoint_every;
  std::optional<std::uint64_t> seed;
  std::optional<double> learning_rate;
  std::string position_mode, expectation_mode;
  bool filter = false;
  double min_doc_frac = 0.001, max_doc_frac = 0.30;
  std::size_t min_authors = 10, min_docs = 24;
  bool quiet = false;
};

void apply_overrides(stbs_config* cfg, const FitArgs& a, std::size_t threads) {
  auto set = [&](const std::string& key, const std::string& value) {
    check(stbs_config_set(cfg, key.c_str(), value.c_str()), "--" + key);
  };
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Failure{"--set expects key=value, got '" + kv + "'"};
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.k) set("num_topics", std::to_string(*a.k));
  if (a.epochs) set("epochs", std::to_string(*a.epochs));
  if (a.batch) set("batch_size", std::to_string(*a.batch));
  if (a.seed) set("seed", std::to_string(*a.seed));
  if (a.hpf_iters) set("hpf_iters", std::to_string(*a.hpf_iters));
  if (a.mc_samples) set("mc_samples", std::to_string(*a.mc_samples));
  if (a.checkpoint_every) set("checkpoint_every", std::to_string(*a.checkpoint_every));
  if (a.learning_rate) {
    std::ostringstream os;
    os.precision(17);
    os << *a.learning_rate;
    set("learning_rate", os.str());
  }
  if (!a.position_mode.empty()) set("position_mode", a.position_mode);
  if (!a.expectation_mode.empty()) set("expectation_mode", a.expectation_mode);
  set("threads", std::to_string(threads));
}

int cmd_fit(const FitArgs& a, const std::vector<std::string>& argv) {
  const bool resuming = !a.resume.empty();
  if (!resuming && a.formula.empty()) {
    std::cerr << "fit: --formula is required (use \"~ 1\" for no covariates)\n";
    return kExitUsage;
  }
  if (!resuming && (a.counts.empty() || a.authors.empty())) {
    std::cerr << "fit: --counts and --authors are required\n";
    return kExitUsage;
  }
  if (resuming && !a.epochs) {
    std::cerr << "fit: --resume needs --epochs\n";
    return kExitUsage;
  }
  if (!a.anchors.empty() && !a.anchor_covariate.empty()) {
    std::cerr << "fit: use either --anchors or --anchor-covariate\n";
    return kExitUsage;
  }
  if (!a.anchor_covariate.empty() && (a.anchor_levels.empty() || a.covariates.empty())) {
    std::cerr << "fit: --anchor-covariate needs --anchor-levels and --covariates\n";
    return kExitUsage;
  }

  std::size_t threads = 1;
  if (a.threads) {
    threads = *a.threads;
  } else if (auto t = env_threads()) {
    threads = *t;
  }

  const fs::path out = !a.out.empty() ? fs::path(a.out) : fs::path(a.resume).parent_path();
  if (out.empty()) throw Failure{"--out is required"};
  make_dir(out);
  const fs::path corpus_dir = out / "corpus";

  Corpus corpus;
  ModelHandle model;
  ordered_json inputs = ordered_json::object();
  std::size_t epochs = 0;

  if (resuming) {
    const fs::path state = a.resume;
    const fs::path src = state.parent_path() / "corpus";
    inputs["state"] = file_entry(state);
    check(stbs_model_load(state.c_str(), &model.p), "loading " + state.string());
    check(stbs_corpus_load((src / "counts.csv").c_str(), (src / "authors.csv").c_str(),
                           (src / "vocab.txt").c_str(), &corpus.p),
          "loading the run corpus");
    if (src != corpus_dir) {
      make_dir(corpus_dir);
      check(stbs_corpus_write(corpus.p, (corpus_dir / "counts.csv").c_str(),
                              (corpus_dir / "authors.csv").c_str(),
                              (corpus_dir / "vocab.txt").c_str(), 0),
            "writing the run corpus");
    }
    check(stbs_model_set_threads(model.p, threads), "--threads");
    epochs = *a.epochs;
  } else {
    inputs["counts"] = file_entry(a.counts);
    inputs["authors"] = file_entry(a.authors);
    if (!a.vocab.empty()) inputs["vocab"] = file_entry(a.vocab);
    if (!a.covariates.empty()) inputs["covariates"] = file_entry(a.covariates);
    check(stbs_corpus_load(a.counts.c_str(), a.authors.c_str(),
                           a.vocab.empty() ? nullptr : a.vocab.c_str(), &corpus.p),
          "loading the corpus");
    if (a.filter) {
      check(stbs_corpus_filter(corpus.p, a.min_doc_frac, a.max_doc_frac, a.min_authors, a.min_docs),
            "filtering the corpus");
    }

    Config cfg;
    if (!a.config.empty()) {
      inputs["config"] = file_entry(a.config);
      check(stbs_config_load(a.config.c_str(), &cfg.p), "loading " + a.config);
    } else {
      check(stbs_config_new(&cfg.p), "creating the configuration");
    }
    apply_overrides(cfg.p, a, threads);

    int64_t* anchor_ids = nullptr;
    double* anchor_pos = nullptr;
    std::size_t anchor_n = 0;
    if (!a.anchors.empty()) {
      inputs["anchors"] = file_entry(a.anchors);
      check(stbs_anchors_load(a.anchors.c_str(), &anchor_ids, &anchor_pos, &anchor_n), "--anchors");
    } else if (!a.anchor_covariate.empty()) {
      check(stbs_anchors_from_covariate(a.covariates.c_str(), a.anchor_covariate.c_str(),
                                        a.anchor_levels.c_str(), &anchor_ids, &anchor_pos,
                                        &anchor_n),
            "--anchor-covariate");
    }
    if (!a.init.empty()) inputs["init"] = file_entry(a.init);
    const stbs_status st = stbs_model_init(
        corpus.p, a.covariates.empty() ? nullptr : a.covariates.c_str(), a.formula.c_str(), cfg.p,
        anchor_ids, anchor_pos, anchor_n, a.init.empty() ? nullptr : a.init.c_str(), &model.p);
    stbs_anchors_free(anchor_ids, anchor_pos);
    check(st, "initializing the model");

    char* cfg_json = nullptr;
    check(stbs_config_to_json(cfg.p, &cfg_json), "serializing the configuration");
    const std::string cfg_text = cfg_json;
    stbs_string_free(cfg_json);
    std::ofstream(out / "config.json", std::ios::binary) << cfg_text;
    epochs = nlohmann::json::parse(cfg_text).at("epochs").get<std::size_t>();

    make_dir(corpus_dir);
    check(stbs_corpus_write(corpus.p, (corpus_dir / "counts.csv").c_str(),
                            (corpus_dir / "authors.csv").c_str(),
                            (corpus_dir / "vocab.txt").c_str(), 0),
          "writing the run corpus");
  }

  const fs::path state_path = out / "state";
  bool quiet = a.quiet;
  check(stbs_model_fit(model.p, corpus.p, epochs, state_path.c_str(), print_progress, &quiet),
        "fitting");
  check(stbs_model_save(model.p, state_path.c_str()), "saving the state");
  check(stbs_model_write_trace(model.p, (out / "trace.csv").c_str()), "writing the trace");

  std::uint64_t step = 0;
  check(stbs_model_step(model.p, &step), "reading the step counter");
  ordered_json manifest;
  manifest["schema"] = "stbs_manifest_v1";
  manifest["version"] = stbs_version();
  manifest["command"] = argv;
  manifest["mode"] = resuming ? "resume" : "fresh";
  manifest["threads"] = threads;
  manifest["epochs_run"] = epochs;
  manifest["step"] = step;
  manifest["inputs"] = std::move(inputs);
  manifest["outputs"] = {{"state", file_entry(state_path)},
                         {"trace", file_entry(out / "trace.csv")},
                         {"corpus_counts", file_entry(corpus_dir / "counts.csv")}};
  std::ofstream(out / "manifest", std::ios::binary) << manifest.dump(1) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct SimArgs {
  std::size_t d = 400, v = 150, k = 3, a = 20;
  std::uint64_t seed = 0;
  std::string out, pin_positions;
  bool full_hierarchy = false;
};

int cmd_simulate(const SimArgs& s) {
  stbs_simulate_options o;
  stbs_simulate_options_default(&o);
  o.docs = s.d;
  o.terms = s.v;
  o.topics = s.k;
  o.authors = s.a;
  o.seed = s.seed;
  o.moderate = s.full_hierarchy ? 0 : 1;
  o.pin_positions = s.pin_positions.empty() ? nullptr : s.pin_positions.c_str();
  check(stbs_simulate(&o, s.out.c_str()), "simulating");
  return 0;
}

// ---------------------------------------------------------------------------

struct SumArgs {
  std::string model, out, what = "all", main, corpus;
  std::size_t top_n = 10, pool = 100, top_docs = 10;
  std::optional<double> ideology;
};

int cmd_summarize(const SumArgs& s) {
  const fs::path state = s.model;
  const fs::path out = s.out.empty() ? state.parent_path() / "summary" : fs::path(s.out);
  ModelHandle model;
  check(stbs_model_load(state.c_str(), &model.p), "loading " + state.string());
  Corpus corpus;
  const fs::path cdir = s.corpus.empty() ? state.parent_path() / "corpus" : fs::path(s.corpus);
  if (fs::exists(cdir / "counts.csv")) {
    const fs::path vocab = cdir / "vocab.txt";
    check(stbs_corpus_load((cdir / "counts.csv").c_str(), (cdir / "authors.csv").c_str(),
                           fs::exists(vocab) ? vocab.c_str() : nullptr, &corpus.p),
          "loading the run corpus");
  } else if (!s.corpus.empty()) {
    throw Failure{"no counts.csv in " + cdir.string()};
  }
  stbs_summary_options o;
  stbs_summary_options_default(&o);
  o.what = s.what.c_str();
  o.top_n = s.top_n;
  o.pool = s.pool;
  o.top_docs = s.top_docs;
  if (s.ideology) {
    o.has_ideology = 1;
    o.ideology = *s.ideology;
  }
  o.main_covariate = s.main.empty() ? nullptr : s.main.c_str();
  check(stbs_summarize(model.p, corpus.p, &o, out.c_str()), "summarizing");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structural text-based scaling: fit, simulate and summarize"};
  app.require_subcommand(1);
  app.set_version_flag("--version", stbs_version());

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit the model to a corpus");
  fit->add_option("--counts", fa.counts, "doc_id,term_id,count file");
  fit->add_option("--authors", fa.authors, "doc_id,author_id file");
  fit->add_option("--covariates", fa.covariates, "author_id,<columns...> file");
  fit->add_option("--vocab", fa.vocab, "one term per line");
  fit->add_option("--formula", fa.formula, "regression formula, e.g. \"~ party + gender\"");
  fit->add_option("--out", fa.out, "run directory");
  fit->add_option("--config", fa.config, "run configuration (JSON)");
  fit->add_option("--set", fa.sets, "key=value configuration override")->allow_extra_args(false);
  fit->add_option("--k", fa.k, "number of topics");
  fit->add_option("--epochs", fa.epochs, "epochs to run");
  fit->add_option("--batch", fa.batch, "documents per batch");
  fit->add_option("--seed", fa.seed, "random seed");
  fit->add_option("--lr", fa.learning_rate, "Adam learning rate");
  fit->add_option("--mc-samples", fa.mc_samples, "Monte Carlo samples per step");
  fit->add_option("--hpf-iters", fa.hpf_iters, "warm-start sweeps");
  fit->add_option("--checkpoint-every", fa.checkpoint_every, "batches between checkpoints");
  fit->add_option("--position-mode", fa.position_mode, "topic_specific or fixed");
  fit->add_option("--expectation-mode", fa.expectation_mode, "exact or geometric");
  fit->add_option("--threads", fa.threads, "worker threads (default: STBS_THREADS or 1)");
  fit->add_option("--resume", fa.resume, "continue from a saved state");
  fit->add_option("--init", fa.init, "take the topic blocks from this state instead of the warm start");
  fit->add_option("--anchors", fa.anchors, "author_id,position file with starting positions");
  fit->add_option("--anchor-covariate", fa.anchor_covariate, "covariate column used for anchors");
  fit->add_option("--anchor-levels", fa.anchor_levels, "label=value list, e.g. \"D=-1,R=1\"");
  fit->add_flag("--filter", fa.filter, "apply the corpus filters");
  fit->add_option("--min-doc-frac", fa.min_doc_frac, "minimum document frequency of a term");
  fit->add_option("--max-doc-frac", fa.max_doc_frac, "maximum document frequency of a term");
  fit->add_option("--min-authors", fa.min_authors, "minimum authors using a term");
  fit->add_option("--min-docs", fa.min_docs, "minimum documents per author");
  fit->add_flag("--quiet", fa.quiet, "no per-epoch log");

  SimArgs sa;
  auto* sim = app.add_subcommand("simulate", "Draw a synthetic corpus with known truth");
  sim->add_option("--d", sa.d, "documents");
  sim->add_option("--v", sa.v, "terms");
  sim->add_option("--k", sa.k, "topics");
  sim->add_option("--a", sa.a, "authors");
  sim->add_option("--seed", sa.seed, "random seed");
  sim->add_option("--out", sa.out, "output directory")->required();
  sim->add_option("--pin-positions", sa.pin_positions, "author_id,position file");
  sim->add_flag("--full-hierarchy", sa.full_hierarchy, "draw every block from the priors");

  SumArgs ma;
  auto* sum = app.add_subcommand("summarize", "Write the report and plot data");
  sum->add_option("--model", ma.model, "state file")->required();
  sum->add_option("--out", ma.out, "output directory (default: <run>/summary)");
  sum->add_option("--what", ma.what, "all, polarity, positions, regression, terms or influential")
      ->check(CLI::IsMember({"all", "polarity", "positions", "regression", "terms", "influential"}));
  sum->add_option("--top-n", ma.top_n, "terms per ranking");
  sum->add_option("--ideology", ma.ideology, "ideology for term rankings (default -1, 0 and 1)");
  sum->add_option("--main", ma.main, "covariate grouping the position histograms");
  sum->add_option("--pool", ma.pool, "candidate documents per topic");
  sum->add_option("--top-docs", ma.top_docs, "influential documents per topic");
  sum->add_option("--corpus", ma.corpus, "corpus directory (default: <run>/corpus)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (fit->parsed()) return cmd_fit(fa, std::vector<std::string>(argv + 1, argv + argc));
    if (sim->parsed()) return cmd_simulate(sa);
    if (sum->parsed()) return cmd_summarize(ma);
  } catch (const Failure& f) {
    std::cerr << "stbs: " << f.message << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "stbs: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
