#include "stbs/stbs.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <new>
#include <sstream>
#include <string>

#include "stbs/error.hpp"
#include "stbs/hpf.hpp"
#include "stbs/inference.hpp"
#include "stbs/report.hpp"
#include "stbs/synth.hpp"

struct stbs_corpus {
  stbs::DocTermMatrix m;
};

struct stbs_config {
  stbs::RunConfig cfg;
};

struct stbs_model {
  stbs::Model model;
};

namespace {

thread_local std::string g_last_error;

stbs_status to_status(stbs::ErrorCode c) {
  switch (c) {
    case stbs::ErrorCode::invalid_argument: return STBS_ERR_INVALID_ARGUMENT;
    case stbs::ErrorCode::io: return STBS_ERR_IO;
    case stbs::ErrorCode::parse: return STBS_ERR_PARSE;
    case stbs::ErrorCode::domain: return STBS_ERR_DOMAIN;
    case stbs::ErrorCode::numeric: return STBS_ERR_NUMERIC;
    case stbs::ErrorCode::schema: return STBS_ERR_SCHEMA;
    case stbs::ErrorCode::config: return STBS_ERR_CONFIG;
    case stbs::ErrorCode::internal: return STBS_ERR_INTERNAL;
  }
  return STBS_ERR_INTERNAL;
}

template <typename F>
stbs_status guard(F&& f) {
  try {
    f();
    return STBS_OK;
  } catch (const stbs::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return STBS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return STBS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return STBS_ERR_INTERNAL;
  }
}

void require(const void* p, const char* name) {
  if (p == nullptr) stbs::fail(stbs::ErrorCode::invalid_argument, std::string(name) + " is null");
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void export_anchors(const std::map<std::int64_t, double>& anchors, int64_t** authors,
                    double** positions, size_t* count) {
  require(authors, "authors");
  require(positions, "positions");
  require(count, "count");
  const std::size_t n = anchors.size();
  auto* a = static_cast<int64_t*>(std::malloc(std::max<std::size_t>(n, 1) * sizeof(int64_t)));
  auto* p = static_cast<double*>(std::malloc(std::max<std::size_t>(n, 1) * sizeof(double)));
  if (a == nullptr || p == nullptr) {
    std::free(a);
    std::free(p);
    throw std::bad_alloc();
  }
  std::size_t i = 0;
  for (const auto& [label, pos] : anchors) {
    a[i] = label;
    p[i] = pos;
    ++i;
  }
  *authors = a;
  *positions = p;
  *count = n;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    stbs::fail(stbs::ErrorCode::parse, where + ": '" + text + "' is not a number");
  }
}

std::map<std::int64_t, double> read_anchor_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) stbs::fail(stbs::ErrorCode::io, "cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::int64_t, double> out;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto where = path + ":" + std::to_string(lineno);
    const auto comma = line.find(',');
    if (comma == std::string::npos) stbs::fail(stbs::ErrorCode::parse, where + ": expected two fields");
    const auto first = trim(line.substr(0, comma));
    const auto second = trim(line.substr(comma + 1));
    if (lineno == 1 && first == "author_id") continue;
    const auto id = static_cast<std::int64_t>(parse_number(first, where));
    if (static_cast<double>(id) != parse_number(first, where)) {
      stbs::fail(stbs::ErrorCode::parse, where + ": author id must be an integer");
    }
    if (!out.emplace(id, parse_number(second, where)).second) {
      stbs::fail(stbs::ErrorCode::parse, where + ": author listed twice");
    }
  }
  return out;
}

std::map<std::string, double> parse_levels(const std::string& spec) {
  std::map<std::string, double> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      stbs::fail(stbs::ErrorCode::parse, "anchor level '" + item + "' must look like label=value");
    }
    out[trim(item.substr(0, eq))] = parse_number(trim(item.substr(eq + 1)), "anchor levels");
  }
  if (out.empty()) stbs::fail(stbs::ErrorCode::parse, "no anchor levels given");
  return out;
}

}  // namespace

extern "C" {

const char* stbs_version(void) { return "1.0.0"; }

const char* stbs_last_error(void) { return g_last_error.c_str(); }

const char* stbs_status_name(stbs_status status) {
  switch (status) {
    case STBS_OK: return "ok";
    case STBS_ERR_INVALID_ARGUMENT: return "invalid argument";
    case STBS_ERR_IO: return "i/o error";
    case STBS_ERR_PARSE: return "parse error";
    case STBS_ERR_DOMAIN: return "domain error";
    case STBS_ERR_NUMERIC: return "numeric error";
    case STBS_ERR_SCHEMA: return "schema error";
    case STBS_ERR_CONFIG: return "config error";
    case STBS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void stbs_string_free(char* s) { std::free(s); }

// ---- corpus ---------------------------------------------------------------

stbs_status stbs_corpus_load(const char* counts, const char* authors, const char* vocab,
                             stbs_corpus** out) {
  return guard([&] {
    require(counts, "counts");
    require(authors, "authors");
    require(out, "out");
    *out = nullptr;
    auto c = std::make_unique<stbs_corpus>();
    std::optional<std::filesystem::path> v;
    if (vocab != nullptr) v = vocab;
    c->m = stbs::load_counts(counts, authors, v);
    *out = c.release();
  });
}

stbs_status stbs_corpus_filter(stbs_corpus* corpus, double min_doc_frac, double max_doc_frac,
                               size_t min_authors_per_term, size_t min_docs_per_author) {
  return guard([&] {
    require(corpus, "corpus");
    stbs::FilterSettings f{min_doc_frac, max_doc_frac, min_authors_per_term, min_docs_per_author};
    corpus->m = stbs::apply_corpus_filters(corpus->m, f);
  });
}

stbs_status stbs_corpus_dims(const stbs_corpus* corpus, size_t* docs, size_t* terms,
                             size_t* authors, size_t* nonzeros) {
  return guard([&] {
    require(corpus, "corpus");
    if (docs) *docs = corpus->m.num_docs;
    if (terms) *terms = corpus->m.num_terms;
    if (authors) *authors = corpus->m.num_authors;
    if (nonzeros) *nonzeros = corpus->m.nnz();
  });
}

stbs_status stbs_corpus_write(const stbs_corpus* corpus, const char* counts, const char* authors,
                              const char* vocab, int use_labels) {
  return guard([&] {
    require(corpus, "corpus");
    require(counts, "counts");
    require(authors, "authors");
    stbs::write_counts(corpus->m, counts, authors, use_labels != 0);
    if (vocab != nullptr) {
      std::ofstream out(vocab, std::ios::binary);
      if (!out) stbs::fail(stbs::ErrorCode::io, std::string("cannot write ") + vocab);
      for (std::size_t v = 0; v < corpus->m.num_terms; ++v) out << corpus->m.term_name(v) << '\n';
    }
  });
}

void stbs_corpus_free(stbs_corpus* corpus) { delete corpus; }

// ---- configuration --------------------------------------------------------

stbs_status stbs_config_new(stbs_config** out) {
  return guard([&] {
    require(out, "out");
    *out = new stbs_config();
  });
}

stbs_status stbs_config_load(const char* path, stbs_config** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    auto c = std::make_unique<stbs_config>();
    c->cfg = stbs::load_run_config(path);
    *out = c.release();
  });
}

stbs_status stbs_config_set(stbs_config* config, const char* key, const char* value) {
  return guard([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    stbs::set_run_config_value(config->cfg, key, value);
  });
}

stbs_status stbs_config_to_json(const stbs_config* config, char** out) {
  return guard([&] {
    require(config, "config");
    require(out, "out");
    *out = copy_string(stbs::run_config_to_string(config->cfg));
  });
}

void stbs_config_free(stbs_config* config) { delete config; }

// ---- anchors --------------------------------------------------------------

stbs_status stbs_anchors_load(const char* path, int64_t** authors, double** positions,
                              size_t* count) {
  return guard([&] {
    require(path, "path");
    export_anchors(read_anchor_file(path), authors, positions, count);
  });
}

stbs_status stbs_anchors_from_covariate(const char* covariates, const char* column,
                                        const char* levels, int64_t** authors,
                                        double** positions, size_t* count) {
  return guard([&] {
    require(covariates, "covariates");
    require(column, "column");
    require(levels, "levels");
    const auto values = parse_levels(levels);
    std::ifstream in(covariates);
    if (!in) stbs::fail(stbs::ErrorCode::io, std::string("cannot open ") + covariates);
    std::string line;
    if (!std::getline(in, line)) stbs::fail(stbs::ErrorCode::parse, "empty covariate file");
    std::vector<std::string> header;
    {
      std::stringstream ss(line);
      std::string f;
      while (std::getline(ss, f, ',')) header.push_back(trim(f));
    }
    const auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end() || it == header.begin()) {
      stbs::fail(stbs::ErrorCode::invalid_argument,
                 std::string("covariate file has no column '") + column + "'");
    }
    const auto col = static_cast<std::size_t>(it - header.begin());
    std::map<std::int64_t, double> anchors;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      std::string f;
      while (std::getline(ss, f, ',')) fields.push_back(trim(f));
      const auto where = std::string(covariates) + ":" + std::to_string(lineno);
      if (fields.size() != header.size()) stbs::fail(stbs::ErrorCode::parse, where + ": wrong field count");
      const auto id = static_cast<std::int64_t>(parse_number(fields[0], where));
      const auto lv = values.find(fields[col]);
      anchors[id] = lv == values.end() ? 0.0 : lv->second;
    }
    export_anchors(anchors, authors, positions, count);
  });
}

void stbs_anchors_free(int64_t* authors, double* positions) {
  std::free(authors);
  std::free(positions);
}

// ---- models ---------------------------------------------------------------

stbs_status stbs_model_init(const stbs_corpus* corpus, const char* covariates,
                            const char* formula, const stbs_config* config,
                            const int64_t* anchor_authors, const double* anchor_positions,
                            size_t anchor_count, const char* init_state, stbs_model** out) {
  return guard([&] {
    require(corpus, "corpus");
    require(config, "config");
    require(out, "out");
    *out = nullptr;
    if (anchor_count > 0) {
      require(anchor_authors, "anchor_authors");
      require(anchor_positions, "anchor_positions");
    }
    const auto& m = corpus->m;
    const auto& rc = config->cfg;
    rc.hyper.validate();
    rc.fit.validate();

    stbs::DesignMatrix design;
    if (covariates != nullptr) {
      require(formula, "formula");
      std::vector<std::string> warnings;
      const auto table = stbs::load_covariates(covariates, m.author_labels, rc.baselines, &warnings);
      design = stbs::build_design_matrix(table, formula);
    } else {
      if (formula != nullptr && trim(formula) != "~ 1" && trim(formula) != "~1") {
        stbs::fail(stbs::ErrorCode::invalid_argument, "a formula with covariates needs a covariate file");
      }
      design = stbs::DesignMatrix::intercept_only(m.num_authors);
    }

    std::map<std::int64_t, double> anchors;
    for (auto label : m.author_labels) anchors[label] = 0.0;
    for (std::size_t i = 0; i < anchor_count; ++i) {
      const auto it = anchors.find(anchor_authors[i]);
      if (it != anchors.end()) it->second = anchor_positions[i];
    }

    stbs::VariationalState warm;
    if (init_state != nullptr) {
      warm = stbs::load_model(init_state).state;
      if (warm.num_docs != m.num_docs || warm.num_terms != m.num_terms ||
          warm.num_authors != m.num_authors || warm.num_topics != rc.fit.num_topics) {
        stbs::fail(stbs::ErrorCode::invalid_argument, "initial state does not match the corpus");
      }
    } else {
      warm = stbs::fit_hpf(m, rc.fit.num_topics, rc.hyper, rc.fit.hpf_iters, rc.fit.seed,
                           rc.fit.threads)
                 .state;
    }

    auto model = std::make_unique<stbs_model>();
    auto& mod = model->model;
    mod.hyper = rc.hyper;
    mod.config = rc.fit;
    mod.state = stbs::init_state(m, design, warm, anchors, rc.fit, rc.hyper);
    mod.design = std::move(design);
    mod.doc_labels = m.doc_labels;
    mod.term_labels = m.term_labels;
    mod.author_labels = m.author_labels;
    mod.vocab = m.vocab;
    *out = model.release();
  });
}

stbs_status stbs_model_fit(stbs_model* model, const stbs_corpus* corpus, size_t epochs,
                           const char* checkpoint_path, stbs_progress_fn progress, void* user) {
  return guard([&] {
    require(model, "model");
    require(corpus, "corpus");
    const auto& m = corpus->m;
    auto& mod = model->model;
    if (m.num_docs != mod.state.num_docs || m.num_terms != mod.state.num_terms ||
        m.num_authors != mod.state.num_authors) {
      stbs::fail(stbs::ErrorCode::invalid_argument, "corpus does not match the model");
    }
    mod.config.epochs = epochs;
    stbs::FitOptions opts;
    if (progress != nullptr) {
      opts.on_epoch = [&](const stbs::FitProgress& p) {
        stbs_progress cp{p.epoch, epochs, p.step, p.elbo};
        progress(&cp, user);
      };
    }
    if (checkpoint_path != nullptr) {
      const std::string path = checkpoint_path;
      opts.on_checkpoint = [path](const stbs::Model& snapshot, const std::string&) {
        stbs::save_model(snapshot, path);
      };
    }
    stbs::fit(mod, m, opts);
  });
}

stbs_status stbs_model_set_threads(stbs_model* model, size_t threads) {
  return guard([&] {
    require(model, "model");
    if (threads < 1) stbs::fail(stbs::ErrorCode::invalid_argument, "threads must be at least 1");
    model->model.config.threads = threads;
  });
}

stbs_status stbs_model_load(const char* path, stbs_model** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    auto model = std::make_unique<stbs_model>();
    model->model = stbs::load_model(path);
    *out = model.release();
  });
}

stbs_status stbs_model_save(const stbs_model* model, const char* path) {
  return guard([&] {
    require(model, "model");
    require(path, "path");
    stbs::save_model(model->model, path);
  });
}

stbs_status stbs_model_dims(const stbs_model* model, size_t* docs, size_t* terms, size_t* topics,
                            size_t* authors, size_t* covariates) {
  return guard([&] {
    require(model, "model");
    const auto& s = model->model.state;
    if (docs) *docs = s.num_docs;
    if (terms) *terms = s.num_terms;
    if (topics) *topics = s.num_topics;
    if (authors) *authors = s.num_authors;
    if (covariates) *covariates = s.num_covariates;
  });
}

stbs_status stbs_model_step(const stbs_model* model, uint64_t* step) {
  return guard([&] {
    require(model, "model");
    require(step, "step");
    *step = model->model.state.step;
  });
}

stbs_status stbs_model_trace(const stbs_model* model, double* values, size_t capacity,
                             size_t* length) {
  return guard([&] {
    require(model, "model");
    const auto& t = model->model.elbo_trace;
    if (length) *length = t.size();
    if (capacity > 0) require(values, "values");
    for (std::size_t i = 0; i < std::min(capacity, t.size()); ++i) values[i] = t[i];
  });
}

stbs_status stbs_model_write_trace(const stbs_model* model, const char* path) {
  return guard([&] {
    require(model, "model");
    require(path, "path");
    std::ofstream out(path, std::ios::binary);
    if (!out) stbs::fail(stbs::ErrorCode::io, std::string("cannot write ") + path);
    out << "step,elbo\n";
    const auto& t = model->model.elbo_trace;
    for (std::size_t i = 0; i < t.size(); ++i) out << i + 1 << ',' << stbs::format_double(t[i]) << '\n';
  });
}

stbs_status stbs_model_positions(const stbs_model* model, double* values, size_t capacity,
                                 size_t* rows, size_t* cols) {
  return guard([&] {
    require(model, "model");
    const auto& loc = model->model.state.positions.loc;
    const auto r = static_cast<std::size_t>(loc.rows());
    const auto c = static_cast<std::size_t>(loc.cols());
    if (rows) *rows = r;
    if (cols) *cols = c;
    if (capacity > 0) require(values, "values");
    const std::size_t n = std::min(capacity, r * c);
    for (std::size_t i = 0; i < n; ++i) values[i] = loc.data()[i];
  });
}

void stbs_model_free(stbs_model* model) { delete model; }

// ---- summaries ------------------------------------------------------------

void stbs_summary_options_default(stbs_summary_options* opts) {
  if (opts == nullptr) return;
  const stbs::SummaryOptions d;
  opts->what = "all";
  opts->top_n = d.top_n;
  opts->has_ideology = 0;
  opts->ideology = 0.0;
  opts->main_covariate = nullptr;
  opts->pool = d.pool;
  opts->top_docs = d.top_docs;
}

stbs_status stbs_summarize(const stbs_model* model, const stbs_corpus* corpus,
                           const stbs_summary_options* opts, const char* out_dir) {
  return guard([&] {
    require(model, "model");
    require(out_dir, "out_dir");
    stbs::SummaryOptions o;
    if (opts != nullptr) {
      if (opts->what != nullptr) o.what = opts->what;
      o.top_n = opts->top_n;
      if (opts->has_ideology) o.ideology = opts->ideology;
      if (opts->main_covariate != nullptr) o.main_covariate = opts->main_covariate;
      o.pool = opts->pool;
      o.top_docs = opts->top_docs;
    }
    stbs::summarize(model->model, corpus != nullptr ? &corpus->m : nullptr, o, out_dir);
  });
}

// ---- simulation -----------------------------------------------------------

void stbs_simulate_options_default(stbs_simulate_options* opts) {
  if (opts == nullptr) return;
  opts->docs = 400;
  opts->terms = 150;
  opts->topics = 3;
  opts->authors = 20;
  opts->seed = 0;
  opts->pin_positions = nullptr;
  opts->moderate = 1;
}

stbs_status stbs_simulate(const stbs_simulate_options* opts, const char* out_dir) {
  return guard([&] {
    require(opts, "opts");
    require(out_dir, "out_dir");
    const std::filesystem::path dir = out_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) stbs::fail(stbs::ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());

    const auto h = opts->moderate ? stbs::moderate_hyperparams() : stbs::Hyperparams{};
    const auto table = stbs::simulated_covariates(opts->authors);
    const auto design = stbs::build_design_matrix(table, "~ group + noise");
    stbs::SynthOverrides o;
    if (opts->moderate) {
      o = stbs::moderate_overrides(opts->authors, opts->terms, opts->topics, design.num_columns(), h);
    }
    if (opts->pin_positions != nullptr) {
      const auto pins = read_anchor_file(opts->pin_positions);
      stbs::Mat pos(static_cast<Eigen::Index>(opts->authors), static_cast<Eigen::Index>(opts->topics));
      for (std::size_t a = 0; a < opts->authors; ++a) {
        const auto it = pins.find(static_cast<std::int64_t>(a));
        if (it == pins.end()) {
          stbs::fail(stbs::ErrorCode::invalid_argument,
                     "pinned positions miss author " + std::to_string(a));
        }
        pos.row(static_cast<Eigen::Index>(a)).setConstant(it->second);
      }
      o.positions = pos;
    }
    const auto res = stbs::generate(h, opts->docs, opts->terms, opts->topics, opts->authors,
                                    design, opts->seed, o);
    stbs::write_counts(res.corpus, dir / "counts.csv", dir / "authors.csv", true);
    std::vector<std::int64_t> labels(opts->authors);
    for (std::size_t a = 0; a < opts->authors; ++a) labels[a] = static_cast<std::int64_t>(a);
    stbs::write_covariates(table, labels, dir / "covariates.csv");
    stbs::save_truth(res.truth, dir / "truth.json");
  });
}

}  // extern "C"
