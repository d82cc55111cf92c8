/* C interface to the structural text-based scaling library.
 *
 * Objects are opaque handles released with the matching *_free function.
 * Every call returns a status code; on failure stbs_last_error() describes
 * the cause (per thread, valid until the next failing call on that thread).
 * Strings returned through char** are released with stbs_string_free. */
#ifndef STBS_STBS_H
#define STBS_STBS_H

#include <stddef.h>
#include <stdint.h>

#if defined(STBS_BUILDING_LIBRARY)
#define STBS_API __attribute__((visibility("default")))
#else
#define STBS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum stbs_status {
  STBS_OK = 0,
  STBS_ERR_INVALID_ARGUMENT = 1,
  STBS_ERR_IO = 2,
  STBS_ERR_PARSE = 3,
  STBS_ERR_DOMAIN = 4,
  STBS_ERR_NUMERIC = 5,
  STBS_ERR_SCHEMA = 6,
  STBS_ERR_CONFIG = 7,
  STBS_ERR_INTERNAL = 99
} stbs_status;

typedef struct stbs_corpus stbs_corpus;
typedef struct stbs_config stbs_config;
typedef struct stbs_model stbs_model;

typedef struct stbs_progress {
  size_t epoch; /* 1-based, counted within the current call */
  size_t epochs;
  uint64_t step;
  double elbo;
} stbs_progress;

typedef void (*stbs_progress_fn)(const stbs_progress* progress, void* user);

STBS_API const char* stbs_version(void);
STBS_API const char* stbs_last_error(void);
STBS_API const char* stbs_status_name(stbs_status status);
STBS_API void stbs_string_free(char* s);

/* ---- corpus ---------------------------------------------------------- */

/* vocab may be NULL. */
STBS_API stbs_status stbs_corpus_load(const char* counts, const char* authors, const char* vocab,
                                      stbs_corpus** out);
/* Applies the document-frequency, author-spread and documents-per-author
 * filters in place. */
STBS_API stbs_status stbs_corpus_filter(stbs_corpus* corpus, double min_doc_frac,
                                        double max_doc_frac, size_t min_authors_per_term,
                                        size_t min_docs_per_author);
STBS_API stbs_status stbs_corpus_dims(const stbs_corpus* corpus, size_t* docs, size_t* terms,
                                      size_t* authors, size_t* nonzeros);
/* Writes counts and authors, with the original identifiers when use_labels
 * is nonzero and with compact 0-based indices otherwise. When vocab is not
 * NULL one term name per compact index is written there, which also pins
 * the term count on reload. */
STBS_API stbs_status stbs_corpus_write(const stbs_corpus* corpus, const char* counts,
                                       const char* authors, const char* vocab, int use_labels);
STBS_API void stbs_corpus_free(stbs_corpus* corpus);

/* ---- run configuration ----------------------------------------------- */

STBS_API stbs_status stbs_config_new(stbs_config** out);
STBS_API stbs_status stbs_config_load(const char* path, stbs_config** out);
/* Any field of the run configuration, value given as text. Baselines use
 * the key "baseline.<column>". */
STBS_API stbs_status stbs_config_set(stbs_config* config, const char* key, const char* value);
STBS_API stbs_status stbs_config_to_json(const stbs_config* config, char** out);
STBS_API void stbs_config_free(stbs_config* config);

/* ---- anchors ----------------------------------------------------------- */

/* Reads `author_id,position` rows. Arrays are released with stbs_anchors_free. */
STBS_API stbs_status stbs_anchors_load(const char* path, int64_t** authors, double** positions,
                                       size_t* count);
/* Anchors from a covariate column: `levels` is "label=value,label=value";
 * authors whose level is not listed get 0. */
STBS_API stbs_status stbs_anchors_from_covariate(const char* covariates, const char* column,
                                                 const char* levels, int64_t** authors,
                                                 double** positions, size_t* count);
STBS_API void stbs_anchors_free(int64_t* authors, double* positions);

/* ---- models ------------------------------------------------------------ */

/* Builds the design matrix, runs the factorization warm start (or copies the
 * topic blocks of init_state when it is not NULL) and initializes every
 * block. covariates may be NULL for an intercept-only design. Authors missing
 * from the anchor arrays start at 0. */
STBS_API stbs_status stbs_model_init(const stbs_corpus* corpus, const char* covariates,
                                     const char* formula, const stbs_config* config,
                                     const int64_t* anchor_authors,
                                     const double* anchor_positions, size_t anchor_count,
                                     const char* init_state, stbs_model** out);

/* Runs `epochs` further epochs. When checkpoint_path is not NULL the state is
 * written there every checkpoint_every batches and before aborting on a
 * non-finite state. */
STBS_API stbs_status stbs_model_fit(stbs_model* model, const stbs_corpus* corpus, size_t epochs,
                                    const char* checkpoint_path, stbs_progress_fn progress,
                                    void* user);
/* Overrides the worker thread count stored in the model. */
STBS_API stbs_status stbs_model_set_threads(stbs_model* model, size_t threads);

STBS_API stbs_status stbs_model_load(const char* path, stbs_model** out);
STBS_API stbs_status stbs_model_save(const stbs_model* model, const char* path);
STBS_API stbs_status stbs_model_dims(const stbs_model* model, size_t* docs, size_t* terms,
                                     size_t* topics, size_t* authors, size_t* covariates);
STBS_API stbs_status stbs_model_step(const stbs_model* model, uint64_t* step);
/* Copies up to `capacity` trace values; `length` receives the full length. */
STBS_API stbs_status stbs_model_trace(const stbs_model* model, double* values, size_t capacity,
                                      size_t* length);
/* Writes `step,elbo` rows. */
STBS_API stbs_status stbs_model_write_trace(const stbs_model* model, const char* path);
/* Posterior mean of the ideological positions, row-major authors x columns. */
STBS_API stbs_status stbs_model_positions(const stbs_model* model, double* values,
                                          size_t capacity, size_t* rows, size_t* cols);
STBS_API void stbs_model_free(stbs_model* model);

/* ---- summaries ---------------------------------------------------------- */

typedef struct stbs_summary_options {
  const char* what; /* all, polarity, positions, regression, terms, influential */
  size_t top_n;
  int has_ideology;
  double ideology;
  const char* main_covariate; /* may be NULL */
  size_t pool;
  size_t top_docs;
} stbs_summary_options;

STBS_API void stbs_summary_options_default(stbs_summary_options* opts);
/* corpus may be NULL; sections that need it are then skipped. */
STBS_API stbs_status stbs_summarize(const stbs_model* model, const stbs_corpus* corpus,
                                    const stbs_summary_options* opts, const char* out_dir);

/* ---- simulation --------------------------------------------------------- */

typedef struct stbs_simulate_options {
  size_t docs, terms, topics, authors;
  uint64_t seed;
  /* NULL, or an `author_id,position` file pinning positions for all topics. */
  const char* pin_positions;
  /* Pin the gamma rates and precisions to tame values. */
  int moderate;
} stbs_simulate_options;

STBS_API void stbs_simulate_options_default(stbs_simulate_options* opts);
/* Writes counts.csv, authors.csv, covariates.csv and truth.json to out_dir.
 * Covariates are "group" (a/b) and "noise" (x/y), regressed with
 * "~ group + noise". */
STBS_API stbs_status stbs_simulate(const stbs_simulate_options* opts, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* STBS_STBS_H */
