#pragma once

// Sparse document-term counts, author metadata, covariates and design
// matrices built from model formulas.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace stbs {

/// Sparse D x V count matrix stored row-wise (CSR), plus the document -> author
/// map. Indices are compact (0-based, dense); the *_labels vectors keep the
/// identifiers used in the input files.
struct DocTermMatrix {
  std::size_t num_docs = 0;
  std::size_t num_terms = 0;
  std::size_t num_authors = 0;

  std::vector<std::size_t> doc_offsets;  // size num_docs + 1
  std::vector<std::uint32_t> term_index;
  std::vector<std::int64_t> counts;
  std::vector<std::uint32_t> doc_author;

  std::vector<std::int64_t> doc_labels;
  std::vector<std::int64_t> term_labels;
  std::vector<std::int64_t> author_labels;
  std::vector<std::string> vocab;  // empty, or one string per term

  std::size_t nnz() const { return term_index.size(); }

  std::span<const std::uint32_t> terms(std::size_t d) const {
    return {term_index.data() + doc_offsets[d], doc_offsets[d + 1] - doc_offsets[d]};
  }
  std::span<const std::int64_t> doc_counts(std::size_t d) const {
    return {counts.data() + doc_offsets[d], doc_offsets[d + 1] - doc_offsets[d]};
  }
  std::int64_t doc_total(std::size_t d) const;
  std::int64_t total() const;

  /// Documents of each author, in increasing document index.
  std::vector<std::vector<std::uint32_t>> docs_by_author() const;

  /// Name of term v: vocab string when available, otherwise its label.
  std::string term_name(std::size_t v) const;

  /// Checks every structural invariant; throws on violation.
  void validate() const;
};

struct TripletEntry {
  std::int64_t doc;
  std::int64_t term;
  std::int64_t count;
};

/// Reads a `doc_id,term_id,count` file. Errors name the offending line.
std::vector<TripletEntry> read_count_triplets(const std::filesystem::path& path);

/// Reads a `doc_id,author_id` file.
std::map<std::int64_t, std::int64_t> read_author_map(const std::filesystem::path& path);

std::vector<std::string> read_vocab(const std::filesystem::path& path);

/// Builds the matrix from raw triplets. Documents are the distinct doc ids
/// that carry at least one entry (in increasing id order); the term range is
/// [0, max term id] or [0, vocab size) if a vocabulary is given.
DocTermMatrix make_doc_term_matrix(const std::vector<TripletEntry>& entries,
                                   const std::map<std::int64_t, std::int64_t>& authors,
                                   std::vector<std::string> vocab = {});

DocTermMatrix load_counts(const std::filesystem::path& counts,
                          const std::filesystem::path& authors,
                          const std::optional<std::filesystem::path>& vocab = std::nullopt);

/// Writes counts and author files. With `use_labels` the original identifiers
/// are written, otherwise the compact indices.
void write_counts(const DocTermMatrix& m, const std::filesystem::path& counts,
                  const std::filesystem::path& authors, bool use_labels = true);

struct FilterSettings {
  double min_doc_frac = 0.001;
  double max_doc_frac = 0.30;
  std::size_t min_authors_per_term = 10;
  std::size_t min_docs_per_author = 24;

  /// Thresholds that keep every non-empty term and author.
  static FilterSettings identity() { return {0.0, 1.0, 1, 1}; }
};

/// Document-frequency band, then author spread per term, then minimum
/// documents per author, then empty documents; repeated until nothing changes.
DocTermMatrix apply_corpus_filters(const DocTermMatrix& m, const FilterSettings& f);

// ---------------------------------------------------------------------------

struct CovariateColumn {
  std::string name;
  std::vector<std::string> labels;  // one per author
  std::string baseline;
};

struct CovariateTable {
  std::size_t num_authors = 0;
  std::vector<CovariateColumn> columns;

  const CovariateColumn& column(const std::string& name) const;
  bool has_column(const std::string& name) const;
  void validate() const;
};

/// Reads `author_id,<col1>,...` rows and aligns them with `author_labels`
/// (row a of the table belongs to author_labels[a]). Baselines come from the
/// map; columns without a declared baseline fall back to the smallest label.
CovariateTable load_covariates(const std::filesystem::path& path,
                               const std::vector<std::int64_t>& author_labels,
                               const std::map<std::string, std::string>& baselines,
                               std::vector<std::string>* warnings = nullptr);

struct DesignMatrix {
  Eigen::MatrixXd x;  // A x L, column 0 is the intercept
  std::vector<std::string> column_names;
  /// Group name -> columns; one group per covariate and per interaction block.
  std::map<std::string, std::vector<std::size_t>> term_groups;
  std::string formula;
  CovariateTable covariates;

  std::size_t num_authors() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t num_columns() const { return static_cast<std::size_t>(x.cols()); }
  /// Intercept-only design for A authors.
  static DesignMatrix intercept_only(std::size_t num_authors);
};

struct FormulaTerm {
  std::string main;                   // covariate name
  std::vector<std::string> interacts;  // for `main * (a + b)`; empty otherwise
};

/// Parses `~ term (+ term)*` where a term is a column name or
/// `col * (col2 + ... )` / `col * col2`.
std::vector<FormulaTerm> parse_formula(const std::string& formula);

DesignMatrix build_design_matrix(const CovariateTable& table, const std::string& formula);

}  // namespace stbs
