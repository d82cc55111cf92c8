#include "stbs/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "stbs/error.hpp"

namespace stbs {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

bool parse_int(const std::string& field, std::int64_t& out) {
  const std::string f = trim(field);
  if (f.empty()) return false;
  const char* first = f.data();
  const char* last = f.data() + f.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  return in;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

}  // namespace

std::int64_t DocTermMatrix::doc_total(std::size_t d) const {
  auto c = doc_counts(d);
  return std::accumulate(c.begin(), c.end(), std::int64_t{0});
}

std::int64_t DocTermMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::vector<std::vector<std::uint32_t>> DocTermMatrix::docs_by_author() const {
  std::vector<std::vector<std::uint32_t>> out(num_authors);
  for (std::size_t d = 0; d < num_docs; ++d) {
    out[doc_author[d]].push_back(static_cast<std::uint32_t>(d));
  }
  return out;
}

std::string DocTermMatrix::term_name(std::size_t v) const {
  if (!vocab.empty()) return vocab[v];
  if (!term_labels.empty()) return std::to_string(term_labels[v]);
  return std::to_string(v);
}

void DocTermMatrix::validate() const {
  if (num_docs == 0) fail(ErrorCode::invalid_argument, "no non-empty documents");
  if (doc_offsets.size() != num_docs + 1 || doc_offsets.front() != 0 ||
      doc_offsets.back() != term_index.size() || counts.size() != term_index.size()) {
    fail(ErrorCode::internal, "document-term matrix offsets are inconsistent");
  }
  if (doc_author.size() != num_docs) {
    fail(ErrorCode::invalid_argument, "every document needs an author assignment");
  }
  for (std::size_t d = 0; d < num_docs; ++d) {
    if (doc_author[d] >= num_authors) {
      fail(ErrorCode::invalid_argument, "author index out of range");
    }
    auto t = terms(d);
    auto c = doc_counts(d);
    if (t.empty()) fail(ErrorCode::invalid_argument, "document without counts");
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] >= num_terms) fail(ErrorCode::invalid_argument, "term index out of range");
      if (c[i] <= 0) fail(ErrorCode::invalid_argument, "counts must be positive");
      if (i > 0 && t[i] <= t[i - 1]) {
        fail(ErrorCode::invalid_argument, "terms within a document must be unique");
      }
    }
  }
  if (!vocab.empty() && vocab.size() != num_terms) {
    fail(ErrorCode::invalid_argument, "vocabulary size does not match term count");
  }
}

std::vector<TripletEntry> read_count_triplets(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || trim(line) != "doc_id,term_id,count") {
    fail(ErrorCode::parse, where(path, 1) + ": expected header doc_id,term_id,count");
  }
  std::vector<TripletEntry> out;
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    TripletEntry e{};
    if (fields.size() != 3 || !parse_int(fields[0], e.doc) || !parse_int(fields[1], e.term) ||
        !parse_int(fields[2], e.count)) {
      fail(ErrorCode::parse, where(path, lineno) + ": malformed row '" + line + "'");
    }
    if (e.doc < 0 || e.term < 0) {
      fail(ErrorCode::parse, where(path, lineno) + ": index out of range");
    }
    if (e.count <= 0) {
      fail(ErrorCode::parse, where(path, lineno) + ": count must be positive");
    }
    if (!seen.insert({e.doc, e.term}).second) {
      fail(ErrorCode::parse, where(path, lineno) + ": duplicate (doc, term) pair");
    }
    out.push_back(e);
  }
  return out;
}

std::map<std::int64_t, std::int64_t> read_author_map(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || trim(line) != "doc_id,author_id") {
    fail(ErrorCode::parse, where(path, 1) + ": expected header doc_id,author_id");
  }
  std::map<std::int64_t, std::int64_t> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    std::int64_t doc = 0;
    std::int64_t author = 0;
    if (fields.size() != 2 || !parse_int(fields[0], doc) || !parse_int(fields[1], author)) {
      fail(ErrorCode::parse, where(path, lineno) + ": malformed row '" + line + "'");
    }
    if (doc < 0 || author < 0) {
      fail(ErrorCode::parse, where(path, lineno) + ": index out of range");
    }
    if (!out.emplace(doc, author).second) {
      fail(ErrorCode::parse, where(path, lineno) + ": document listed twice");
    }
  }
  return out;
}

std::vector<std::string> read_vocab(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

DocTermMatrix make_doc_term_matrix(const std::vector<TripletEntry>& entries,
                                   const std::map<std::int64_t, std::int64_t>& authors,
                                   std::vector<std::string> vocab) {
  if (entries.empty()) fail(ErrorCode::invalid_argument, "no non-empty documents");

  std::vector<TripletEntry> sorted = entries;
  std::sort(sorted.begin(), sorted.end(), [](const TripletEntry& a, const TripletEntry& b) {
    return a.doc != b.doc ? a.doc < b.doc : a.term < b.term;
  });

  std::int64_t max_term = 0;
  for (const auto& e : sorted) max_term = std::max(max_term, e.term);

  DocTermMatrix m;
  if (!vocab.empty()) {
    if (static_cast<std::int64_t>(vocab.size()) <= max_term) {
      fail(ErrorCode::invalid_argument, "term id exceeds vocabulary size");
    }
    m.num_terms = vocab.size();
  } else {
    m.num_terms = static_cast<std::size_t>(max_term) + 1;
  }
  m.term_labels.resize(m.num_terms);
  std::iota(m.term_labels.begin(), m.term_labels.end(), std::int64_t{0});
  m.vocab = std::move(vocab);

  // Authors referenced by documents with counts, compacted in label order.
  std::set<std::int64_t> author_set;
  for (const auto& e : sorted) {
    auto it = authors.find(e.doc);
    if (it == authors.end()) {
      fail(ErrorCode::invalid_argument,
           "document " + std::to_string(e.doc) + " has no author assignment");
    }
    author_set.insert(it->second);
  }
  m.author_labels.assign(author_set.begin(), author_set.end());
  std::map<std::int64_t, std::uint32_t> author_index;
  for (std::size_t a = 0; a < m.author_labels.size(); ++a) {
    author_index[m.author_labels[a]] = static_cast<std::uint32_t>(a);
  }
  m.num_authors = m.author_labels.size();

  m.doc_offsets.push_back(0);
  std::int64_t current = -1;
  for (const auto& e : sorted) {
    if (e.doc != current) {
      if (current >= 0) m.doc_offsets.push_back(m.term_index.size());
      current = e.doc;
      m.doc_labels.push_back(e.doc);
      m.doc_author.push_back(author_index.at(authors.at(e.doc)));
    }
    m.term_index.push_back(static_cast<std::uint32_t>(e.term));
    m.counts.push_back(e.count);
  }
  m.doc_offsets.push_back(m.term_index.size());
  m.num_docs = m.doc_labels.size();
  m.validate();
  return m;
}

DocTermMatrix load_counts(const std::filesystem::path& counts,
                          const std::filesystem::path& authors,
                          const std::optional<std::filesystem::path>& vocab) {
  auto entries = read_count_triplets(counts);
  auto author_map = read_author_map(authors);
  std::vector<std::string> words;
  if (vocab) words = read_vocab(*vocab);
  return make_doc_term_matrix(entries, author_map, std::move(words));
}

void write_counts(const DocTermMatrix& m, const std::filesystem::path& counts,
                  const std::filesystem::path& authors, bool use_labels) {
  std::ofstream c(counts);
  if (!c) fail(ErrorCode::io, "cannot write " + counts.string());
  c << "doc_id,term_id,count\n";
  for (std::size_t d = 0; d < m.num_docs; ++d) {
    auto t = m.terms(d);
    auto n = m.doc_counts(d);
    const std::int64_t doc = use_labels ? m.doc_labels[d] : static_cast<std::int64_t>(d);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::int64_t term = use_labels ? m.term_labels[t[i]] : t[i];
      c << doc << ',' << term << ',' << n[i] << '\n';
    }
  }
  std::ofstream a(authors);
  if (!a) fail(ErrorCode::io, "cannot write " + authors.string());
  a << "doc_id,author_id\n";
  for (std::size_t d = 0; d < m.num_docs; ++d) {
    const std::int64_t doc = use_labels ? m.doc_labels[d] : static_cast<std::int64_t>(d);
    const std::int64_t author = use_labels ? m.author_labels[m.doc_author[d]]
                                           : static_cast<std::int64_t>(m.doc_author[d]);
    a << doc << ',' << author << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

/// Keeps the listed documents and terms, re-indexing both and the authors.
DocTermMatrix subset(const DocTermMatrix& m, const std::vector<bool>& keep_doc,
                     const std::vector<bool>& keep_term) {
  std::vector<std::int64_t> term_map(m.num_terms, -1);
  DocTermMatrix out;
  for (std::size_t v = 0; v < m.num_terms; ++v) {
    if (!keep_term[v]) continue;
    term_map[v] = static_cast<std::int64_t>(out.term_labels.size());
    out.term_labels.push_back(m.term_labels[v]);
    if (!m.vocab.empty()) out.vocab.push_back(m.vocab[v]);
  }
  out.num_terms = out.term_labels.size();

  std::vector<std::int64_t> author_map(m.num_authors, -1);
  std::vector<bool> author_used(m.num_authors, false);
  std::vector<std::vector<std::pair<std::uint32_t, std::int64_t>>> rows;
  std::vector<std::size_t> kept_docs;
  for (std::size_t d = 0; d < m.num_docs; ++d) {
    if (!keep_doc[d]) continue;
    std::vector<std::pair<std::uint32_t, std::int64_t>> row;
    auto t = m.terms(d);
    auto c = m.doc_counts(d);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (term_map[t[i]] >= 0) row.emplace_back(static_cast<std::uint32_t>(term_map[t[i]]), c[i]);
    }
    if (row.empty()) continue;
    rows.push_back(std::move(row));
    kept_docs.push_back(d);
    author_used[m.doc_author[d]] = true;
  }
  for (std::size_t a = 0; a < m.num_authors; ++a) {
    if (!author_used[a]) continue;
    author_map[a] = static_cast<std::int64_t>(out.author_labels.size());
    out.author_labels.push_back(m.author_labels[a]);
  }
  out.num_authors = out.author_labels.size();

  out.doc_offsets.push_back(0);
  for (std::size_t i = 0; i < kept_docs.size(); ++i) {
    const std::size_t d = kept_docs[i];
    out.doc_labels.push_back(m.doc_labels[d]);
    out.doc_author.push_back(static_cast<std::uint32_t>(author_map[m.doc_author[d]]));
    for (auto [v, c] : rows[i]) {
      out.term_index.push_back(v);
      out.counts.push_back(c);
    }
    out.doc_offsets.push_back(out.term_index.size());
  }
  out.num_docs = kept_docs.size();
  return out;
}

/// One pass of the filter sequence. Returns true if anything was removed.
bool filter_pass(DocTermMatrix& m, const FilterSettings& f) {
  const double n_docs = static_cast<double>(m.num_docs);
  std::vector<std::size_t> doc_freq(m.num_terms, 0);
  for (auto v : m.term_index) ++doc_freq[v];

  std::vector<bool> keep_term(m.num_terms, true);
  for (std::size_t v = 0; v < m.num_terms; ++v) {
    const double df = static_cast<double>(doc_freq[v]);
    if (df < f.min_doc_frac * n_docs || df > f.max_doc_frac * n_docs) keep_term[v] = false;
  }

  // Distinct authors per surviving term.
  std::vector<std::set<std::uint32_t>> term_authors(m.num_terms);
  for (std::size_t d = 0; d < m.num_docs; ++d) {
    for (auto v : m.terms(d)) {
      if (keep_term[v]) term_authors[v].insert(m.doc_author[d]);
    }
  }
  for (std::size_t v = 0; v < m.num_terms; ++v) {
    if (keep_term[v] && term_authors[v].size() < f.min_authors_per_term) keep_term[v] = false;
  }

  std::vector<std::size_t> docs_per_author(m.num_authors, 0);
  for (auto a : m.doc_author) ++docs_per_author[a];
  std::vector<bool> keep_doc(m.num_docs, true);
  for (std::size_t d = 0; d < m.num_docs; ++d) {
    if (docs_per_author[m.doc_author[d]] < f.min_docs_per_author) keep_doc[d] = false;
  }

  DocTermMatrix next = subset(m, keep_doc, keep_term);
  const bool changed = next.num_docs != m.num_docs || next.num_terms != m.num_terms ||
                       next.nnz() != m.nnz();
  m = std::move(next);
  return changed;
}

}  // namespace

DocTermMatrix apply_corpus_filters(const DocTermMatrix& m, const FilterSettings& f) {
  if (!(f.min_doc_frac >= 0.0 && f.min_doc_frac < f.max_doc_frac && f.max_doc_frac <= 1.0)) {
    fail(ErrorCode::invalid_argument, "filter thresholds must satisfy 0 <= min < max <= 1");
  }
  DocTermMatrix out = m;
  for (;;) {
    const bool changed = filter_pass(out, f);
    if (out.num_docs == 0 || out.num_terms == 0) {
      fail(ErrorCode::invalid_argument, "empty corpus after filtering");
    }
    if (!changed) break;
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------

const CovariateColumn& CovariateTable::column(const std::string& name) const {
  for (const auto& c : columns) {
    if (c.name == name) return c;
  }
  fail(ErrorCode::invalid_argument, "unknown covariate column '" + name + "'");
}

bool CovariateTable::has_column(const std::string& name) const {
  return std::any_of(columns.begin(), columns.end(),
                     [&](const CovariateColumn& c) { return c.name == name; });
}

void CovariateTable::validate() const {
  for (const auto& c : columns) {
    if (c.labels.size() != num_authors) {
      fail(ErrorCode::invalid_argument, "column '" + c.name + "' needs one label per author");
    }
    if (std::find(c.labels.begin(), c.labels.end(), c.baseline) == c.labels.end()) {
      fail(ErrorCode::invalid_argument,
           "baseline '" + c.baseline + "' does not occur in column '" + c.name + "'");
    }
  }
}

CovariateTable load_covariates(const std::filesystem::path& path,
                               const std::vector<std::int64_t>& author_labels,
                               const std::map<std::string, std::string>& baselines,
                               std::vector<std::string>* warnings) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::parse, where(path, 1) + ": empty file");
  auto header = split_csv(line);
  for (auto& h : header) h = trim(h);
  if (header.empty() || header[0] != "author_id") {
    fail(ErrorCode::parse, where(path, 1) + ": header must start with author_id");
  }
  const std::size_t ncol = header.size() - 1;
  std::map<std::int64_t, std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    std::int64_t id = 0;
    if (fields.size() != header.size() || !parse_int(fields[0], id)) {
      fail(ErrorCode::parse, where(path, lineno) + ": malformed row '" + line + "'");
    }
    std::vector<std::string> labels;
    for (std::size_t j = 1; j < fields.size(); ++j) labels.push_back(trim(fields[j]));
    if (!rows.emplace(id, std::move(labels)).second) {
      fail(ErrorCode::parse, where(path, lineno) + ": author listed twice");
    }
  }

  CovariateTable t;
  t.num_authors = author_labels.size();
  t.columns.resize(ncol);
  for (std::size_t j = 0; j < ncol; ++j) t.columns[j].name = header[j + 1];
  for (std::size_t a = 0; a < author_labels.size(); ++a) {
    auto it = rows.find(author_labels[a]);
    if (it == rows.end()) {
      fail(ErrorCode::invalid_argument,
           "author " + std::to_string(author_labels[a]) + " missing from covariates file");
    }
    for (std::size_t j = 0; j < ncol; ++j) t.columns[j].labels.push_back(it->second[j]);
  }
  for (const auto& [name, base] : baselines) {
    if (std::none_of(t.columns.begin(), t.columns.end(),
                     [&](const CovariateColumn& c) { return c.name == name; })) {
      fail(ErrorCode::invalid_argument, "baseline declared for unknown column '" + name + "'");
    }
  }
  for (auto& c : t.columns) {
    auto it = baselines.find(c.name);
    if (it != baselines.end()) {
      c.baseline = it->second;
    } else if (!c.labels.empty()) {
      c.baseline = *std::min_element(c.labels.begin(), c.labels.end());
      if (warnings) {
        warnings->push_back("no baseline declared for '" + c.name + "', using '" +
                            c.baseline + "'");
      }
    }
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------

namespace {

class FormulaParser {
 public:
  explicit FormulaParser(const std::string& s) : s_(s) {}

  std::vector<FormulaTerm> parse() {
    skip_ws();
    if (!consume('~')) error("formula must start with '~'");
    std::vector<FormulaTerm> terms;
    terms.push_back(term());
    skip_ws();
    while (consume('+')) {
      terms.push_back(term());
      skip_ws();
    }
    if (pos_ != s_.size()) error("unexpected input");
    return terms;
  }

 private:
  FormulaTerm term() {
    FormulaTerm t;
    t.main = name();
    skip_ws();
    if (consume('*')) {
      skip_ws();
      if (consume('(')) {
        t.interacts.push_back(name());
        skip_ws();
        while (consume('+')) {
          t.interacts.push_back(name());
          skip_ws();
        }
        if (!consume(')')) error("expected ')'");
      } else {
        t.interacts.push_back(name());
      }
    }
    return t;
  }

  std::string name() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (c == '+' || c == '*' || c == '(' || c == ')' || c == '~' || c == ' ' || c == '\t') break;
      ++pos_;
    }
    if (pos_ == start) error("expected a column name");
    return s_.substr(start, pos_ - start);
  }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  bool consume(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  [[noreturn]] void error(const std::string& msg) const {
    fail(ErrorCode::parse,
         "formula parse error at position " + std::to_string(pos_) + ": " + msg);
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

/// Non-baseline levels of a column, sorted.
std::vector<std::string> levels(const CovariateColumn& c) {
  std::set<std::string> s(c.labels.begin(), c.labels.end());
  s.erase(c.baseline);
  return {s.begin(), s.end()};
}

}  // namespace

std::vector<FormulaTerm> parse_formula(const std::string& formula) {
  return FormulaParser(formula).parse();
}

DesignMatrix DesignMatrix::intercept_only(std::size_t num_authors) {
  DesignMatrix d;
  d.x = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(num_authors), 1);
  d.column_names = {"(Intercept)"};
  d.formula = "~ 1";
  d.covariates.num_authors = num_authors;
  return d;
}

DesignMatrix build_design_matrix(const CovariateTable& table, const std::string& formula) {
  table.validate();
  const auto terms = parse_formula(formula);

  std::vector<std::string> mains;
  std::vector<std::pair<std::string, std::string>> interactions;
  auto add_main = [&](const std::string& n) {
    if (std::find(mains.begin(), mains.end(), n) == mains.end()) mains.push_back(n);
  };
  for (const auto& t : terms) {
    add_main(t.main);
    for (const auto& o : t.interacts) add_main(o);
    for (const auto& o : t.interacts) {
      if (o == t.main) fail(ErrorCode::parse, "a covariate cannot interact with itself");
      interactions.emplace_back(t.main, o);
    }
  }
  for (const auto& n : mains) table.column(n);  // throws on unknown column

  const auto A = static_cast<Eigen::Index>(table.num_authors);
  std::vector<Eigen::VectorXd> cols;
  DesignMatrix dm;
  dm.formula = formula;
  dm.covariates = table;
  cols.push_back(Eigen::VectorXd::Ones(A));
  dm.column_names.push_back("(Intercept)");

  std::map<std::string, std::vector<std::pair<std::string, std::size_t>>> indicator_cols;
  for (const auto& n : mains) {
    const auto& c = table.column(n);
    auto& group = dm.term_groups[n];
    for (const auto& lvl : levels(c)) {
      Eigen::VectorXd col(A);
      for (Eigen::Index a = 0; a < A; ++a) {
        col(a) = c.labels[static_cast<std::size_t>(a)] == lvl ? 1.0 : 0.0;
      }
      group.push_back(cols.size());
      indicator_cols[n].emplace_back(lvl, cols.size());
      dm.column_names.push_back(n + "[" + lvl + "]");
      cols.push_back(col);
    }
  }
  for (const auto& [m, o] : interactions) {
    auto& group = dm.term_groups[m + ":" + o];
    for (const auto& [ml, mi] : indicator_cols[m]) {
      for (const auto& [ol, oi] : indicator_cols[o]) {
        group.push_back(cols.size());
        dm.column_names.push_back(m + "[" + ml + "]:" + o + "[" + ol + "]");
        cols.push_back(cols[mi].cwiseProduct(cols[oi]));
      }
    }
  }

  dm.x.resize(A, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) dm.x.col(static_cast<Eigen::Index>(j)) = cols[j];
  return dm;
}

}  // namespace stbs
