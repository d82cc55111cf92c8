#include "stbs/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "stbs/error.hpp"
#include "stbs/postprocess.hpp"

namespace stbs {

using nlohmann::ordered_json;

namespace {

constexpr const char* kReportSchema = "stbs_report_v1";

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, const std::string& header) : out_(path) {
    if (!out_) fail(ErrorCode::io, "cannot write " + path.string());
    out_ << header << '\n';
  }

  template <typename... Ts>
  void row(const Ts&... fields) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(fields), first = false), ...);
    out_ << '\n';
  }

 private:
  static std::string cell(double x) { return format_double(x); }
  static std::string cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }
  static std::string cell(const char* s) { return cell(std::string(s)); }
  template <typename T>
    requires std::is_integral_v<T>
  static std::string cell(T v) {
    return std::to_string(v);
  }

  std::ofstream out_;
};

std::int64_t label_of(const std::vector<std::int64_t>& labels, std::size_t i) {
  return labels.empty() ? static_cast<std::int64_t>(i) : labels[i];
}

std::string term_text(const Model& model, std::size_t v) {
  if (!model.vocab.empty()) return model.vocab[v];
  return std::to_string(label_of(model.term_labels, v));
}

std::vector<double> ideologies(const SummaryOptions& opts) {
  if (opts.ideology) return {*opts.ideology};
  return {-1.0, 0.0, 1.0};
}

void check_corpus(const Model& model, const DocTermMatrix& m) {
  const auto& s = model.state;
  if (m.num_docs != s.num_docs || m.num_terms != s.num_terms || m.num_authors != s.num_authors) {
    fail(ErrorCode::invalid_argument, "corpus dimensions do not match the model");
  }
}

bool wants(const SummaryOptions& opts, const char* section) {
  return opts.what == "all" || opts.what == section;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

bool is_summary_section(const std::string& what) {
  for (const char* s : {"all", "polarity", "positions", "regression", "terms", "influential"}) {
    if (what == s) return true;
  }
  return false;
}

std::vector<std::filesystem::path> summarize(const Model& model, const DocTermMatrix* corpus,
                                             const SummaryOptions& opts,
                                             const std::filesystem::path& out_dir) {
  if (!is_summary_section(opts.what)) {
    fail(ErrorCode::invalid_argument, "unknown summary section '" + opts.what + "'");
  }
  if (opts.top_n < 1) fail(ErrorCode::invalid_argument, "--top-n must be at least 1");
  if (opts.top_docs < 1 || opts.pool < opts.top_docs) {
    fail(ErrorCode::invalid_argument, "need pool >= top-docs >= 1");
  }
  const auto& s = model.state;
  s.validate();
  if (corpus != nullptr) check_corpus(model, *corpus);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written;
  auto path = [&](const char* name) {
    written.push_back(out_dir / name);
    return written.back();
  };

  const std::size_t K = s.num_topics;
  const std::size_t A = s.num_authors;
  const Vec polarity = topic_polarity(s);
  const CovariateColumn* main = nullptr;
  if (opts.main_covariate) {
    if (!model.design.covariates.has_column(*opts.main_covariate)) {
      fail(ErrorCode::invalid_argument, "unknown covariate '" + *opts.main_covariate + "'");
    }
    main = &model.design.covariates.column(*opts.main_covariate);
  }
  auto group_of = [&](std::size_t a) { return main != nullptr ? main->labels[a] : std::string(); };

  ordered_json report;
  report["schema"] = kReportSchema;
  report["model"] = {{"documents", s.num_docs},
                     {"terms", s.num_terms},
                     {"topics", K},
                     {"authors", A},
                     {"covariates", s.num_covariates},
                     {"position_mode", to_string(s.position_mode)},
                     {"formula", model.design.formula},
                     {"steps", s.step},
                     {"final_elbo", model.elbo_trace.empty() ? ordered_json(nullptr)
                                                             : ordered_json(model.elbo_trace.back())}};

  if (wants(opts, "polarity")) {
    CsvFile csv(path("polarity.csv"), "topic,polarity");
    ordered_json arr = ordered_json::array();
    for (std::size_t k = 0; k < K; ++k) {
      csv.row(k, polarity(static_cast<Eigen::Index>(k)));
      arr.push_back({{"topic", k}, {"polarity", polarity(static_cast<Eigen::Index>(k))}});
    }
    report["polarity"] = std::move(arr);
  }

  if (wants(opts, "positions")) {
    const std::size_t Kp = s.position_cols();
    CsvFile csv(path("positions.csv"), "topic,author_id,position,sd,group");
    for (std::size_t c = 0; c < Kp; ++c) {
      for (std::size_t a = 0; a < A; ++a) {
        const auto ai = static_cast<Eigen::Index>(a);
        const auto ci = static_cast<Eigen::Index>(c);
        csv.row(c, label_of(model.author_labels, a), s.positions.loc(ai, ci),
                std::sqrt(s.positions.var(ai, ci)), group_of(a));
      }
    }
    ordered_json pos;
    if (corpus != nullptr) {
      const Mat w = author_topic_weights(s, *corpus);
      const Vec avg = weighted_average_positions(s, w);
      CsvFile wcsv(path("weighted_positions.csv"), "author_id,weighted_position,group");
      std::map<std::string, std::pair<double, std::size_t>> by_group;
      for (std::size_t a = 0; a < A; ++a) {
        wcsv.row(label_of(model.author_labels, a), avg(static_cast<Eigen::Index>(a)), group_of(a));
        auto& g = by_group[main != nullptr ? group_of(a) : "all"];
        g.first += avg(static_cast<Eigen::Index>(a));
        ++g.second;
      }
      ordered_json groups = ordered_json::array();
      for (const auto& [label, acc] : by_group) {
        groups.push_back({{"group", label},
                          {"mean_weighted_position", acc.first / static_cast<double>(acc.second)},
                          {"authors", acc.second}});
      }
      pos["weighted_group_averages"] = std::move(groups);
    }
    const auto reg = regression_summary(s, model.design, opts.main_covariate, opts.bins);
    ordered_json means = ordered_json::array();
    CsvFile gcsv(path("position_group_means.csv"), "topic,group,mean,authors");
    for (const auto& g : reg.group_means) {
      gcsv.row(g.topic, g.group, g.mean, g.count);
      means.push_back({{"topic", g.topic}, {"group", g.group}, {"mean", g.mean}, {"authors", g.count}});
    }
    pos["group_means"] = std::move(means);
    report["positions"] = std::move(pos);
  }

  if (wants(opts, "regression")) {
    const auto reg = regression_summary(s, model.design, opts.main_covariate, opts.bins);
    ordered_json coefs = ordered_json::array();
    {
      CsvFile csv(path("regression.csv"), "topic,column,name,estimate,se,ccp,label,count");
      for (const auto& r : reg.coefficients) {
        csv.row(r.topic, r.column, r.name, r.estimate, r.se, r.ccp, r.stars, r.count);
        coefs.push_back({{"topic", r.topic}, {"name", r.name}, {"estimate", r.estimate},
                         {"se", r.se}, {"ccp", r.ccp}, {"label", r.stars}, {"count", r.count}});
      }
    }
    ordered_json groups = ordered_json::array();
    {
      CsvFile csv(path("groups.csv"), "topic,group,df,statistic,ccp,label,degenerate");
      for (const auto& g : reg.groups) {
        csv.row(g.topic, g.group, g.test.df, g.test.statistic, g.test.ccp, g.stars,
                g.test.degenerate ? 1 : 0);
        groups.push_back({{"topic", g.topic}, {"group", g.group}, {"df", g.test.df},
                          {"statistic", g.test.statistic}, {"ccp", g.test.ccp},
                          {"label", g.stars}, {"degenerate", g.test.degenerate}});
      }
    }
    {
      CsvFile csv(path("histogram.csv"), "topic,bin,lo,hi,group,count");
      for (const auto& h : reg.histogram) csv.row(h.topic, h.bin, h.lo, h.hi, h.group, h.count);
    }
    ordered_json cats = ordered_json::array();
    {
      CsvFile csv(path("categories.csv"), "covariate,label,count");
      for (const auto& c : reg.categories) {
        csv.row(c.covariate, c.label, c.count);
        cats.push_back({{"covariate", c.covariate}, {"label", c.label}, {"count", c.count}});
      }
    }
    report["regression"] = {{"coefficients", std::move(coefs)},
                            {"groups", std::move(groups)},
                            {"categories", std::move(cats)}};
  }

  if (wants(opts, "terms")) {
    CsvFile csv(path("terms.csv"), "topic,ideology,rank,term_id,term,value");
    ordered_json topics = ordered_json::array();
    for (std::size_t k = 0; k < K; ++k) {
      ordered_json lists = ordered_json::object();
      for (double i : ideologies(opts)) {
        const auto values = corrected_log_intensities(s, k, i);
        const auto top = top_terms(s, k, i, opts.top_n);
        ordered_json list = ordered_json::array();
        for (std::size_t r = 0; r < top.size(); ++r) {
          const auto v = top[r];
          csv.row(k, i, r + 1, label_of(model.term_labels, v), term_text(model, v), values[v]);
          list.push_back(term_text(model, v));
        }
        lists[format_double(i)] = std::move(list);
      }
      topics.push_back({{"topic", k}, {"terms", std::move(lists)}});
    }
    report["terms"] = std::move(topics);
  }

  if (wants(opts, "influential") && corpus != nullptr) {
    CsvFile csv(path("influential.csv"), "topic,rank,doc_id,chi,clamped");
    ordered_json topics = ordered_json::array();
    const std::size_t pool = std::min(opts.pool, s.num_docs);
    const std::size_t top = std::min(opts.top_docs, pool);
    for (std::size_t k = 0; k < K; ++k) {
      ordered_json list = ordered_json::array();
      const auto docs = influential_docs(s, *corpus, k, pool, top);
      for (std::size_t r = 0; r < docs.size(); ++r) {
        const auto id = label_of(model.doc_labels, docs[r].doc);
        csv.row(k, r + 1, id, docs[r].chi, docs[r].clamped ? 1 : 0);
        list.push_back({{"doc_id", id}, {"chi", docs[r].chi}, {"clamped", docs[r].clamped}});
      }
      topics.push_back({{"topic", k}, {"documents", std::move(list)}});
    }
    report["influential"] = std::move(topics);
  }

  const auto report_path = path("report.json");
  std::ofstream out(report_path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + report_path.string());
  out << report.dump(1) << '\n';
  return written;
}

}  // namespace stbs
