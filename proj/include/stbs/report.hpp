#pragma once

// Report file and plot-data CSVs for a fitted model.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stbs/corpus.hpp"
#include "stbs/model.hpp"

namespace stbs {

struct SummaryOptions {
  /// all, polarity, positions, regression, terms or influential.
  std::string what = "all";
  std::size_t top_n = 10;
  /// Term rankings for this ideology only; empty means -1, 0 and +1.
  std::optional<double> ideology;
  std::optional<std::string> main_covariate;
  std::size_t pool = 100;
  std::size_t top_docs = 10;
  std::size_t bins = 20;
};

bool is_summary_section(const std::string& what);

/// Writes report.json (schema stbs_report_v1) and the CSVs selected by
/// `opts.what` into `out_dir`. Weighted positions and influential documents
/// need the corpus and are skipped when it is null. Returns the files written.
std::vector<std::filesystem::path> summarize(const Model& model, const DocTermMatrix* corpus,
                                             const SummaryOptions& opts,
                                             const std::filesystem::path& out_dir);

/// Shortest text that reads back to the same double.
std::string format_double(double x);

}  // namespace stbs
