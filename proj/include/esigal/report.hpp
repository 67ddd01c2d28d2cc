#pragma once

#include "esigal/evaluation.hpp"

#include <array>
#include <string>
#include <vector>

namespace esigal {

/// "intra" for "intra", "inter" for "inter-fold-k".
std::string split_family(const std::string& split);

struct SummaryRow {
  std::string split;  // family
  std::string domain;
  std::string model;
  int lag_ms = 0;
  int window_ms = 0;
  int n_subjects = 0;
  Pcc3 mean{};
  std::array<bool, 3> best{};  // maximum of its (split, domain, axis) block
};

struct Report {
  std::vector<SummaryRow> rows;
  /// Grid cells left out of the means, with the reason.
  std::vector<std::string> ragged;
};

/// Means across subjects per (split, domain, model, lag, window). A cell is
/// averaged only if every subject of its split appears exactly once.
Report aggregate_report(const std::vector<ResultRecord>& records);

std::string results_csv(const std::vector<ResultRecord>& records);
std::vector<ResultRecord> parse_results_csv(const std::string& text);

std::string summary_csv(const Report& report);

struct TTestRow {
  std::string split;
  int lag_ms = 0;
  int window_ms = 0;
  char axis = 'x';
  std::string a;  // "<model>/<domain>"; alternative: mean(a) > mean(b)
  std::string b;
  int n = 0;
  double t = 0.0;
  double p = 0.0;
};

/// Paired per-subject tests at one grid cell: every model pair within a
/// domain (later label vs earlier label) and sensor vs source per model.
/// Comparisons without two paired subjects or with zero-variance
/// differences are skipped and listed in `skipped`.
std::vector<TTestRow> run_ttests(const std::vector<ResultRecord>& records, int lag_ms, int window_ms,
                                 std::vector<std::string>* skipped = nullptr);

std::string ttests_csv(const std::vector<TTestRow>& rows);

/// Markdown grids: rows direction x model x lag, columns domain x window;
/// block maxima in bold.
std::string render_markdown(const Report& report, const std::vector<TTestRow>& ttests = {});

}  // namespace esigal
