#include "xseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"

#include "xseg/error.hpp"

namespace xseg {

namespace {

double ratio(std::uint64_t num, std::uint64_t den, const char* flag, std::vector<std::string>& flags) {
  if (den == 0) {
    flags.emplace_back(flag);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

EvalReport compute_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) fail(ErrorCode::invalid_argument, "cannot compute metrics on zero superpixels");
  EvalReport r;
  r.counts = c;
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  r.precision = ratio(c.tp, c.tp + c.fp, "precision_degenerate", r.flags);
  r.recall = ratio(c.tp, c.tp + c.fn, "tp_rate_degenerate", r.flags);
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  } else {
    r.flags.emplace_back("f1_degenerate");
  }
  r.tp_rate_percent = 100.0 * r.recall;
  r.fp_rate_percent = 100.0 * ratio(c.fp, c.fp + c.tn, "fp_rate_degenerate", r.flags);
  return r;
}

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const double scaled = std::abs(value) * scale;
  // Nudge by a few ulps so that e.g. 0.125 (stored as 0.12499999...) rounds up.
  const double rounded = std::floor(scaled + 0.5 + 1e-9 * std::max(1.0, scaled)) / scale;
  return std::copysign(rounded, value);
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, round_half_up(value, decimals));
  return buf;
}

namespace {

std::vector<std::string> metric_cells(const EvalReport& r) {
  return {format_fixed(r.accuracy, 2), format_fixed(r.precision, 2), format_fixed(r.f1, 2),
          format_fixed(r.tp_rate_percent, 2), format_fixed(r.fp_rate_percent, 2)};
}

}  // namespace

std::string format_metrics(const EvalReport& report) {
  std::string out;
  for (const std::string& cell : metric_cells(report)) {
    if (!out.empty()) out += ' ';
    out += cell;
  }
  return out;
}

std::string report_table(const std::vector<TableRow>& rows) {
  if (rows.empty()) fail(ErrorCode::invalid_argument, "report_table needs at least one row");
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Data", "Network", "A", "P", "F1", "TP(%)", "FP(%)"});
  for (const TableRow& row : rows) {
    std::vector<std::string> line{row.data, row.network};
    for (std::string& c : metric_cells(row.report)) line.push_back(std::move(c));
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::string out;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out += line[i];
      if (i + 1 < line.size()) out += std::string(width[i] - line[i].size() + 1, ' ');
    }
    out += '\n';
  }
  return out;
}

std::string report_json(const std::string& variant, const EvalReport& r) {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["counts"] = {{"tp", r.counts.tp}, {"fn", r.counts.fn}, {"fp", r.counts.fp}, {"tn", r.counts.tn}};
  j["metrics"] = {{"A", r.accuracy},
                  {"P", r.precision},
                  {"F1", r.f1},
                  {"TP_pct", r.tp_rate_percent},
                  {"FP_pct", r.fp_rate_percent}};
  j["flags"] = r.flags;
  return j.dump(2) + "\n";
}

}  // namespace xseg
