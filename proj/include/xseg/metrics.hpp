#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xseg {

/// Anomaly is the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fn = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fn + fp + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp; fn += o.fn; fp += o.fp; tn += o.tn;
    return *this;
  }
};

struct EvalReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double tp_rate_percent = 0.0;
  double fp_rate_percent = 0.0;
  ConfusionCounts counts;
  std::vector<std::string> flags;  // degenerate denominators, reported as 0
};

EvalReport compute_metrics(const ConfusionCounts& counts);

/// Half-up rounding to `decimals` places, tolerant of binary representation
/// error (0.125 -> 0.13, 0.9519... -> 0.95).
double round_half_up(double value, int decimals);
std::string format_fixed(double value, int decimals);

struct TableRow {
  std::string data;     // channel variant
  std::string network;  // classifier name
  EvalReport report;
};

/// "A P F1 TP% FP%" values of one row, e.g. "0.97 0.95 0.97 99.00 5.00".
std::string format_metrics(const EvalReport& report);

/// Fixed-width table: Data, Network, A, P, F1, TP(%), FP(%).
std::string report_table(const std::vector<TableRow>& rows);

/// {"variant", "counts", "metrics": {"A","P","F1","TP_pct","FP_pct"}, "flags"}
std::string report_json(const std::string& variant, const EvalReport& report);

}  // namespace xseg
