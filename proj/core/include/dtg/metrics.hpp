#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dtg {

// Inclusive clip interval [s, e]; length is e - s + 1.
struct Interval {
  int s = 0;
  int e = 0;

  int length() const { return e - s + 1; }
  bool operator==(const Interval&) const = default;
};

double temporal_iou(const Interval& a, const Interval& b);

// A ranked list of candidate intervals for one sample; missing ranks are
// treated as empty predictions that never hit.
using RankedIntervals = std::vector<Interval>;

// Fraction of samples whose top-n candidates include one with IoU > theta.
double recall_at_n(std::span<const RankedIntervals> predictions,
                   std::span<const Interval> golds, int n, double theta);

// Like recall_at_n, but each hit counts alpha_s * alpha_e with
// alpha = 1 - |offset| / duration, clamped to [0, 1]. The first hitting
// candidate within the top n is the one discounted.
double discounted_recall_at_n(std::span<const RankedIntervals> predictions,
                              std::span<const Interval> golds,
                              std::span<const int> durations, int n, double theta);

struct MetricRow {
  std::string method;  // "model" or "prior"
  std::string metric;  // "R" or "dR"
  int n = 1;
  double theta = 0.0;
  std::string split;
  double value = 0.0;
};

struct MetricTable {
  std::vector<MetricRow> rows;

  std::optional<double> find(const std::string& method, const std::string& metric, int n,
                             double theta, const std::string& split = "") const;
  std::string to_text() const;
  std::string to_jsonl() const;
};

// Appends R@n and dR@n rows for every (n, theta) pair.
void append_recall_rows(MetricTable& table, const std::string& method,
                        const std::string& split, std::span<const RankedIntervals> predictions,
                        std::span<const Interval> golds, std::span<const int> durations,
                        std::span<const int> n_values, std::span<const double> thresholds);

}  // namespace dtg
