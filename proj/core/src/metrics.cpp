#include "dtg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dtg {

double temporal_iou(const Interval& a, const Interval& b) {
  if (a.s > a.e || b.s > b.e) throw std::invalid_argument("temporal_iou: interval with s > e");
  const int inter = std::max(0, std::min(a.e, b.e) - std::max(a.s, b.s) + 1);
  const int uni = a.length() + b.length() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

void check_sizes(std::size_t p, std::size_t g) {
  if (p != g) throw std::invalid_argument("recall: predictions and golds differ in count");
}

// Index of the first top-n candidate with IoU > theta, or -1.
int first_hit(const RankedIntervals& cands, const Interval& gold, int n, double theta) {
  const int limit = std::min<int>(n, static_cast<int>(cands.size()));
  for (int i = 0; i < limit; ++i) {
    if (temporal_iou(cands[static_cast<std::size_t>(i)], gold) > theta) return i;
  }
  return -1;
}

}  // namespace

double recall_at_n(std::span<const RankedIntervals> predictions,
                   std::span<const Interval> golds, int n, double theta) {
  check_sizes(predictions.size(), golds.size());
  if (golds.empty()) return 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (first_hit(predictions[i], golds[i], n, theta) >= 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

double discounted_recall_at_n(std::span<const RankedIntervals> predictions,
                              std::span<const Interval> golds,
                              std::span<const int> durations, int n, double theta) {
  check_sizes(predictions.size(), golds.size());
  check_sizes(durations.size(), golds.size());
  if (golds.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const int h = first_hit(predictions[i], golds[i], n, theta);
    if (h < 0) continue;
    if (durations[i] < 1) throw std::invalid_argument("discounted recall: duration < 1");
    const Interval& p = predictions[i][static_cast<std::size_t>(h)];
    const double dur = durations[i];
    const double alpha_s = std::clamp(1.0 - std::abs(p.s - golds[i].s) / dur, 0.0, 1.0);
    const double alpha_e = std::clamp(1.0 - std::abs(p.e - golds[i].e) / dur, 0.0, 1.0);
    total += alpha_s * alpha_e;
  }
  return total / static_cast<double>(golds.size());
}

std::optional<double> MetricTable::find(const std::string& method, const std::string& metric,
                                        int n, double theta, const std::string& split) const {
  for (const auto& r : rows) {
    if (r.method == method && r.metric == metric && r.n == n &&
        std::abs(r.theta - theta) < 1e-9 && (split.empty() || r.split == split)) {
      return r.value;
    }
  }
  return std::nullopt;
}

std::string MetricTable::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(8) << "method" << std::setw(10) << "split" << std::setw(18)
     << "metric" << std::right << std::setw(8) << "value" << '\n';
  for (const auto& r : rows) {
    std::ostringstream name;
    name << r.metric << '@' << r.n << ",IoU=" << std::fixed << std::setprecision(1) << r.theta;
    os << std::left << std::setw(8) << r.method << std::setw(10) << r.split << std::setw(18)
       << name.str() << std::right << std::setw(8) << std::fixed << std::setprecision(2)
       << 100.0 * r.value << '\n';
  }
  return os.str();
}

std::string MetricTable::to_jsonl() const {
  std::ostringstream os;
  for (const auto& r : rows) {
    nlohmann::json j{{"method", r.method}, {"metric", r.metric}, {"n", r.n},
                     {"theta", r.theta},   {"split", r.split},   {"value", r.value}};
    os << j.dump() << '\n';
  }
  return os.str();
}

void append_recall_rows(MetricTable& table, const std::string& method,
                        const std::string& split, std::span<const RankedIntervals> predictions,
                        std::span<const Interval> golds, std::span<const int> durations,
                        std::span<const int> n_values, std::span<const double> thresholds) {
  for (int n : n_values) {
    for (double theta : thresholds) {
      table.rows.push_back({method, "R", n, theta, split,
                            recall_at_n(predictions, golds, n, theta)});
      table.rows.push_back({method, "dR", n, theta, split,
                            discounted_recall_at_n(predictions, golds, durations, n, theta)});
    }
  }
}

}  // namespace dtg
