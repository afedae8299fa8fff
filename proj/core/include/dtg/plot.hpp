#pragma once

#include <string>
#include <vector>

#include "dtg/dataset.hpp"

namespace dtg {

struct HistogramSeries {
  std::string label;
  TemporalHistogram histogram;
};

// Static SVG with one bar panel per series; bars show each bin's share of
// the series total over normalized start time.
std::string render_histogram_svg(const std::vector<HistogramSeries>& series,
                                 const std::string& title);

// One text row per bin: range, count, share and a bar of '#'.
std::string render_histogram_text(const TemporalHistogram& h, int width = 40);

}  // namespace dtg
