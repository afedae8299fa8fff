#include "dtg/plot.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace dtg {
namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_histogram_svg(const std::vector<HistogramSeries>& series,
                                 const std::string& title) {
  constexpr int kPanelW = 360;
  constexpr int kPanelH = 220;
  constexpr int kMargin = 40;
  const int n = static_cast<int>(series.size());
  const int width = std::max(1, n) * (kPanelW + kMargin) + kMargin;
  const int height = kPanelH + 3 * kMargin;

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << escape_xml(title) << "</text>\n";

  for (int k = 0; k < n; ++k) {
    const auto& s = series[static_cast<std::size_t>(k)];
    const int x0 = kMargin + k * (kPanelW + kMargin);
    const int y0 = 2 * kMargin;
    const int bins = s.histogram.bins();
    const long total = s.histogram.total();
    double peak = 0.0;
    for (long c : s.histogram.counts) {
      peak = std::max(peak, total > 0 ? static_cast<double>(c) / total : 0.0);
    }
    if (peak <= 0.0) peak = 1.0;

    os << "<g>\n";
    os << "<text x=\"" << x0 + kPanelW / 2 << "\" y=\"" << y0 - 8
       << "\" text-anchor=\"middle\">" << escape_xml(s.label) << " (n=" << total
       << ")</text>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 + kPanelH << "\" x2=\"" << x0 + kPanelW
       << "\" y2=\"" << y0 + kPanelH << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\""
       << y0 + kPanelH << "\" stroke=\"black\"/>\n";
    const double bw = static_cast<double>(kPanelW) / std::max(1, bins);
    for (int b = 0; b < bins; ++b) {
      const double share =
          total > 0 ? static_cast<double>(s.histogram.counts[static_cast<std::size_t>(b)]) /
                          total
                    : 0.0;
      const double h = kPanelH * share / peak;
      os << "<rect x=\"" << x0 + b * bw + 1 << "\" y=\"" << y0 + kPanelH - h
         << "\" width=\"" << bw - 2 << "\" height=\"" << h
         << "\" fill=\"steelblue\"><title>" << share << "</title></rect>\n";
    }
    os << "<text x=\"" << x0 << "\" y=\"" << y0 + kPanelH + 16 << "\">0</text>\n";
    os << "<text x=\"" << x0 + kPanelW << "\" y=\"" << y0 + kPanelH + 16
       << "\" text-anchor=\"end\">1</text>\n";
    os << "<text x=\"" << x0 + kPanelW / 2 << "\" y=\"" << y0 + kPanelH + 30
       << "\" text-anchor=\"middle\">normalized start time</text>\n";
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string render_histogram_text(const TemporalHistogram& h, int width) {
  std::ostringstream os;
  const int bins = h.bins();
  const long total = h.total();
  long peak = 1;
  for (long c : h.counts) peak = std::max(peak, c);
  for (int b = 0; b < bins; ++b) {
    const long c = h.counts[static_cast<std::size_t>(b)];
    const double share = total > 0 ? static_cast<double>(c) / total : 0.0;
    const int bar = static_cast<int>(static_cast<double>(c) * width / peak);
    os << '[' << std::fixed << std::setprecision(2) << static_cast<double>(b) / bins << ", "
       << static_cast<double>(b + 1) / bins << ") " << std::setw(7) << c << "  "
       << std::setw(6) << std::setprecision(3) << share << "  " << std::string(bar, '#')
       << '\n';
  }
  return os.str();
}

}  // namespace dtg
