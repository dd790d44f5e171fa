#include "nrsfm/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

namespace nrsfm {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string landmark_svg(const std::vector<SvgSeries>& series, int size) {
  if (series.empty()) throw InvalidArgument("landmark_svg: nothing to plot");
  if (size < 64) throw InvalidArgument("landmark_svg: size must be at least 64");
  double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x;
  double hi_x = -lo_x, hi_y = -lo_x;
  for (const auto& s : series) {
    if (s.points.cols() == 0) continue;
    if (!s.points.allFinite()) throw InvalidArgument("landmark_svg: non-finite coordinates in " + s.label);
    lo_x = std::min(lo_x, s.points.row(0).minCoeff());
    hi_x = std::max(hi_x, s.points.row(0).maxCoeff());
    lo_y = std::min(lo_y, s.points.row(1).minCoeff());
    hi_y = std::max(hi_y, s.points.row(1).maxCoeff());
  }
  if (!(hi_x >= lo_x)) lo_x = lo_y = 0.0, hi_x = hi_y = 1.0;
  const double extent = std::max({hi_x - lo_x, hi_y - lo_y, 1e-12});
  const double margin = 0.08 * size;
  const double scale = (size - 2.0 * margin) / extent;
  const double cx = 0.5 * (lo_x + hi_x), cy = 0.5 * (lo_y + hi_y);

  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" viewBox=\"0 0 %d %d\">\n"
                "<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n",
                size, size, size, size);
  out += buf;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    out += "<g fill=\"" + escape(s.color) + "\" fill-opacity=\"0.75\">\n";
    for (Index j = 0; j < s.points.cols(); ++j) {
      const double x = 0.5 * size + scale * (s.points(0, j) - cx);
      const double y = 0.5 * size + scale * (s.points(1, j) - cy);
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"3\"/>\n", x, y);
      out += buf;
    }
    out += "</g>\n";
    std::snprintf(buf, sizeof buf, "<rect x=\"10\" y=\"%d\" width=\"10\" height=\"10\" fill=\"", 10 + 16 * static_cast<int>(i));
    out += buf;
    out += escape(s.color) + "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"26\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\">",
                  19 + 16 * static_cast<int>(i));
    out += buf;
    out += escape(s.label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace nrsfm
