#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace vibtx::cli {
namespace {

constexpr const char* kPalette[] = {"#4477aa", "#66ccee", "#228833", "#ccbb44", "#ee6677", "#aa3377", "#bbbbbb"};

std::string escape(const std::string& s) {
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

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// Round the axis maximum up to 1, 2 or 5 times a power of ten.
double nice_ceiling(double v) {
  if (!(v > 0.0)) return 1.0;
  const double p = std::pow(10.0, std::floor(std::log10(v)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * p >= v) return m * p;
  }
  return 10.0 * p;
}

}  // namespace

std::string render_svg(const BarChart& c) {
  const double width = 720, height = 420;
  const double left = 80, right = 130, top = 50, bottom = 60;
  const double plot_w = width - left - right, plot_h = height - top - bottom;

  double vmax = 0.0;
  for (const auto& row : c.values) {
    for (double v : row) {
      if (std::isfinite(v)) vmax = std::max(vmax, v);
    }
  }
  const double ymax = nice_ceiling(vmax);

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", width) + "\" height=\"" +
       fmt("%.0f", height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt("%.1f", width / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
       escape(c.title) + "</text>\n";

  for (int i = 0; i <= 5; ++i) {
    const double v = ymax * i / 5.0;
    const double y = top + plot_h - plot_h * i / 5.0;
    s += "<line x1=\"" + fmt("%.1f", left) + "\" y1=\"" + fmt("%.1f", y) + "\" x2=\"" + fmt("%.1f", left + plot_w) +
         "\" y2=\"" + fmt("%.1f", y) + "\" stroke=\"#dddddd\"/>\n";
    s += "<text x=\"" + fmt("%.1f", left - 6) + "\" y=\"" + fmt("%.1f", y + 4) + "\" text-anchor=\"end\">" +
         fmt("%g", v) + "</text>\n";
  }
  s += "<text transform=\"translate(18," + fmt("%.1f", top + plot_h / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + escape(c.y_label) + "</text>\n";

  const std::size_t ng = std::max<std::size_t>(c.groups.size(), 1);
  const std::size_t ns = std::max<std::size_t>(c.series.size(), 1);
  const double group_w = plot_w / static_cast<double>(ng);
  const double bar_w = group_w * 0.8 / static_cast<double>(ns);
  for (std::size_t g = 0; g < c.groups.size(); ++g) {
    const double gx = left + group_w * static_cast<double>(g) + group_w * 0.1;
    for (std::size_t k = 0; k < c.series.size() && g < c.values.size() && k < c.values[g].size(); ++k) {
      const double v = std::isfinite(c.values[g][k]) ? std::max(0.0, c.values[g][k]) : 0.0;
      const double h = plot_h * v / ymax;
      s += "<rect x=\"" + fmt("%.1f", gx + bar_w * static_cast<double>(k)) + "\" y=\"" +
           fmt("%.1f", top + plot_h - h) + "\" width=\"" + fmt("%.1f", bar_w * 0.92) + "\" height=\"" +
           fmt("%.1f", h) + "\" fill=\"" + kPalette[k % std::size(kPalette)] + "\"><title>" +
           escape(c.groups[g] + " / " + c.series[k]) + ": " + fmt("%.4g", c.values[g][k]) + "</title></rect>\n";
    }
    s += "<text x=\"" + fmt("%.1f", gx + group_w * 0.4) + "\" y=\"" + fmt("%.1f", top + plot_h + 18) +
         "\" text-anchor=\"middle\">" + escape(c.groups[g]) + "</text>\n";
  }
  s += "<line x1=\"" + fmt("%.1f", left) + "\" y1=\"" + fmt("%.1f", top + plot_h) + "\" x2=\"" +
       fmt("%.1f", left + plot_w) + "\" y2=\"" + fmt("%.1f", top + plot_h) + "\" stroke=\"black\"/>\n";

  for (std::size_t k = 0; k < c.series.size(); ++k) {
    const double y = top + 10 + 18.0 * static_cast<double>(k);
    s += "<rect x=\"" + fmt("%.1f", width - right + 15) + "\" y=\"" + fmt("%.1f", y - 10) +
         "\" width=\"12\" height=\"12\" fill=\"" + kPalette[k % std::size(kPalette)] + "\"/>\n";
    s += "<text x=\"" + fmt("%.1f", width - right + 32) + "\" y=\"" + fmt("%.1f", y) + "\">" +
         escape(c.series[k]) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace vibtx::cli
