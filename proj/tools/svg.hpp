#pragma once

// Minimal standalone SVG grouped bar chart.

#include <string>
#include <vector>

namespace vibtx::cli {

struct BarChart {
  std::string title;
  std::string y_label;
  std::vector<std::string> groups;  ///< x-axis categories
  std::vector<std::string> series;  ///< bars within a group
  /// values[g][s]
  std::vector<std::vector<double>> values;
};

std::string render_svg(const BarChart& chart);

}  // namespace vibtx::cli
