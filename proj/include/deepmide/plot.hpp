#pragma once

#include <string>
#include <vector>

namespace deepmide::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  // NaN breaks the line
};

// Standalone SVG line chart with axes, ticks and a legend.
std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series);

}  // namespace deepmide::plot
