#ifndef SMALR_TOOLS_PLOT_HPP_
#define SMALR_TOOLS_PLOT_HPP_

#include <string>
#include <vector>

namespace smalr::plot {

struct Point {
  double x = 0.0;
  double y = 0.0;
  std::string label;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool line = false;
  std::vector<Point> points;
};

std::string render_svg(const Chart& chart);

/// Rows of a CSV file split on commas, header first.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

}  // namespace smalr::plot

#endif  // SMALR_TOOLS_PLOT_HPP_
