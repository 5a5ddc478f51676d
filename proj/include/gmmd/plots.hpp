#pragma once

#include <string>
#include <vector>

namespace gmmd {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = true;  // points; false draws a plain line
  bool line = true;
};

struct PlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;  // non-positive values are dropped from log plots
  int width = 640;
  int height = 420;
};

/// Static SVG line/scatter plot. The plotted numbers are embedded as CSV in
/// the <metadata> element so the figure can be re-read without the run.
std::string svg_line_plot(const PlotOptions& options, const std::vector<PlotSeries>& series);

/// Grouped bar chart: one bar per series within each category.
std::string svg_bar_plot(const PlotOptions& options, const std::vector<std::string>& categories,
                         const std::vector<PlotSeries>& series);

}  // namespace gmmd
