#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace fcns::detail {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Unit-square line chart (both axes 0..1), optional dashed diagonal.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<Series>& series, bool diagonal);

struct RadarSeries {
  std::string name;
  std::vector<double> values;  // one per axis, 0..1
};

std::string radar_plot_svg(const std::string& title,
                           const std::vector<std::string>& axes,
                           const std::vector<RadarSeries>& series);

}  // namespace fcns::detail
