#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace probing {

struct Series {
  std::string name;
  std::vector<double> x, y;  // NaN y values break the line
};

struct LineChart {
  std::string title, x_label, y_label;
  std::vector<Series> series;
  bool integer_x = true;
};

struct BarChart {
  std::string title, y_label;
  std::vector<std::string> categories;
  std::vector<Series> groups;  // y per category; x unused
};

struct Heatmap {
  std::string title, row_label, col_label;
  std::vector<std::string> rows, cols;
  std::vector<std::vector<double>> values;
};

/// Each writes <stem>.svg and <stem>.png and returns both paths.
std::vector<std::filesystem::path> render(const LineChart& chart, const std::filesystem::path& stem);
std::vector<std::filesystem::path> render(const BarChart& chart, const std::filesystem::path& stem);
std::vector<std::filesystem::path> render(const Heatmap& chart, const std::filesystem::path& stem);

}  // namespace probing
