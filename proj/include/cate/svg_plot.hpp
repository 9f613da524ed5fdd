#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cate/simulation.hpp"

namespace cate {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  std::vector<double> x_ticks;  // tick positions; labels are the values themselves
  std::vector<Series> series;
};

// Self-contained SVG text. Output depends only on the chart contents.
std::string render_svg(const LineChart& chart);

// One chart per (scenario, aim, metric, dim_x1) with one line per model,
// written into `out_dir`. Metrics: mse, bias (mean |bias|), variance.
// Returns the written paths in creation order.
std::vector<std::filesystem::path> plot_metrics(std::span<const MetricsRecord> records,
                                                const std::filesystem::path& out_dir);

}  // namespace cate
