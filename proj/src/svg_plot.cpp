#include "cate/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "cate/dataset.hpp"

namespace cate {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 150.0;  // legend column
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

constexpr const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                                    "#66a61e", "#e6ab02", "#a6761d", "#666666"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

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

// Roughly five round-valued ticks covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) {
    out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  }
  return out;
}

}  // namespace

std::string render_svg(const LineChart& chart) {
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  for (const auto& s : chart.series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("svg: series length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (chart.log_x && !(s.x[i] > 0.0)) throw std::invalid_argument("svg: log axis needs x > 0");
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  if (!std::isfinite(x_lo)) {
    x_lo = 1.0;
    x_hi = 10.0;
    y_lo = 0.0;
    y_hi = 1.0;
  }
  y_lo = std::min(y_lo, 0.0);
  if (y_hi <= y_lo) y_hi = y_lo + 1.0;
  y_hi += 0.05 * (y_hi - y_lo);

  auto fx = [&](double x) { return chart.log_x ? std::log10(x) : x; };
  double ux_lo = fx(x_lo), ux_hi = fx(x_hi);
  if (ux_hi <= ux_lo) {
    ux_lo -= 0.5;
    ux_hi += 0.5;
  }
  const double pad = 0.05 * (ux_hi - ux_lo);
  ux_lo -= pad;
  ux_hi += pad;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (fx(x) - ux_lo) / (ux_hi - ux_lo) * plot_w; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h; };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\""
      << num(kHeight) << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
      << "\" fill=\"white\"/>\n"
      << "<text class=\"title\" x=\"" << num(kLeft + plot_w / 2) << "\" y=\"24\" "
      << "text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << escape(chart.title) << "</text>\n";

  // axes
  out << "<g stroke=\"black\" stroke-width=\"1\">\n"
      << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop + plot_h) << "\" x2=\""
      << num(kLeft + plot_w) << "\" y2=\"" << num(kTop + plot_h) << "\"/>\n"
      << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft)
      << "\" y2=\"" << num(kTop + plot_h) << "\"/>\n"
      << "</g>\n";

  out << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (double t : chart.x_ticks) {
    const double x = px(t);
    out << "<line x1=\"" << num(x) << "\" y1=\"" << num(kTop + plot_h) << "\" x2=\"" << num(x)
        << "\" y2=\"" << num(kTop + plot_h + 5) << "\" stroke=\"black\"/>\n"
        << "<text class=\"xtick\" x=\"" << num(x) << "\" y=\"" << num(kTop + plot_h + 18)
        << "\" text-anchor=\"middle\">" << tick_label(t) << "</text>\n";
  }
  for (double t : nice_ticks(y_lo, y_hi)) {
    const double y = py(t);
    out << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(y) << "\" x2=\""
        << num(kLeft + plot_w) << "\" y2=\"" << num(y) << "\" stroke=\"#dddddd\"/>\n"
        << "<text class=\"ytick\" x=\"" << num(kLeft - 8) << "\" y=\"" << num(y + 4)
        << "\" text-anchor=\"end\">" << tick_label(t) << "</text>\n";
  }
  out << "<text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"" << num(kHeight - 18)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(chart.x_label) << "</text>\n"
      << "<text x=\"18\" y=\"" << num(kTop + plot_h / 2) << "\" text-anchor=\"middle\" "
      << "font-size=\"12\" transform=\"rotate(-90 18 " << num(kTop + plot_h / 2) << ")\">"
      << escape(chart.y_label) << "</text>\n"
      << "</g>\n";

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::vector<std::size_t> order(s.x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.x[a] < s.x[b]; });
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (auto i : order) {
      if (!std::isfinite(s.y[i])) continue;
      out << (first ? "" : " ") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
      first = false;
    }
    out << "\"/>\n";
    for (auto i : order) {
      if (!std::isfinite(s.y[i])) continue;
      out << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i]))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
  }

  // legend
  const double lx = kLeft + plot_w + 20;
  out << "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const double ly = kTop + 10 + 20.0 * static_cast<double>(k);
    out << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 24)
        << "\" y2=\"" << num(ly) << "\" stroke=\"" << kPalette[k % std::size(kPalette)]
        << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << num(lx + 30) << "\" y=\"" << num(ly + 4) << "\">"
        << escape(chart.series[k].label) << "</text>\n";
  }
  out << "</g>\n</svg>\n";
  return out.str();
}

std::vector<std::filesystem::path> plot_metrics(std::span<const MetricsRecord> records,
                                                const std::filesystem::path& out_dir) {
  if (records.empty()) throw DataError("plot: no metrics records");
  const auto agg = aggregate(records);

  using Key = std::tuple<std::string, Aim, std::size_t>;  // scenario, aim, dim_x1
  std::map<Key, std::vector<const AggregateRecord*>> panels;
  for (const auto& a : agg) panels[{a.scenario, a.aim, a.dim_x1}].push_back(&a);

  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  struct MetricDef {
    const char* name;
    const char* axis;
    double AggregateRecord::*field;
  };
  const MetricDef defs[] = {{"mse", "mean MSE", &AggregateRecord::mse_mean},
                            {"bias", "mean |bias|", &AggregateRecord::abs_bias_mean},
                            {"variance", "mean variance", &AggregateRecord::variance_mean}};

  for (const auto& [key, rows] : panels) {
    const auto& [scenario, aim, dim] = key;
    std::set<double> sizes;
    for (const auto* r : rows) sizes.insert(static_cast<double>(r->trial_size));

    for (const auto& def : defs) {
      LineChart chart;
      chart.title = std::string(def.name) + ", aim " + std::string(to_string(aim)) + ", " +
                    scenario + ", dim_x1 = " + std::to_string(dim);
      chart.x_label = "trial size (log scale)";
      chart.y_label = def.axis;
      chart.log_x = true;
      chart.x_ticks.assign(sizes.begin(), sizes.end());
      std::map<Model, Series> series;
      for (const auto* r : rows) {
        auto& s = series[r->model];
        s.label = std::string(to_string(r->model));
        s.x.push_back(static_cast<double>(r->trial_size));
        s.y.push_back(r->*def.field);
      }
      for (auto& [m, s] : series) chart.series.push_back(std::move(s));

      const auto path = out_dir / (std::string(def.name) + "_aim" + std::string(to_string(aim)) +
                                   "_" + scenario + "_dim" + std::to_string(dim) + ".svg");
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      if (!f) throw DataError("cannot write '" + path.string() + "'");
      f << render_svg(chart);
      if (!f) throw DataError("write failed for '" + path.string() + "'");
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace cate
