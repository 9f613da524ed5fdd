#include "cate/gate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace cate {

namespace {

constexpr double kZ975 = 1.959963984540054;

struct ArmMoments {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;  // Welford running sum of squared deviations

  void add(double y) {
    ++n;
    const double d = y - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (y - mean);
  }
  double sample_variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
};

GateGroup difference(std::span<const double> a, std::span<const double> y,
                     std::span<const std::size_t> rows, const std::string& label) {
  ArmMoments t, c;
  for (auto r : rows) {
    if (a[r] == 1.0) {
      t.add(y[r]);
    } else if (a[r] == 0.0) {
      c.add(y[r]);
    } else {
      throw std::invalid_argument("gate: treatment must be 0/1");
    }
  }
  if (t.n == 0 || c.n == 0) throw std::invalid_argument("gate: group " + label + " lacks a treatment arm");
  GateGroup g;
  g.group = label;
  g.n = rows.size();
  g.effect = t.mean - c.mean;
  const double se = std::sqrt(t.sample_variance() / static_cast<double>(t.n) +
                              c.sample_variance() / static_cast<double>(c.n));
  g.ci_low = g.effect - kZ975 * se;
  g.ci_high = g.effect + kZ975 * se;
  return g;
}

}  // namespace

GateGroup arm_difference(std::span<const double> treatment, std::span<const double> outcome) {
  if (treatment.size() != outcome.size()) throw std::invalid_argument("gate: length mismatch");
  std::vector<std::size_t> rows(treatment.size());
  std::iota(rows.begin(), rows.end(), 0);
  return difference(treatment, outcome, rows, "overall");
}

GateReport gate_tertiles(std::span<const double> cate_hat, std::span<const double> treatment,
                         std::span<const double> outcome) {
  const std::size_t n = cate_hat.size();
  if (treatment.size() != n || outcome.size() != n) {
    throw std::invalid_argument("gate: input lengths differ");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return cate_hat[i] < cate_hat[j]; });

  const std::size_t third = (n + 2) / 3;
  const std::array<std::size_t, 4> cuts{0, std::min(third, n), std::min(2 * third, n), n};
  GateReport report;
  for (std::size_t g = 0; g < 3; ++g) {
    std::span<const std::size_t> rows(order.data() + cuts[g], cuts[g + 1] - cuts[g]);
    report.tertiles[g] = difference(treatment, outcome, rows, "T" + std::to_string(g + 1));
    double s = 0.0;
    for (auto r : rows) s += cate_hat[r];
    report.tertiles[g].mean_cate_hat = s / static_cast<double>(rows.size());
  }
  report.overall = arm_difference(treatment, outcome);
  double s = 0.0;
  for (double v : cate_hat) s += v;
  report.overall.mean_cate_hat = n ? s / static_cast<double>(n) : 0.0;
  return report;
}

}  // namespace cate
