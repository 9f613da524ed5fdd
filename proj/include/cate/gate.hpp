#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>

namespace cate {

struct GateGroup {
  std::string group;  // "T1" (lowest predicted effect) .. "T3", or "overall"
  std::size_t n = 0;
  double mean_cate_hat = 0.0;
  double effect = 0.0;  // difference of arm means
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct GateReport {
  std::array<GateGroup, 3> tertiles;
  GateGroup overall;
};

// Difference of arm means with a 95% Wald interval using per-arm sample variances.
GateGroup arm_difference(std::span<const double> treatment, std::span<const double> outcome);

// Groups rows by tertile of the predicted effect (stable ranking, sizes
// ceil(n/3), ceil(n/3), rest) and estimates each group's effect.
GateReport gate_tertiles(std::span<const double> cate_hat, std::span<const double> treatment,
                         std::span<const double> outcome);

}  // namespace cate
