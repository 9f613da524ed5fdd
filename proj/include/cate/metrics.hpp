#pragma once

#include <span>

namespace cate {

// Error summary of predictions against truth. variance is defined as
// mse - bias^2, the spread of the error around its mean.
struct Metrics {
  double mse = 0.0;
  double bias = 0.0;
  double variance = 0.0;
};

Metrics metrics(std::span<const double> predictions, std::span<const double> truth);

}  // namespace cate
