#include "cate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cate {

Metrics metrics(std::span<const double> predictions, std::span<const double> truth) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("metrics: prediction and truth lengths differ");
  }
  if (predictions.empty()) throw std::invalid_argument("metrics: empty input");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!std::isfinite(predictions[i]) || !std::isfinite(truth[i])) {
      throw std::invalid_argument("metrics: non-finite value at index " + std::to_string(i));
    }
    const double e = predictions[i] - truth[i];
    sum += e;
    sum_sq += e * e;
  }
  const double n = static_cast<double>(predictions.size());
  Metrics m;
  m.bias = sum / n;
  m.mse = sum_sq / n;
  // Rounding can push the difference a hair below zero.
  m.variance = std::max(m.mse - m.bias * m.bias, 0.0);
  return m;
}

}  // namespace cate
