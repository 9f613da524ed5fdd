#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cate/matrix.hpp"

namespace cate {

// Logistic model for P(S = 1 | features).
struct SelectionModel {
  std::vector<double> coefficients;  // intercept first, then one slope per feature
  std::vector<std::string> features;
  bool converged = false;
  bool ridge_fallback = false;  // refit with a small ridge after separation
  std::size_t iterations = 0;
  double log_likelihood = 0.0;
  double ridge = 0.0;

  std::size_t num_features() const { return coefficients.empty() ? 0 : coefficients.size() - 1; }
};

struct LogisticOptions {
  double ridge = 0.0;  // intercept is never penalized
  double tol = 1e-8;   // on the max absolute score component
  std::size_t max_iter = 100;
};

struct WeightConfig {
  bool normalize_mean_one = true;
  std::optional<double> trim_upper_quantile;  // in (0.5, 1]

  void validate() const;
  friend bool operator==(const WeightConfig&, const WeightConfig&) = default;
};

struct OverlapReport {
  double min_prob = 0.0;
  double median_prob = 0.0;
  double max_prob = 0.0;
  std::size_t count_below_floor = 0;
  double floor = 1e-4;
};

inline constexpr double kProbClamp = 1e-12;
inline constexpr double kSeparationMagnitude = 30.0;
inline constexpr double kFallbackRidge = 1e-4;

// Penalized-IRLS maximum likelihood fit. Throws std::invalid_argument for
// constant labels and std::runtime_error when even the ridge refit fails.
SelectionModel fit_logistic(const Matrix& features, std::span<const double> labels,
                            const LogisticOptions& options = {},
                            std::vector<std::string> feature_names = {});

// Binomial log-likelihood of `coefficients` (intercept first).
double logistic_log_likelihood(const Matrix& features, std::span<const double> labels,
                               std::span<const double> coefficients);

double participation_prob(const SelectionModel& model, std::span<const double> x);

std::vector<double> ipw_weights(const SelectionModel& model, const Matrix& trial_features,
                                const WeightConfig& config = {});

// Inverse empirical CDF: the ceil(q * n)-th smallest value.
double empirical_quantile(std::vector<double> values, double q);

OverlapReport overlap_diagnostics(const SelectionModel& model, const Matrix& source_features,
                                  double floor = 1e-4);

}  // namespace cate
