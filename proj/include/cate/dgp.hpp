#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cate/dataset.hpp"

namespace cate {

// Synthetic source population and trial-selection design.
//
// Covariate blocks X1ALL, X2 and O are i.i.d. standard normal. The first
// `dim_x1` columns of X1ALL form the observed X1 block; the remaining X1ALL
// columns and all of O carry no role and are invisible to estimators.
struct DGPConfig {
  std::size_t n_source = 100000;
  std::size_t dim_x1all = 20;
  std::size_t dim_x2 = 10;
  std::size_t dim_o = 20;
  std::size_t dim_x1 = 2;
  double coef_x1 = 1.0;
  double coef_x2 = 0.5;
  double coef_o = 0.3;
  double selection_linear = 1.0;
  double selection_quadratic = 0.2;
  double treat_prob = 0.5;
  double noise_sd = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const DGPConfig&, const DGPConfig&) = default;
};

// Column naming used by generated data.
std::string x1all_name(std::size_t j);  // x1_01, x1_02, ...
std::string x2_name(std::size_t k);     // x2_01, ...
std::string o_name(std::size_t l);      // o_01, ...
inline constexpr const char* kRowIdColumn = "row_id";
inline constexpr const char* kTrueIteColumn = "true_ite";
inline constexpr const char* kSelectionColumn = "s";
inline constexpr const char* kTreatmentColumn = "a";
inline constexpr const char* kOutcomeColumn = "y";

struct SourcePopulation {
  Dataset data;  // row_id, X1ALL, X2, O, true_ite
  std::vector<std::string> x1all_columns;
  std::vector<std::string> active_x1_columns;  // prefix of x1all_columns
};

struct TrialSample {
  Dataset source;                  // source copy with the selection column
  std::vector<std::size_t> rows;   // selected source rows, ascending
  Dataset trial;                   // the selected rows
  double mu = 0.0;                 // calibrated scaling factor
  std::size_t attempts = 0;        // inclusion passes used
};

SourcePopulation generate_source(const DGPConfig& config);

double true_ite(std::span<const double> x1all, std::span<const double> x2,
                std::span<const double> o, const DGPConfig& config);
double true_cate_x1(std::span<const double> x1, const DGPConfig& config);

// Base selection score before scaling: expit(linear * sum(x2) + quadratic * sum(x2^2)).
double selection_score(std::span<const double> x2, const DGPConfig& config);

// Finds mu with sum_i min(mu * e_i, 1) == target (within 0.5 rows).
double calibrate_mu(std::span<const double> scores, double target);

TrialSample select_trial(const SourcePopulation& source, std::size_t target_n,
                         const DGPConfig& config, std::uint64_t seed);

// Adds treatment and outcome columns to the trial.
TrialSample assign_and_outcome(TrialSample trial, const DGPConfig& config, std::uint64_t seed);

}  // namespace cate
