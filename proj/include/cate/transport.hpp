#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cate/causal_forest.hpp"
#include "cate/dataset.hpp"
#include "cate/selection.hpp"

namespace cate {

// M1: forest on X1. M2: forest on X1 and X2. The IPW variants fit the same
// forests on trial rows weighted by 1 / P(S = 1 | X2).
enum class Model { M1, M2, M1_IPW, M2_IPW };
// A: CATE(x1) over the source population. B: CATE(x1, x2), the ITE proxy.
enum class Aim { A, B };
enum class SamplerKind { IndependentMarginal, Knn };

std::string_view to_string(Model model);
std::string_view to_string(Aim aim);
std::string_view to_string(SamplerKind kind);
Model model_from_string(std::string_view name);
Aim aim_from_string(std::string_view name);
SamplerKind sampler_from_string(std::string_view name);

inline bool uses_x2(Model m) { return m == Model::M2 || m == Model::M2_IPW; }
inline bool is_ipw(Model m) { return m == Model::M1_IPW || m == Model::M2_IPW; }

struct EstimatorSpec {
  Model model = Model::M1;
  Aim aim = Aim::A;
  ForestConfig forest;
  WeightConfig weights;
  std::size_t mc_draws = 200;
  // Integrate over every source row (or every neighbor) instead of sampling.
  bool exhaustive = false;
  std::size_t knn_k = 50;
  SamplerKind sampler = SamplerKind::IndependentMarginal;
  // Participation model on X1 and X2 instead of X2 only.
  bool selection_on_x1_and_x2 = false;

  void validate() const;
  friend bool operator==(const EstimatorSpec&, const EstimatorSpec&) = default;
};

// K-nearest-neighbour conditional sampler for p(x2 | x1) over a source table.
// X1 columns are standardized with the source mean and sample sd; constant
// columns standardize to 0.
class KnnSampler {
 public:
  KnnSampler() = default;
  KnnSampler(Matrix source_x1, Matrix source_x2);

  std::size_t size() const { return x1_.rows(); }
  // Indices of the k nearest source rows, nearest first, ties by row index.
  std::vector<std::size_t> neighbors(std::span<const double> x1_query, std::size_t k) const;
  Matrix sample(std::span<const double> x1_query, std::size_t k, std::size_t m,
                std::uint64_t seed) const;
  const Matrix& x2() const { return x2_; }

 private:
  Matrix x1_;
  Matrix z_;  // standardized x1
  Matrix x2_;
  std::vector<double> mean_;
  std::vector<double> sd_;
};

struct FittedEstimator {
  EstimatorSpec spec;
  CausalForestModel forest;
  std::optional<SelectionModel> selection;
  std::vector<Role> feature_roles;
  std::vector<std::string> feature_names;
  std::size_t num_x1 = 0;
  std::vector<double> trial_weights;
  // Source covariates for integrating out X2.
  Matrix source_x1;
  Matrix source_x2;
};

// Rows of the source in the trial are read from its selection column when
// present (nested design); otherwise the trial rows are stacked onto the
// source as the S = 1 group.
FittedEstimator fit_estimator(const Dataset& trial, const Dataset& source,
                              const EstimatorSpec& spec);

std::vector<double> estimate_aim_b(const FittedEstimator& fitted, const Dataset& query);
std::vector<double> estimate_aim_a(const FittedEstimator& fitted, const Matrix& x1_queries,
                                   std::uint64_t seed);

// Uniform with-replacement draws of source X2 rows.
Matrix sample_x2_independent(const Matrix& source_x2, std::size_t m, std::uint64_t seed);
Matrix sample_x2_independent(const Dataset& source, std::size_t m, std::uint64_t seed);
Matrix sample_x2_knn(const Dataset& source, std::span<const double> x1_query, std::size_t k,
                     std::size_t m, std::uint64_t seed);

// Trial weights and labels used for the participation model.
struct SelectionFit {
  SelectionModel model;
  std::vector<double> trial_weights;
};
SelectionFit fit_selection(const Dataset& trial, const Dataset& source, const EstimatorSpec& spec);

}  // namespace cate
