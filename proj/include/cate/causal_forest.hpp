#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cate/matrix.hpp"

namespace cate {

struct ForestConfig {
  std::size_t num_trees = 500;
  double subsample_fraction = 0.5;
  // Share of each subsample used for split search; the rest estimates leaves.
  double honesty_fraction = 0.5;
  std::size_t mtry = 0;  // 0 means ceil(sqrt(p))
  std::size_t min_leaf_treated = 5;
  std::size_t min_leaf_control = 5;
  std::size_t max_depth = 0;  // 0 means unlimited
  std::uint64_t seed = 42;
  std::size_t num_threads = 1;

  void validate() const;
  std::size_t effective_mtry(std::size_t num_features) const;
  friend bool operator==(const ForestConfig&, const ForestConfig&) = default;
};

// Weighted arm sums over a leaf's estimation sample.
struct LeafStats {
  double w_treated = 0.0;
  double w_control = 0.0;
  double wy_treated = 0.0;
  double wy_control = 0.0;

  bool both_arms() const { return w_treated > 0.0 && w_control > 0.0; }
  double effect() const { return wy_treated / w_treated - wy_control / w_control; }
  LeafStats& operator+=(const LeafStats& o) {
    w_treated += o.w_treated;
    w_control += o.w_control;
    wy_treated += o.wy_treated;
    wy_control += o.wy_control;
    return *this;
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // rows with x[feature] < threshold go left
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  LeafStats stats;
  double effect = 0.0;  // leaf only

  bool is_leaf() const { return feature < 0; }
};

class CausalTree {
 public:
  CausalTree() = default;
  explicit CausalTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t leaf_of(std::span<const double> x) const;
  double predict(std::span<const double> x) const { return nodes_[leaf_of(x)].effect; }

 private:
  std::vector<TreeNode> nodes_;
};

class CausalForestModel {
 public:
  CausalForestModel() = default;
  CausalForestModel(std::size_t num_features, std::vector<CausalTree> trees);

  std::size_t num_features() const { return num_features_; }
  const std::vector<CausalTree>& trees() const { return trees_; }

  std::vector<double> predict(const Matrix& features) const;
  double predict_row(std::span<const double> x) const;

  // Averages the forest prediction at (leading_i, draw_d) over all rows d of
  // `trailing_draws`, for every row i of `leading`. Leading columns are the
  // first features of the model; the draws supply the remaining ones.
  std::vector<double> predict_marginal(const Matrix& leading, const Matrix& trailing_draws) const;

  // Human-readable dump for inspection; not a stable format.
  std::string to_json() const;

 private:
  void check_width(std::size_t cols) const;

  std::size_t num_features_ = 0;
  std::vector<CausalTree> trees_;
};

// Records which rows each tree used, for honesty checks.
struct TreeTrace {
  std::vector<std::size_t> split_rows;
  std::vector<std::size_t> estimation_rows;
  // Every row whose treatment or outcome the split search read.
  std::vector<std::size_t> rows_read_by_split_search;
};

CausalForestModel fit_causal_forest(const Matrix& features, std::span<const double> treatment,
                                    std::span<const double> outcome,
                                    std::span<const double> weights, const ForestConfig& config,
                                    std::vector<TreeTrace>* trace = nullptr);

// Fold index of each row: a seeded shuffle cut into n_folds contiguous blocks.
std::vector<std::size_t> crossfit_folds(std::size_t n, std::size_t n_folds, std::uint64_t seed);

// Out-of-fold predictions; the shuffle seed derives from config.seed.
std::vector<double> predict_crossfit(const Matrix& features, std::span<const double> treatment,
                                     std::span<const double> outcome,
                                     std::span<const double> weights, const ForestConfig& config,
                                     std::size_t n_folds);

}  // namespace cate
