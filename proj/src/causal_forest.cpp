#include "cate/causal_forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "cate/random.hpp"
#include "json.hpp"

namespace cate {

namespace {

constexpr int kMaxSubsampleRedraws = 100;

struct TrainingData {
  const Matrix& x;
  std::span<const double> a;
  std::span<const double> y;
  std::vector<double> w;  // rescaled so that max(w) == 1
};

struct ArmSums {
  double w_t = 0.0, w_c = 0.0, wy_t = 0.0, wy_c = 0.0;
  std::size_t n_t = 0, n_c = 0;

  void add(double a, double y, double w) {
    if (a == 1.0) {
      w_t += w;
      wy_t += w * y;
      ++n_t;
    } else {
      w_c += w;
      wy_c += w * y;
      ++n_c;
    }
  }
};

class TreeGrower {
 public:
  TreeGrower(const TrainingData& data, const ForestConfig& config, std::size_t mtry, Rng& rng,
             TreeTrace* trace)
      : data_(data), config_(config), mtry_(mtry), rng_(rng), trace_(trace) {
    features_.resize(data.x.cols());
  }

  CausalTree grow(std::vector<std::size_t> split_rows, std::vector<std::size_t> est_rows) {
    nodes_.clear();
    build(split_rows, est_rows, 0);
    repair(0);
    return compact();
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  // Treatment/outcome access used by the split search. Every read is logged
  // when tracing so tests can verify honesty.
  double treatment(std::size_t row) {
    if (trace_) trace_->rows_read_by_split_search.push_back(row);
    return data_.a[row];
  }
  double outcome(std::size_t row) {
    if (trace_) trace_->rows_read_by_split_search.push_back(row);
    return data_.y[row];
  }

  LeafStats estimation_stats(const std::vector<std::size_t>& rows) const {
    LeafStats s;
    for (auto r : rows) {
      const double w = data_.w[r];
      if (data_.a[r] == 1.0) {
        s.w_treated += w;
        s.wy_treated += w * data_.y[r];
      } else {
        s.w_control += w;
        s.wy_control += w * data_.y[r];
      }
    }
    return s;
  }

  std::uint32_t build(std::vector<std::size_t>& split_rows, std::vector<std::size_t>& est_rows,
                      std::size_t depth) {
    const auto idx = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    nodes_[idx].stats = estimation_stats(est_rows);

    if (config_.max_depth != 0 && depth >= config_.max_depth) return idx;
    const Split split = find_split(split_rows, est_rows);
    if (split.feature < 0) return idx;

    const auto f = static_cast<std::size_t>(split.feature);
    auto goes_left = [&](std::size_t r) { return data_.x(r, f) < split.threshold; };
    std::vector<std::size_t> split_left, split_right, est_left, est_right;
    for (auto r : split_rows) (goes_left(r) ? split_left : split_right).push_back(r);
    for (auto r : est_rows) (goes_left(r) ? est_left : est_right).push_back(r);
    split_rows.clear();
    split_rows.shrink_to_fit();
    est_rows.clear();
    est_rows.shrink_to_fit();

    nodes_[idx].feature = split.feature;
    nodes_[idx].threshold = split.threshold;
    const auto left = build(split_left, est_left, depth + 1);
    const auto right = build(split_right, est_right, depth + 1);
    nodes_[idx].left = left;
    nodes_[idx].right = right;
    return idx;
  }

  Split find_split(const std::vector<std::size_t>& split_rows,
                   const std::vector<std::size_t>& est_rows) {
    Split best;
    const std::size_t p = data_.x.cols();
    const std::size_t m = split_rows.size();
    const std::size_t min_t = config_.min_leaf_treated;
    const std::size_t min_c = config_.min_leaf_control;
    const std::size_t min_est = min_t + min_c;
    if (m < 2 * (min_t + min_c) || est_rows.size() < 2 * min_est) return best;

    // Candidate features: mtry drawn without replacement, scanned in index order.
    std::iota(features_.begin(), features_.end(), 0);
    for (std::size_t i = 0; i < mtry_; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, p - 1);
      std::swap(features_[i], features_[pick(rng_)]);
    }
    std::sort(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(mtry_));

    ArmSums total;
    rows_.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      const auto r = split_rows[i];
      rows_[i] = {treatment(r), outcome(r), data_.w[r]};
      total.add(rows_[i].a, rows_[i].y, rows_[i].w);
    }

    order_.resize(m);
    est_x_.resize(est_rows.size());
    for (std::size_t fi = 0; fi < mtry_; ++fi) {
      const std::size_t f = features_[fi];
      for (std::size_t i = 0; i < m; ++i) order_[i] = {data_.x(split_rows[i], f), i};
      std::sort(order_.begin(), order_.end());
      for (std::size_t i = 0; i < est_rows.size(); ++i) est_x_[i] = data_.x(est_rows[i], f);
      std::sort(est_x_.begin(), est_x_.end());

      ArmSums left;
      for (std::size_t k = 0; k + 1 < m; ++k) {
        const auto& row = rows_[order_[k].second];
        left.add(row.a, row.y, row.w);
        const double lo = order_[k].first;
        const double hi = order_[k + 1].first;
        if (!(lo < hi)) continue;
        if (left.n_t < min_t || left.n_c < min_c) continue;
        const std::size_t right_t = total.n_t - left.n_t;
        const std::size_t right_c = total.n_c - left.n_c;
        if (right_t < min_t || right_c < min_c) continue;

        const double threshold = 0.5 * lo + 0.5 * hi;
        if (!(lo < threshold && threshold < hi)) continue;
        const auto est_left = static_cast<std::size_t>(
            std::lower_bound(est_x_.begin(), est_x_.end(), threshold) - est_x_.begin());
        if (est_left < min_est || est_x_.size() - est_left < min_est) continue;

        const double wt_r = total.w_t - left.w_t;
        const double wc_r = total.w_c - left.w_c;
        const double tau_l = left.wy_t / left.w_t - left.wy_c / left.w_c;
        const double tau_r = (total.wy_t - left.wy_t) / wt_r - (total.wy_c - left.wy_c) / wc_r;
        const double n_l = left.w_t + left.w_c;
        const double n_r = wt_r + wc_r;
        const double diff = tau_l - tau_r;
        const double gain = n_l * n_r / ((n_l + n_r) * (n_l + n_r)) * diff * diff;
        if (gain > best.gain) {
          best.gain = gain;
          best.feature = static_cast<int>(f);
          best.threshold = threshold;
        }
      }
    }
    return best;
  }

  // Collapses any node with a single-arm leaf child into a leaf.
  void repair(std::uint32_t idx) {
    TreeNode& node = nodes_[idx];
    if (node.is_leaf()) return;
    repair(node.left);
    repair(node.right);
    const TreeNode& l = nodes_[node.left];
    const TreeNode& r = nodes_[node.right];
    if ((l.is_leaf() && !l.stats.both_arms()) || (r.is_leaf() && !r.stats.both_arms())) {
      nodes_[idx].feature = -1;
    }
  }

  CausalTree compact() const {
    std::vector<TreeNode> out;
    out.reserve(nodes_.size());
    std::vector<std::pair<std::uint32_t, std::uint32_t>> queue{{0, 0}};  // (old, new)
    out.push_back(nodes_[0]);
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const auto [old_idx, new_idx] = queue[q];
      const TreeNode& src = nodes_[old_idx];
      if (src.is_leaf()) {
        out[new_idx].left = out[new_idx].right = 0;
        out[new_idx].threshold = 0.0;
        out[new_idx].effect = src.stats.effect();
        continue;
      }
      const auto l = static_cast<std::uint32_t>(out.size());
      out.push_back(nodes_[src.left]);
      const auto r = static_cast<std::uint32_t>(out.size());
      out.push_back(nodes_[src.right]);
      out[new_idx].left = l;
      out[new_idx].right = r;
      queue.emplace_back(src.left, l);
      queue.emplace_back(src.right, r);
    }
    return CausalTree(std::move(out));
  }

  struct RowData {
    double a, y, w;
  };

  const TrainingData& data_;
  const ForestConfig& config_;
  std::size_t mtry_;
  Rng& rng_;
  TreeTrace* trace_;
  std::vector<TreeNode> nodes_;
  std::vector<std::size_t> features_;
  std::vector<RowData> rows_;
  std::vector<std::pair<double, std::size_t>> order_;
  std::vector<double> est_x_;
};

bool has_both_arms(const std::vector<std::size_t>& rows, std::span<const double> a) {
  bool t = false, c = false;
  for (auto r : rows) (a[r] == 1.0 ? t : c) = true;
  return t && c;
}

CausalTree fit_tree(const TrainingData& data, const ForestConfig& config, std::size_t mtry,
                    std::size_t tree_index, TreeTrace* trace) {
  const std::size_t n = data.x.rows();
  Rng rng = make_rng(derive_seed(config.seed, {static_cast<std::uint64_t>(Stream::kForest),
                                               static_cast<std::uint64_t>(tree_index)}));
  const auto sub_n = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(config.subsample_fraction * static_cast<double>(n))));
  auto split_n = static_cast<std::size_t>(
      std::llround(config.honesty_fraction * static_cast<double>(sub_n)));
  split_n = std::clamp<std::size_t>(split_n, 1, sub_n > 1 ? sub_n - 1 : 1);

  std::vector<std::size_t> idx(n);
  for (int attempt = 0; attempt < kMaxSubsampleRedraws; ++attempt) {
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < sub_n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<std::size_t> split_rows(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(split_n));
    std::vector<std::size_t> est_rows(idx.begin() + static_cast<std::ptrdiff_t>(split_n),
                                      idx.begin() + static_cast<std::ptrdiff_t>(sub_n));
    if (!has_both_arms(split_rows, data.a) || !has_both_arms(est_rows, data.a)) continue;
    std::sort(split_rows.begin(), split_rows.end());
    std::sort(est_rows.begin(), est_rows.end());
    if (trace) {
      trace->split_rows = split_rows;
      trace->estimation_rows = est_rows;
    }
    TreeGrower grower(data, config, mtry, rng, trace);
    CausalTree tree = grower.grow(std::move(split_rows), std::move(est_rows));
    if (trace) {
      auto& read = trace->rows_read_by_split_search;
      std::sort(read.begin(), read.end());
      read.erase(std::unique(read.begin(), read.end()), read.end());
    }
    return tree;
  }
  throw std::runtime_error(
      "causal forest: could not draw a subsample with both arms in each honesty half");
}

void check_training_input(const Matrix& x, std::span<const double> a, std::span<const double> y,
                          std::span<const double> w) {
  if (x.empty()) throw std::invalid_argument("causal forest: empty feature matrix");
  const std::size_t n = x.rows();
  if (a.size() != n || y.size() != n || w.size() != n) {
    throw std::invalid_argument("causal forest: input lengths do not match feature rows");
  }
  bool t = false, c = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] == 1.0) {
      t = true;
    } else if (a[i] == 0.0) {
      c = true;
    } else {
      throw std::invalid_argument("causal forest: treatment must be 0/1");
    }
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) {
      throw std::invalid_argument("causal forest: weights must be strictly positive and finite");
    }
    if (!std::isfinite(y[i])) throw std::invalid_argument("causal forest: non-finite outcome");
  }
  if (!t || !c) throw std::invalid_argument("causal forest: both treatment arms are required");
}

}  // namespace

void ForestConfig::validate() const {
  if (num_trees < 1) throw std::invalid_argument("forest: num_trees must be >= 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw std::invalid_argument("forest: subsample_fraction must be in (0, 1]");
  }
  if (!(honesty_fraction > 0.0 && honesty_fraction < 1.0)) {
    throw std::invalid_argument("forest: honesty_fraction must be in (0, 1)");
  }
  if (min_leaf_treated < 1 || min_leaf_control < 1) {
    throw std::invalid_argument("forest: minimum leaf counts must be >= 1");
  }
}

std::size_t ForestConfig::effective_mtry(std::size_t num_features) const {
  std::size_t m = mtry;
  if (m == 0) m = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(num_features))));
  return std::clamp<std::size_t>(m, 1, num_features);
}

std::size_t CausalTree::leaf_of(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes_[i].is_leaf()) {
    const auto& n = nodes_[i];
    i = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
  }
  return i;
}

CausalForestModel::CausalForestModel(std::size_t num_features, std::vector<CausalTree> trees)
    : num_features_(num_features), trees_(std::move(trees)) {
  if (trees_.empty()) throw std::invalid_argument("causal forest: no trees");
}

void CausalForestModel::check_width(std::size_t cols) const {
  if (cols != num_features_) {
    throw std::invalid_argument("causal forest: expected " + std::to_string(num_features_) +
                                " feature columns, got " + std::to_string(cols));
  }
}

double CausalForestModel::predict_row(std::span<const double> x) const {
  check_width(x.size());
  double s = 0.0;
  for (const auto& t : trees_) s += t.predict(x);
  return s / static_cast<double>(trees_.size());
}

std::vector<double> CausalForestModel::predict(const Matrix& features) const {
  check_width(features.cols());
  std::vector<double> out(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) out[i] = predict_row(features.row(i));
  return out;
}

std::vector<double> CausalForestModel::predict_marginal(const Matrix& leading,
                                                        const Matrix& trailing_draws) const {
  const std::size_t k = leading.cols();
  if (k + trailing_draws.cols() != num_features_) {
    throw std::invalid_argument("predict_marginal: leading + draw columns must equal model width");
  }
  if (trailing_draws.rows() == 0) throw std::invalid_argument("predict_marginal: no draws");
  const std::size_t q = leading.rows();
  const double m = static_cast<double>(trailing_draws.rows());
  std::vector<double> out(q, 0.0);
  std::vector<double> share;
  std::vector<std::uint32_t> stack;

  for (const auto& tree : trees_) {
    const auto& nodes = tree.nodes();
    share.assign(nodes.size(), 0.0);

    // Share of draws reaching each node given only the trailing-feature
    // splits on its path; leading-feature splits pass every draw through.
    std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>> work;
    std::vector<std::uint32_t> all(trailing_draws.rows());
    std::iota(all.begin(), all.end(), 0u);
    work.emplace_back(0u, std::move(all));
    while (!work.empty()) {
      auto [node_idx, draws] = std::move(work.back());
      work.pop_back();
      share[node_idx] = static_cast<double>(draws.size()) / m;
      const TreeNode& node = nodes[node_idx];
      if (node.is_leaf() || draws.empty()) continue;
      const auto f = static_cast<std::size_t>(node.feature);
      if (f < k) {
        work.emplace_back(node.left, draws);
        work.emplace_back(node.right, std::move(draws));
        continue;
      }
      std::vector<std::uint32_t> l, r;
      for (auto d : draws) (trailing_draws(d, f - k) < node.threshold ? l : r).push_back(d);
      work.emplace_back(node.left, std::move(l));
      work.emplace_back(node.right, std::move(r));
    }

    for (std::size_t i = 0; i < q; ++i) {
      const auto x = leading.row(i);
      double acc = 0.0;
      stack.assign(1, 0u);
      while (!stack.empty()) {
        const auto idx = stack.back();
        stack.pop_back();
        if (share[idx] == 0.0) continue;
        const TreeNode& node = nodes[idx];
        if (node.is_leaf()) {
          acc += share[idx] * node.effect;
        } else if (static_cast<std::size_t>(node.feature) < k) {
          stack.push_back(x[static_cast<std::size_t>(node.feature)] < node.threshold ? node.left
                                                                                      : node.right);
        } else {
          stack.push_back(node.right);
          stack.push_back(node.left);
        }
      }
      out[i] += acc;
    }
  }
  for (auto& v : out) v /= static_cast<double>(trees_.size());
  return out;
}

std::string CausalForestModel::to_json() const {
  nlohmann::json j;
  j["format"] = "cate-causal-forest";
  j["version"] = 1;
  j["num_features"] = num_features_;
  auto& trees = j["trees"] = nlohmann::json::array();
  for (const auto& t : trees_) {
    auto nodes = nlohmann::json::array();
    for (const auto& n : t.nodes()) {
      if (n.is_leaf()) {
        nodes.push_back({{"leaf", true},
                         {"effect", n.effect},
                         {"stats",
                          {n.stats.w_treated, n.stats.w_control, n.stats.wy_treated,
                           n.stats.wy_control}}});
      } else {
        nodes.push_back({{"feature", n.feature},
                         {"threshold", n.threshold},
                         {"left", n.left},
                         {"right", n.right}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  return j.dump(1);
}

CausalForestModel fit_causal_forest(const Matrix& features, std::span<const double> treatment,
                                    std::span<const double> outcome,
                                    std::span<const double> weights, const ForestConfig& config,
                                    std::vector<TreeTrace>* trace) {
  config.validate();
  check_training_input(features, treatment, outcome, weights);

  // Rescaling by the maximum is exact for power-of-two factors and keeps the
  // fit invariant to the overall weight scale.
  const double w_max = *std::max_element(weights.begin(), weights.end());
  TrainingData data{features, treatment, outcome, std::vector<double>(weights.size())};
  for (std::size_t i = 0; i < weights.size(); ++i) data.w[i] = weights[i] / w_max;

  const std::size_t mtry = config.effective_mtry(features.cols());
  std::vector<CausalTree> trees(config.num_trees);
  if (trace) trace->assign(config.num_trees, TreeTrace{});

  auto grow = [&](std::size_t t) {
    trees[t] = fit_tree(data, config, mtry, t, trace ? &(*trace)[t] : nullptr);
  };
  const std::size_t threads = std::min(std::max<std::size_t>(config.num_threads, 1), config.num_trees);
  if (threads == 1) {
    for (std::size_t t = 0; t < config.num_trees; ++t) grow(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    {
      std::vector<std::jthread> pool;
      for (std::size_t i = 0; i < threads; ++i) {
        pool.emplace_back([&] {
          for (std::size_t t = next++; t < config.num_trees; t = next++) {
            try {
              grow(t);
            } catch (...) {
              std::lock_guard lock(error_mutex);
              if (!error) error = std::current_exception();
            }
          }
        });
      }
    }
    if (error) std::rethrow_exception(error);
  }
  return CausalForestModel(features.cols(), std::move(trees));
}

std::vector<std::size_t> crossfit_folds(std::size_t n, std::size_t n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw std::invalid_argument("cross-fitting needs at least 2 folds");
  if (n_folds > n) throw std::invalid_argument("cross-fitting: more folds than rows");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(derive_seed(seed, Stream::kFolds));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = i * n_folds / n;
  return fold;
}

std::vector<double> predict_crossfit(const Matrix& features, std::span<const double> treatment,
                                     std::span<const double> outcome,
                                     std::span<const double> weights, const ForestConfig& config,
                                     std::size_t n_folds) {
  check_training_input(features, treatment, outcome, weights);
  const std::size_t n = features.rows();
  const auto fold = crossfit_folds(n, n_folds, config.seed);
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < n_folds; ++k) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == k ? test : train).push_back(i);
    std::vector<double> a, y, w;
    for (auto i : train) {
      a.push_back(treatment[i]);
      y.push_back(outcome[i]);
      w.push_back(weights[i]);
    }
    if (std::find(a.begin(), a.end(), 1.0) == a.end() ||
        std::find(a.begin(), a.end(), 0.0) == a.end()) {
      throw std::invalid_argument("cross-fitting: training portion of fold " + std::to_string(k) +
                                  " lacks a treatment arm");
    }
    const auto model = fit_causal_forest(features.take_rows(train), a, y, w, config);
    const auto pred = model.predict(features.take_rows(test));
    for (std::size_t j = 0; j < test.size(); ++j) out[test[j]] = pred[j];
  }
  return out;
}

}  // namespace cate
