#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <set>

#include "cate/causal_forest.hpp"
#include "doctest.h"

using namespace cate;

namespace {

struct Sample {
  Matrix x;
  std::vector<double> a, y, w;
};

// Feature 0 is a binary group g with effect +1 (g = 1) or -1 (g = 0);
// feature 1 is pure noise.
Sample two_group(std::size_t n, double noise_sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal;
  Sample s{Matrix(n, 2), {}, {}, std::vector<double>(n, 1.0)};
  for (std::size_t i = 0; i < n; ++i) {
    const double g = coin(rng) ? 1.0 : 0.0;
    s.x(i, 0) = g;
    s.x(i, 1) = normal(rng);
    const double a = coin(rng) ? 1.0 : 0.0;
    s.a.push_back(a);
    s.y.push_back(a * (g == 1.0 ? 1.0 : -1.0) + noise_sd * normal(rng));
  }
  return s;
}

// Continuous heterogeneity in feature 0, three extra noise features.
Sample smooth(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal;
  Sample s{Matrix(n, 4), {}, {}, {}};
  std::uniform_int_distribution<int> k(1, 16);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 4; ++j) s.x(i, j) = normal(rng);
    const double a = coin(rng) ? 1.0 : 0.0;
    s.a.push_back(a);
    s.y.push_back(s.x(i, 1) + a * (1.0 + s.x(i, 0)) + 0.5 * normal(rng));
    s.w.push_back(k(rng) / 8.0);  // dyadic weights
  }
  return s;
}

ForestConfig small_forest(std::size_t trees = 50, std::uint64_t seed = 7) {
  ForestConfig c;
  c.num_trees = trees;
  c.seed = seed;
  return c;
}

std::vector<std::size_t> rows_reaching(const CausalTree& tree, std::uint32_t node, const Matrix& x,
                                       const std::vector<std::size_t>& rows) {
  // Routes rows from the root and keeps those whose path visits `node`.
  std::vector<std::size_t> out;
  for (auto r : rows) {
    std::uint32_t i = 0;
    while (true) {
      if (i == node) {
        out.push_back(r);
        break;
      }
      const auto& n = tree.nodes()[i];
      if (n.is_leaf()) break;
      i = x(r, static_cast<std::size_t>(n.feature)) < n.threshold ? n.left : n.right;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("constant effect without noise predicts that effect everywhere") {
  const std::size_t n = 600;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  Matrix x(n, 3);
  std::vector<double> a(n), y(n), w(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) x(i, j) = normal(rng);
    a[i] = static_cast<double>(i % 2);
    y[i] = 4.0 + 2.5 * a[i];
  }
  const auto model = fit_causal_forest(x, a, y, w, small_forest());
  for (double p : model.predict(x)) CHECK(p == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("two-group effect matches stratified difference of means") {
  const auto s = two_group(4000, 0.1, 11);
  const auto model = fit_causal_forest(s.x, s.a, s.y, s.w, small_forest(100));
  // Oracle: difference of arm means within each group.
  double sum[2][2] = {{0, 0}, {0, 0}}, cnt[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < 4000; ++i) {
    const int g = static_cast<int>(s.x(i, 0)), arm = static_cast<int>(s.a[i]);
    sum[g][arm] += s.y[i];
    cnt[g][arm] += 1;
  }
  const double oracle[2] = {sum[0][1] / cnt[0][1] - sum[0][0] / cnt[0][0],
                            sum[1][1] / cnt[1][1] - sum[1][0] / cnt[1][0]};
  const auto pred = model.predict(s.x);
  for (std::size_t i = 0; i < 4000; ++i) {
    REQUIRE(std::abs(pred[i] - oracle[static_cast<int>(s.x(i, 0))]) < 0.15);
  }
}

TEST_CASE("weights scaled by 17 give bit-identical forests") {
  const auto s = smooth(800, 5);
  std::vector<double> w17(s.w.size());
  for (std::size_t i = 0; i < s.w.size(); ++i) w17[i] = 17.0 * s.w[i];
  const auto cfg = small_forest(40);
  const auto m1 = fit_causal_forest(s.x, s.a, s.y, s.w, cfg);
  const auto m17 = fit_causal_forest(s.x, s.a, s.y, w17, cfg);
  CHECK(m1.to_json() == m17.to_json());
  const auto p1 = m1.predict(s.x), p17 = m17.predict(s.x);
  CHECK(std::memcmp(p1.data(), p17.data(), p1.size() * sizeof(double)) == 0);
}

TEST_CASE("arbitrary weights scaled by a power of two give bit-identical forests") {
  const auto s = smooth(800, 6);
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> w(800), w4(800);
  for (std::size_t i = 0; i < 800; ++i) {
    w[i] = 0.1 + expo(rng);
    w4[i] = 0.25 * w[i];
  }
  const auto cfg = small_forest(30);
  CHECK(fit_causal_forest(s.x, s.a, s.y, w, cfg).predict(s.x) ==
        fit_causal_forest(s.x, s.a, s.y, w4, cfg).predict(s.x));
}

TEST_CASE("single-leaf arithmetic") {
  TreeNode leaf;
  leaf.stats = {2.0, 2.0, 6.0, 2.0};
  leaf.effect = leaf.stats.effect();
  const CausalForestModel model(3, {CausalTree({leaf})});
  CHECK(model.predict_row(std::vector<double>{1, 2, 3}) == 2.0);
  CHECK(model.predict_row(std::vector<double>{-9, 0, 4}) == 2.0);
}

TEST_CASE("prediction is a pure, row-wise function") {
  const auto s = smooth(500, 8);
  const auto model = fit_causal_forest(s.x, s.a, s.y, s.w, small_forest(30));
  Matrix q(4, 4);
  for (std::size_t j = 0; j < 4; ++j) {
    q(0, j) = q(2, j) = s.x(3, j);
    q(1, j) = s.x(10, j);
    q(3, j) = s.x(11, j);
  }
  const auto p = model.predict(q);
  CHECK(p[0] == p[2]);

  // Permutation equivariance.
  const std::vector<std::size_t> perm{3, 1, 0, 2};
  const auto pp = model.predict(q.take_rows(perm));
  for (std::size_t i = 0; i < 4; ++i) CHECK(pp[i] == p[perm[i]]);
  CHECK_THROWS_AS(model.predict(Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("forest prediction equals the mean of independently computed tree predictions") {
  const auto s = smooth(700, 9);
  const auto model = fit_causal_forest(s.x, s.a, s.y, s.w, small_forest(25));
  const auto pred = model.predict(s.x);
  for (std::size_t i = 0; i < s.x.rows(); i += 7) {
    double sum = 0.0;
    for (const auto& tree : model.trees()) {
      // Walk the node list by hand rather than through leaf_of.
      std::uint32_t k = 0;
      while (tree.nodes()[k].feature >= 0) {
        const auto& n = tree.nodes()[k];
        k = s.x(i, static_cast<std::size_t>(n.feature)) < n.threshold ? n.left : n.right;
      }
      const auto& st = tree.nodes()[k].stats;
      sum += st.wy_treated / st.w_treated - st.wy_control / st.w_control;
    }
    CHECK(pred[i] == doctest::Approx(sum / model.trees().size()).epsilon(1e-12));
  }
}

TEST_CASE("every leaf has both arms and every threshold lies strictly inside the split sample") {
  const auto s = smooth(1500, 10);
  std::vector<TreeTrace> trace;
  auto cfg = small_forest(40);
  cfg.min_leaf_treated = cfg.min_leaf_control = 2;
  const auto model = fit_causal_forest(s.x, s.a, s.y, s.w, cfg, &trace);
  std::size_t internal = 0;
  for (std::size_t t = 0; t < model.trees().size(); ++t) {
    const auto& tree = model.trees()[t];
    for (std::uint32_t k = 0; k < tree.nodes().size(); ++k) {
      const auto& n = tree.nodes()[k];
      if (n.is_leaf()) {
        REQUIRE(n.stats.w_treated > 0.0);
        REQUIRE(n.stats.w_control > 0.0);
        REQUIRE(std::isfinite(n.effect));
        continue;
      }
      ++internal;
      const auto rows = rows_reaching(tree, k, s.x, trace[t].split_rows);
      double below = -INFINITY, above = INFINITY;
      for (auto r : rows) {
        const double v = s.x(r, static_cast<std::size_t>(n.feature));
        if (v < n.threshold) below = std::max(below, v);
        if (v > n.threshold) above = std::min(above, v);
      }
      REQUIRE(std::isfinite(below));
      REQUIRE(std::isfinite(above));
      REQUIRE(n.threshold == 0.5 * below + 0.5 * above);
    }
  }
  CHECK(internal > 100);
}

TEST_CASE("honesty: split search reads only split-half rows") {
  const auto s = smooth(1000, 12);
  std::vector<TreeTrace> trace;
  const auto model = fit_causal_forest(s.x, s.a, s.y, s.w, small_forest(20), &trace);
  for (const auto& tr : trace) {
    std::set<std::size_t> split(tr.split_rows.begin(), tr.split_rows.end());
    for (auto r : tr.estimation_rows) REQUIRE_FALSE(split.contains(r));
    for (auto r : tr.rows_read_by_split_search) REQUIRE(split.contains(r));
    CHECK(tr.split_rows.size() == 250);
    CHECK(tr.estimation_rows.size() == 250);
  }

  // Changing estimation-half outcomes leaves every split untouched.
  auto cfg = small_forest(1);
  std::vector<TreeTrace> one;
  const auto base = fit_causal_forest(s.x, s.a, s.y, s.w, cfg, &one);
  auto y2 = s.y;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 50.0);
  for (auto r : one[0].estimation_rows) y2[r] += normal(rng);
  const auto moved = fit_causal_forest(s.x, s.a, y2, s.w, cfg);
  const auto& n1 = base.trees()[0].nodes();
  const auto& n2 = moved.trees()[0].nodes();
  REQUIRE(n1.size() == n2.size());
  CHECK(n1.size() > 1);
  for (std::size_t k = 0; k < n1.size(); ++k) {
    CHECK(n1[k].feature == n2[k].feature);
    CHECK(n1[k].threshold == n2[k].threshold);
  }
}

TEST_CASE("parallel tree building matches serial") {
  const auto s = smooth(600, 13);
  auto cfg = small_forest(24);
  const auto serial = fit_causal_forest(s.x, s.a, s.y, s.w, cfg).predict(s.x);
  cfg.num_threads = 4;
  CHECK(fit_causal_forest(s.x, s.a, s.y, s.w, cfg).predict(s.x) == serial);
}

TEST_CASE("max_depth limits tree size") {
  const auto s = smooth(1000, 14);
  auto cfg = small_forest(10);
  cfg.max_depth = 1;
  const auto forest = fit_causal_forest(s.x, s.a, s.y, s.w, cfg);
  for (const auto& t : forest.trees()) CHECK(t.nodes().size() <= 3);
}

TEST_CASE("predict_marginal equals the brute-force average over draws") {
  const auto s = smooth(900, 15);
  const auto model = fit_causal_forest(s.x, s.a, s.y, s.w, small_forest(30));
  Matrix lead(5, 2), draws(37, 2);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < 5; ++i) lead(i, 0) = normal(rng), lead(i, 1) = normal(rng);
  for (std::size_t d = 0; d < 37; ++d) draws(d, 0) = normal(rng), draws(d, 1) = normal(rng);
  const auto fast = model.predict_marginal(lead, draws);
  for (std::size_t i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (std::size_t d = 0; d < 37; ++d) {
      sum += model.predict_row(std::vector<double>{lead(i, 0), lead(i, 1), draws(d, 0), draws(d, 1)});
    }
    CHECK(fast[i] == doctest::Approx(sum / 37).epsilon(1e-12));
  }
}

TEST_CASE("fit input errors") {
  const auto s = smooth(100, 16);
  const auto cfg = small_forest(5);
  std::vector<double> ones(100, 1.0), w = s.w;
  CHECK_THROWS_AS(fit_causal_forest(s.x, ones, s.y, s.w, cfg), std::invalid_argument);
  w[3] = 0.0;
  CHECK_THROWS_AS(fit_causal_forest(s.x, s.a, s.y, w, cfg), std::invalid_argument);
  w[3] = -1.0;
  CHECK_THROWS_AS(fit_causal_forest(s.x, s.a, s.y, w, cfg), std::invalid_argument);
  CHECK_THROWS_AS(fit_causal_forest(Matrix(), {}, {}, {}, cfg), std::invalid_argument);
  auto bad = cfg;
  bad.honesty_fraction = 1.0;
  CHECK_THROWS_AS(fit_causal_forest(s.x, s.a, s.y, s.w, bad), std::invalid_argument);
}

TEST_CASE("leave-one-out cross-fitting matches explicit refits") {
  const auto s = smooth(10, 17);
  auto cfg = small_forest(20);
  cfg.subsample_fraction = 1.0;
  cfg.min_leaf_treated = cfg.min_leaf_control = 1;
  const auto cf = predict_crossfit(s.x, s.a, s.y, s.w, cfg, 10);
  for (std::size_t i = 0; i < 10; ++i) {
    std::vector<std::size_t> train;
    std::vector<double> a, y, w;
    for (std::size_t j = 0; j < 10; ++j) {
      if (j == i) continue;
      train.push_back(j);
      a.push_back(s.a[j]);
      y.push_back(s.y[j]);
      w.push_back(s.w[j]);
    }
    const auto m = fit_causal_forest(s.x.take_rows(train), a, y, w, cfg);
    CHECK(cf[i] == m.predict_row(s.x.row(i)));
  }
}

TEST_CASE("cross-fitting: constant effect, determinism and arm errors") {
  const std::size_t n = 400;
  Matrix x(n, 2);
  std::vector<double> a(n), y(n), w(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = static_cast<double>(i % 17);
    x(i, 1) = static_cast<double>(i % 5);
    a[i] = static_cast<double>((i / 2) % 2);
    y[i] = 1.0 - 0.75 * a[i];
  }
  const auto cfg = small_forest(20);
  for (double p : predict_crossfit(x, a, y, w, cfg, 5)) CHECK(p == doctest::Approx(-0.75).epsilon(1e-12));
  CHECK(crossfit_folds(n, 5, 3) == crossfit_folds(n, 5, 3));
  CHECK(crossfit_folds(n, 5, 3) != crossfit_folds(n, 5, 4));
  const auto folds = crossfit_folds(n, 5, 3);
  for (std::size_t k = 0; k < 5; ++k) CHECK(std::count(folds.begin(), folds.end(), k) == 80);

  // Two rows, one per arm: each training fold holds a single arm.
  Matrix x2(2, 1);
  CHECK_THROWS_AS(predict_crossfit(x2, std::vector<double>{0, 1}, std::vector<double>{0, 1},
                                   std::vector<double>{1, 1}, cfg, 2),
                  std::invalid_argument);
}

TEST_CASE("model dump names its format") {
  const auto s = smooth(200, 18);
  const auto dump = fit_causal_forest(s.x, s.a, s.y, s.w, small_forest(2)).to_json();
  CHECK(dump.find("\"format\": \"cate-causal-forest\"") != std::string::npos);
}
