#include "cate/transport.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "cate/random.hpp"

namespace cate {

namespace {

constexpr std::array<std::pair<Model, std::string_view>, 4> kModelNames{{
    {Model::M1, "M1"},
    {Model::M2, "M2"},
    {Model::M1_IPW, "M1_IPW"},
    {Model::M2_IPW, "M2_IPW"},
}};

std::vector<double> unit_weights(std::size_t n) { return std::vector<double>(n, 1.0); }

std::vector<double> labels_or_throw(const Dataset& d, Role role) {
  if (!d.has_role(role)) {
    throw DataError("trial dataset lacks the " + std::string(to_string(role)) + " role");
  }
  return d.role_column(role);
}

void check_same_names(const Dataset& a, const Dataset& b, Role role, const char* what) {
  if (a.role_columns(role) != b.role_columns(role)) {
    throw DataError(std::string(what) + ": " + std::string(to_string(role)) +
                    " columns differ between datasets");
  }
}

}  // namespace

std::string_view to_string(Model model) {
  for (const auto& [m, name] : kModelNames) {
    if (m == model) return name;
  }
  return "unknown";
}

std::string_view to_string(Aim aim) { return aim == Aim::A ? "A" : "B"; }

std::string_view to_string(SamplerKind kind) {
  return kind == SamplerKind::Knn ? "knn" : "independent_marginal";
}

Model model_from_string(std::string_view name) {
  for (const auto& [m, n] : kModelNames) {
    if (n == name) return m;
  }
  throw std::invalid_argument("unknown model '" + std::string(name) + "'");
}

Aim aim_from_string(std::string_view name) {
  if (name == "A" || name == "a") return Aim::A;
  if (name == "B" || name == "b") return Aim::B;
  throw std::invalid_argument("unknown aim '" + std::string(name) + "'");
}

SamplerKind sampler_from_string(std::string_view name) {
  if (name == "independent_marginal" || name == "independent") return SamplerKind::IndependentMarginal;
  if (name == "knn") return SamplerKind::Knn;
  throw std::invalid_argument("unknown conditional sampler '" + std::string(name) + "'");
}

void EstimatorSpec::validate() const {
  forest.validate();
  weights.validate();
  if (mc_draws < 1) throw std::invalid_argument("estimator: mc_draws must be >= 1");
  if (knn_k < 1) throw std::invalid_argument("estimator: knn_k must be >= 1");
}

KnnSampler::KnnSampler(Matrix source_x1, Matrix source_x2)
    : x1_(std::move(source_x1)), x2_(std::move(source_x2)) {
  if (x1_.rows() != x2_.rows()) throw std::invalid_argument("knn: X1 and X2 row counts differ");
  const std::size_t n = x1_.rows();
  const std::size_t d = x1_.cols();
  mean_.assign(d, 0.0);
  sd_.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x1_(i, j);
    mean_[j] = n ? s / static_cast<double>(n) : 0.0;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (x1_(i, j) - mean_[j]) * (x1_(i, j) - mean_[j]);
    sd_[j] = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  }
  z_ = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      z_(i, j) = sd_[j] > 0.0 ? (x1_(i, j) - mean_[j]) / sd_[j] : 0.0;
    }
  }
}

std::vector<std::size_t> KnnSampler::neighbors(std::span<const double> x1_query,
                                               std::size_t k) const {
  const std::size_t n = z_.rows();
  const std::size_t d = z_.cols();
  if (x1_query.size() != d) throw std::invalid_argument("knn: query width does not match X1");
  if (k > n) {
    throw std::invalid_argument("knn: k (" + std::to_string(k) + ") exceeds source size (" +
                                std::to_string(n) + ")");
  }
  std::vector<double> q(d);
  for (std::size_t j = 0; j < d; ++j) {
    q[j] = sd_[j] > 0.0 ? (x1_query[j] - mean_[j]) / sd_[j] : 0.0;
  }
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = z_.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (row[j] - q[j]) * (row[j] - q[j]);
    dist[i] = {s, i};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
  return out;
}

Matrix KnnSampler::sample(std::span<const double> x1_query, std::size_t k, std::size_t m,
                          std::uint64_t seed) const {
  const auto nb = neighbors(x1_query, k);
  Rng rng = make_rng(derive_seed(seed, Stream::kIntegration));
  std::uniform_int_distribution<std::size_t> pick(0, nb.size() - 1);
  Matrix out(m, x2_.cols());
  for (std::size_t i = 0; i < m; ++i) {
    const auto src = x2_.row(nb[pick(rng)]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix sample_x2_independent(const Matrix& source_x2, std::size_t m, std::uint64_t seed) {
  if (source_x2.rows() == 0) throw std::invalid_argument("sample_x2_independent: empty source");
  Rng rng = make_rng(derive_seed(seed, Stream::kIntegration));
  std::uniform_int_distribution<std::size_t> pick(0, source_x2.rows() - 1);
  Matrix out(m, source_x2.cols());
  for (std::size_t i = 0; i < m; ++i) {
    const auto src = source_x2.row(pick(rng));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix sample_x2_independent(const Dataset& source, std::size_t m, std::uint64_t seed) {
  return sample_x2_independent(select_columns(source, {Role::X2}), m, seed);
}

Matrix sample_x2_knn(const Dataset& source, std::span<const double> x1_query, std::size_t k,
                     std::size_t m, std::uint64_t seed) {
  KnnSampler sampler(select_columns(source, {Role::X1}), select_columns(source, {Role::X2}));
  return sampler.sample(x1_query, k, m, seed);
}

SelectionFit fit_selection(const Dataset& trial, const Dataset& source, const EstimatorSpec& spec) {
  std::vector<Role> roles{Role::X2};
  if (spec.selection_on_x1_and_x2) roles = {Role::X1, Role::X2};
  const auto names = selected_names(source, roles);
  if (names != selected_names(trial, roles)) {
    throw DataError("participation model: feature columns differ between trial and source");
  }

  Matrix features;
  std::vector<double> labels;
  const Matrix source_x = select_columns(source, roles);
  const Matrix trial_x = select_columns(trial, roles);
  if (source.has_role(Role::Selection)) {
    features = source_x;
    labels = source.role_column(Role::Selection);
  } else {
    std::vector<double> data;
    data.reserve((trial_x.rows() + source_x.rows()) * source_x.cols());
    data.insert(data.end(), trial_x.data().begin(), trial_x.data().end());
    data.insert(data.end(), source_x.data().begin(), source_x.data().end());
    features = Matrix(trial_x.rows() + source_x.rows(), source_x.cols(), std::move(data));
    labels.assign(trial_x.rows(), 1.0);
    labels.resize(features.rows(), 0.0);
  }
  SelectionFit fit;
  fit.model = fit_logistic(features, labels, {}, names);
  fit.trial_weights = ipw_weights(fit.model, trial_x, spec.weights);
  return fit;
}

FittedEstimator fit_estimator(const Dataset& trial, const Dataset& source,
                              const EstimatorSpec& spec) {
  spec.validate();
  FittedEstimator out;
  out.spec = spec;
  out.feature_roles = uses_x2(spec.model) ? std::vector<Role>{Role::X1, Role::X2}
                                          : std::vector<Role>{Role::X1};
  for (Role r : out.feature_roles) check_same_names(trial, source, r, "fit_estimator");
  if (source.has_role(Role::X2) && trial.has_role(Role::X2)) {
    check_same_names(trial, source, Role::X2, "fit_estimator");
  }
  out.feature_names = selected_names(trial, out.feature_roles);
  out.num_x1 = trial.role_columns(Role::X1).size();

  const auto treatment = labels_or_throw(trial, Role::Treatment);
  const auto outcome = labels_or_throw(trial, Role::Outcome);

  if (is_ipw(spec.model)) {
    auto sel = fit_selection(trial, source, spec);
    out.selection = std::move(sel.model);
    out.trial_weights = std::move(sel.trial_weights);
  } else {
    out.trial_weights = unit_weights(trial.n_rows());
  }

  const Matrix features = select_columns(trial, out.feature_roles);
  out.forest = fit_causal_forest(features, treatment, outcome, out.trial_weights, spec.forest);

  if (uses_x2(spec.model)) {
    out.source_x1 = select_columns(source, {Role::X1});
    out.source_x2 = select_columns(source, {Role::X2});
  }
  return out;
}

std::vector<double> estimate_aim_b(const FittedEstimator& fitted, const Dataset& query) {
  if (selected_names(query, fitted.feature_roles) != fitted.feature_names) {
    throw DataError("estimate_aim_b: query feature columns do not match the fitted model");
  }
  return fitted.forest.predict(select_columns(query, fitted.feature_roles));
}

std::vector<double> estimate_aim_a(const FittedEstimator& fitted, const Matrix& x1_queries,
                                   std::uint64_t seed) {
  if (x1_queries.cols() != fitted.num_x1) {
    throw std::invalid_argument("estimate_aim_a: expected " + std::to_string(fitted.num_x1) +
                                " X1 columns, got " + std::to_string(x1_queries.cols()));
  }
  if (!uses_x2(fitted.spec.model)) return fitted.forest.predict(x1_queries);
  if (fitted.source_x2.rows() == 0) {
    throw std::invalid_argument("estimate_aim_a: no source covariates for integration");
  }

  const auto& spec = fitted.spec;
  if (spec.sampler == SamplerKind::IndependentMarginal) {
    // One draw set serves every query; X1 and X2 are independent under this sampler.
    const Matrix draws = spec.exhaustive
                             ? fitted.source_x2
                             : sample_x2_independent(fitted.source_x2, spec.mc_draws, seed);
    return fitted.forest.predict_marginal(x1_queries, draws);
  }

  const KnnSampler knn(fitted.source_x1, fitted.source_x2);
  const std::size_t k = std::min(spec.knn_k, knn.size());
  std::vector<double> out(x1_queries.rows());
  for (std::size_t i = 0; i < x1_queries.rows(); ++i) {
    const auto x1 = x1_queries.row(i);
    Matrix draws;
    if (spec.exhaustive) {
      draws = knn.x2().take_rows(knn.neighbors(x1, k));
    } else {
      draws = knn.sample(x1, k, spec.mc_draws, derive_seed(seed, {i}));
    }
    Matrix single(1, x1.size(), std::vector<double>(x1.begin(), x1.end()));
    out[i] = fitted.forest.predict_marginal(single, draws).front();
  }
  return out;
}

}  // namespace cate
