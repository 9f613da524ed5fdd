#include "cate/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>

#include "cate/random.hpp"

namespace cate {

namespace {

std::string indexed_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%02zu", prefix, i + 1);
  return buf;
}

double sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kSizeBand = 0.05;
constexpr int kMaxInclusionAttempts = 50;
constexpr int kMaxBisection = 200;

}  // namespace

void DGPConfig::validate() const {
  if (n_source < 1) throw std::invalid_argument("dgp: n_source must be >= 1");
  if (dim_x1all < 1 || dim_x2 < 1 || dim_o < 1) {
    throw std::invalid_argument("dgp: all block dimensions must be >= 1");
  }
  if (dim_x1 < 1 || dim_x1 > dim_x1all) {
    throw std::invalid_argument("dgp: dim_x1 must be in [1, dim_x1all]");
  }
  if (!(treat_prob > 0.0 && treat_prob < 1.0)) {
    throw std::invalid_argument("dgp: treat_prob must be in (0, 1)");
  }
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("dgp: noise_sd must be >= 0");
}

std::string x1all_name(std::size_t j) { return indexed_name("x1", j); }
std::string x2_name(std::size_t k) { return indexed_name("x2", k); }
std::string o_name(std::size_t l) { return indexed_name("o", l); }

double true_ite(std::span<const double> x1all, std::span<const double> x2,
                std::span<const double> o, const DGPConfig& config) {
  if (x1all.size() != config.dim_x1all || x2.size() != config.dim_x2 ||
      o.size() != config.dim_o) {
    throw std::invalid_argument("true_ite: vector length does not match config dimensions");
  }
  return config.coef_x1 * sum(x1all) + config.coef_x2 * sum(x2) + config.coef_o * sum(o);
}

double true_cate_x1(std::span<const double> x1, const DGPConfig& config) {
  if (x1.size() != config.dim_x1) {
    throw std::invalid_argument("true_cate_x1: length does not match dim_x1");
  }
  return config.coef_x1 * sum(x1);
}

double selection_score(std::span<const double> x2, const DGPConfig& config) {
  double lin = 0.0;
  double quad = 0.0;
  for (double v : x2) {
    lin += v;
    quad += v * v;
  }
  return expit(config.selection_linear * lin + config.selection_quadratic * quad);
}

SourcePopulation generate_source(const DGPConfig& config) {
  config.validate();
  const std::size_t n = config.n_source;
  const std::size_t width = config.dim_x1all + config.dim_x2 + config.dim_o;

  Rng rng = make_rng(derive_seed(config.seed, Stream::kSource));
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> cols(width, std::vector<double>(n));
  std::vector<double> ite(n);
  std::vector<double> row(width);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < width; ++c) {
      row[c] = normal(rng);
      cols[c][i] = row[c];
    }
    std::span<const double> r(row);
    ite[i] = true_ite(r.subspan(0, config.dim_x1all), r.subspan(config.dim_x1all, config.dim_x2),
                      r.subspan(config.dim_x1all + config.dim_x2), config);
  }

  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
  names.emplace_back(kRowIdColumn);
  std::vector<double> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<double>(i);
  columns.push_back(std::move(ids));

  SourcePopulation out;
  RoleMap roles;
  for (std::size_t j = 0; j < config.dim_x1all; ++j) {
    out.x1all_columns.push_back(x1all_name(j));
    if (j < config.dim_x1) {
      out.active_x1_columns.push_back(x1all_name(j));
      roles[Role::X1].push_back(x1all_name(j));
    }
    names.push_back(x1all_name(j));
  }
  for (std::size_t k = 0; k < config.dim_x2; ++k) {
    names.push_back(x2_name(k));
    roles[Role::X2].push_back(x2_name(k));
  }
  for (std::size_t l = 0; l < config.dim_o; ++l) {
    names.push_back(o_name(l));
    roles[Role::O].push_back(o_name(l));
  }
  for (auto& c : cols) columns.push_back(std::move(c));
  names.emplace_back(kTrueIteColumn);
  columns.push_back(std::move(ite));
  roles[Role::TrueIte] = {kTrueIteColumn};

  out.data = Dataset(std::move(names), std::move(columns), std::move(roles));
  return out;
}

double calibrate_mu(std::span<const double> scores, double target) {
  const double n = static_cast<double>(scores.size());
  if (target < 0.0 || target > n) throw std::invalid_argument("calibrate_mu: target out of range");
  auto expected = [&](double mu) {
    double s = 0.0;
    for (double e : scores) s += std::min(mu * e, 1.0);
    return s;
  };
  double min_pos = std::numeric_limits<double>::infinity();
  for (double e : scores) {
    if (e > 0.0) min_pos = std::min(min_pos, e);
  }
  if (!std::isfinite(min_pos)) throw std::runtime_error("calibrate_mu: all selection scores are zero");

  double lo = 0.0;
  double hi = 1.0 / min_pos;
  double mid = hi;
  for (int it = 0; it < kMaxBisection; ++it) {
    mid = 0.5 * (lo + hi);
    const double f = expected(mid) - target;
    if (std::abs(f) < 0.5) return mid;
    (f < 0.0 ? lo : hi) = mid;
  }
  if (std::abs(expected(hi) - target) < 0.5) return hi;
  throw std::runtime_error("calibrate_mu: bisection did not converge");
}

TrialSample select_trial(const SourcePopulation& source, std::size_t target_n,
                         const DGPConfig& config, std::uint64_t seed) {
  const Dataset& data = source.data;
  const std::size_t n = data.n_rows();
  if (target_n > n) {
    throw std::invalid_argument("select_trial: target_n (" + std::to_string(target_n) +
                                ") exceeds source size (" + std::to_string(n) + ")");
  }

  Matrix x2 = select_columns(data, {Role::X2});
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = selection_score(x2.row(i), config);
  const double mu = calibrate_mu(scores, static_cast<double>(target_n));

  std::vector<double> prob(n);
  for (std::size_t i = 0; i < n; ++i) prob[i] = std::min(mu * scores[i], 1.0);

  Rng rng = make_rng(derive_seed(seed, Stream::kSelection));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double band = kSizeBand * static_cast<double>(target_n);

  std::vector<std::size_t> best;
  double best_gap = std::numeric_limits<double>::infinity();
  int attempts = 0;
  std::vector<std::size_t> draw;
  while (attempts < kMaxInclusionAttempts) {
    ++attempts;
    draw.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (unif(rng) < prob[i]) draw.push_back(i);
    }
    const double gap =
        std::abs(static_cast<double>(draw.size()) - static_cast<double>(target_n));
    if (gap < best_gap) {
      best_gap = gap;
      best = draw;
    }
    if (gap <= band) break;
  }

  std::vector<double> s(n, 0.0);
  for (auto i : best) s[i] = 1.0;

  TrialSample out;
  out.source = data.with_column(kSelectionColumn, std::move(s), Role::Selection);
  out.rows = std::move(best);
  out.trial = out.source.take_rows(out.rows);
  out.mu = mu;
  out.attempts = static_cast<std::size_t>(attempts);
  return out;
}

TrialSample assign_and_outcome(TrialSample trial, const DGPConfig& config, std::uint64_t seed) {
  config.validate();
  const Dataset& t = trial.trial;
  const std::size_t n = t.n_rows();

  std::vector<const std::vector<double>*> covariates;
  for (std::size_t j = 0; j < config.dim_x1all; ++j) covariates.push_back(&t.column(x1all_name(j)));
  for (std::size_t k = 0; k < config.dim_x2; ++k) covariates.push_back(&t.column(x2_name(k)));
  for (std::size_t l = 0; l < config.dim_o; ++l) covariates.push_back(&t.column(o_name(l)));
  const auto& ite = t.column(kTrueIteColumn);

  Rng rng = make_rng(derive_seed(seed, Stream::kAssignment));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> a(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = unif(rng) < config.treat_prob ? 1.0 : 0.0;
    const double z = normal(rng);
    double base = 0.0;
    for (const auto* col : covariates) base += (*col)[i];
    y[i] = base + a[i] * ite[i] + config.noise_sd * z;
  }
  trial.trial = t.with_column(kTreatmentColumn, std::move(a), Role::Treatment)
                    .with_column(kOutcomeColumn, std::move(y), Role::Outcome);
  return trial;
}

}  // namespace cate
