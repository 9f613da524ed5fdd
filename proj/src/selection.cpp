#include "cate/selection.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cate {

namespace {

double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Eigen::MatrixXd design(const Matrix& features) {
  Eigen::MatrixXd x(features.rows(), features.cols() + 1);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    x(static_cast<Eigen::Index>(i), 0) = 1.0;
    for (std::size_t j = 0; j < features.cols(); ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = features(i, j);
    }
  }
  return x;
}

struct IrlsResult {
  Eigen::VectorXd beta;
  bool converged = false;
  bool diverged = false;
  std::size_t iterations = 0;
};

double penalized_ll(const Eigen::MatrixXd& x, const Eigen::VectorXd& s, const Eigen::VectorXd& beta,
                    double ridge) {
  const Eigen::VectorXd eta = x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += s(i) * eta(i) - softplus(eta(i));
  return ll - 0.5 * ridge * beta.tail(beta.size() - 1).squaredNorm();
}

IrlsResult irls(const Eigen::MatrixXd& x, const Eigen::VectorXd& s, const LogisticOptions& opt,
                double ridge) {
  const Eigen::Index n = x.rows();
  const Eigen::Index k = x.cols();
  IrlsResult res;
  res.beta = Eigen::VectorXd::Zero(k);
  const double mean = s.mean();
  res.beta(0) = std::log(mean / (1.0 - mean));

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(k, ridge);
  penalty(0) = 0.0;

  double ll = penalized_ll(x, s, res.beta, ridge);
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    const Eigen::VectorXd eta = x * res.beta;
    Eigen::VectorXd p(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = expit(eta(i));
      w(i) = p(i) * (1.0 - p(i));
    }
    const Eigen::VectorXd score = x.transpose() * (s - p) - penalty.cwiseProduct(res.beta);
    res.iterations = it;
    if (score.cwiseAbs().maxCoeff() < opt.tol) {
      res.converged = true;
      return res;
    }
    Eigen::MatrixXd h = x.transpose() * w.asDiagonal() * x;
    h.diagonal() += penalty;
    const Eigen::VectorXd step = h.ldlt().solve(score);
    if (!step.allFinite()) {
      res.diverged = true;
      return res;
    }

    // Step halving keeps the penalized likelihood monotone.
    double t = 1.0;
    Eigen::VectorXd next = res.beta + step;
    double next_ll = penalized_ll(x, s, next, ridge);
    for (int half = 0; half < 30 && !(next_ll >= ll - 1e-12 * std::abs(ll)); ++half) {
      t *= 0.5;
      next = res.beta + t * step;
      next_ll = penalized_ll(x, s, next, ridge);
    }
    res.beta = next;
    ll = next_ll;
    if (!res.beta.allFinite() || res.beta.cwiseAbs().maxCoeff() > kSeparationMagnitude) {
      res.diverged = true;
      res.iterations = it + 1;
      return res;
    }
  }
  res.iterations = opt.max_iter;
  return res;
}

}  // namespace

void WeightConfig::validate() const {
  if (trim_upper_quantile && !(*trim_upper_quantile > 0.5 && *trim_upper_quantile <= 1.0)) {
    throw std::invalid_argument("weights: trim_upper_quantile must be in (0.5, 1]");
  }
}

double logistic_log_likelihood(const Matrix& features, std::span<const double> labels,
                               std::span<const double> coefficients) {
  if (coefficients.size() != features.cols() + 1 || labels.size() != features.rows()) {
    throw std::invalid_argument("logistic_log_likelihood: shape mismatch");
  }
  double ll = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    double eta = coefficients[0];
    for (std::size_t j = 0; j < features.cols(); ++j) eta += coefficients[j + 1] * features(i, j);
    ll += labels[i] * eta - softplus(eta);
  }
  return ll;
}

SelectionModel fit_logistic(const Matrix& features, std::span<const double> labels,
                            const LogisticOptions& options,
                            std::vector<std::string> feature_names) {
  const std::size_t n = features.rows();
  if (labels.size() != n) throw std::invalid_argument("fit_logistic: label length mismatch");
  if (n == 0) throw std::invalid_argument("fit_logistic: no rows");
  if (options.ridge < 0.0) throw std::invalid_argument("fit_logistic: ridge must be >= 0");
  bool has0 = false, has1 = false;
  for (double s : labels) {
    if (s == 1.0) {
      has1 = true;
    } else if (s == 0.0) {
      has0 = true;
    } else {
      throw std::invalid_argument("fit_logistic: labels must be 0/1");
    }
  }
  if (!has0 || !has1) throw std::invalid_argument("labels constant");
  for (std::size_t j = 0; j < features.cols(); ++j) {
    bool constant = true;
    for (std::size_t i = 1; i < n && constant; ++i) constant = features(i, j) == features(0, j);
    if (constant) {
      throw std::invalid_argument("fit_logistic: feature " + std::to_string(j) +
                                  " is constant and duplicates the intercept");
    }
  }
  if (!feature_names.empty() && feature_names.size() != features.cols()) {
    throw std::invalid_argument("fit_logistic: feature name count mismatch");
  }

  const Eigen::MatrixXd x = design(features);
  Eigen::VectorXd s(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) s(static_cast<Eigen::Index>(i)) = labels[i];

  double ridge = options.ridge;
  IrlsResult res = irls(x, s, options, ridge);
  bool fallback = false;
  if (!res.converged) {
    ridge = std::max(ridge, kFallbackRidge);
    fallback = true;
    res = irls(x, s, options, ridge);
    if (!res.converged) {
      throw std::runtime_error("fit_logistic: no convergence after ridge fallback");
    }
  }

  SelectionModel model;
  model.coefficients.assign(res.beta.data(), res.beta.data() + res.beta.size());
  model.features = std::move(feature_names);
  model.converged = true;
  model.ridge_fallback = fallback;
  model.iterations = res.iterations;
  model.ridge = ridge;
  model.log_likelihood = logistic_log_likelihood(features, labels, model.coefficients);
  return model;
}

double participation_prob(const SelectionModel& model, std::span<const double> x) {
  if (x.size() != model.num_features()) {
    throw std::invalid_argument("participation_prob: expected " +
                                std::to_string(model.num_features()) + " features, got " +
                                std::to_string(x.size()));
  }
  double eta = model.coefficients[0];
  for (std::size_t j = 0; j < x.size(); ++j) eta += model.coefficients[j + 1] * x[j];
  return std::clamp(expit(eta), kProbClamp, 1.0 - kProbClamp);
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("empirical_quantile: empty input");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

std::vector<double> ipw_weights(const SelectionModel& model, const Matrix& trial_features,
                                const WeightConfig& config) {
  config.validate();
  std::vector<double> w(trial_features.rows());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = 1.0 / participation_prob(model, trial_features.row(i));
  }
  if (w.empty()) return w;
  if (config.trim_upper_quantile) {
    const double cap = empirical_quantile(w, *config.trim_upper_quantile);
    for (auto& v : w) v = std::min(v, cap);
  }
  if (config.normalize_mean_one) {
    double total = 0.0;
    for (double v : w) total += v;
    const double mean = total / static_cast<double>(w.size());
    for (auto& v : w) v /= mean;
  }
  return w;
}

OverlapReport overlap_diagnostics(const SelectionModel& model, const Matrix& source_features,
                                  double floor) {
  OverlapReport report;
  report.floor = floor;
  if (source_features.rows() == 0) return report;
  std::vector<double> p(source_features.rows());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = participation_prob(model, source_features.row(i));
    if (p[i] < floor) ++report.count_below_floor;
  }
  auto [lo, hi] = std::minmax_element(p.begin(), p.end());
  report.min_prob = *lo;
  report.max_prob = *hi;
  std::sort(p.begin(), p.end());
  const std::size_t mid = p.size() / 2;
  report.median_prob = p.size() % 2 ? p[mid] : 0.5 * (p[mid - 1] + p[mid]);
  return report;
}

}  // namespace cate
