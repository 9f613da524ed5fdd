#include "cate/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "cate/random.hpp"

namespace cate {

namespace {

constexpr const char* kMetricsHeader =
    "scenario,model,aim,trial_size,dim_x1,coef_x2,replicate,mse,bias,variance,status";
constexpr const char* kAggregateHeader =
    "scenario,model,aim,trial_size,dim_x1,coef_x2,n_ok,n_failed,mse_mean,mse_se,bias_mean,"
    "bias_se,abs_bias_mean,abs_bias_se,bias_sq_mean,bias_sq_se,variance_mean,variance_se";

// Specs that share a model and fitting settings share one fitted estimator.
bool same_fit(const EstimatorSpec& a, const EstimatorSpec& b) {
  return a.model == b.model && a.forest == b.forest && a.weights == b.weights &&
         a.selection_on_x1_and_x2 == b.selection_on_x1_and_x2;
}

std::string sanitize(std::string s) {
  for (auto& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& s) {
  if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("metrics CSV: bad number '" + s + "'");
  }
  return v;
}

std::size_t parse_count(const std::string& s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("metrics CSV: bad count '" + s + "'");
  }
  return v;
}

std::string real(double v) { return std::isnan(v) ? "nan" : format_double(v); }

std::pair<double, double> mean_se(const std::vector<double>& v) {
  if (v.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan};
  }
  double s = 0.0;
  for (double x : v) s += x;
  const double n = static_cast<double>(v.size());
  const double mean = s / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

std::ifstream open_with_header(const std::filesystem::path& path, const char* header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw DataError("'" + path.string() + "': unexpected header");
  return in;
}

}  // namespace

std::string scenario_id(double coef_x2) { return "coef_x2_" + format_double(coef_x2); }

std::vector<EstimatorSpec> all_specs(const ForestConfig& forest) {
  std::vector<EstimatorSpec> out;
  for (Aim aim : {Aim::A, Aim::B}) {
    for (Model m : {Model::M1, Model::M2, Model::M1_IPW, Model::M2_IPW}) {
      EstimatorSpec s;
      s.model = m;
      s.aim = aim;
      s.forest = forest;
      out.push_back(s);
    }
  }
  return out;
}

void GridConfig::validate() const {
  base.validate();
  if (trial_sizes.empty() || dim_x1_values.empty() || coef_x2_values.empty()) {
    throw std::invalid_argument("grid: trial_sizes, dim_x1_values and coef_x2_values must be nonempty");
  }
  if (replicates < 1) throw std::invalid_argument("grid: replicates must be >= 1");
  if (specs.empty()) throw std::invalid_argument("grid: no estimator specs");
  for (const auto& s : specs) s.validate();
  for (auto d : dim_x1_values) {
    if (d < 1 || d > base.dim_x1all) throw std::invalid_argument("grid: dim_x1 out of range");
  }
  for (auto t : trial_sizes) {
    if (t > base.n_source) throw std::invalid_argument("grid: trial size exceeds n_source");
  }
}

std::vector<MetricsRecord> run_cell(const DGPConfig& dgp, std::size_t trial_size,
                                    std::size_t dim_x1, std::span<const EstimatorSpec> specs,
                                    std::uint64_t rep_seed, std::size_t replicate) {
  DGPConfig cfg = dgp;
  cfg.dim_x1 = dim_x1;
  cfg.seed = rep_seed;
  const SourcePopulation source = generate_source(cfg);
  TrialSample sample = select_trial(source, trial_size, cfg, rep_seed);
  sample = assign_and_outcome(std::move(sample), cfg, rep_seed);

  const Dataset& population = sample.source;
  const Matrix x1 = select_columns(population, {Role::X1});
  std::vector<double> truth_a(population.n_rows());
  for (std::size_t i = 0; i < truth_a.size(); ++i) truth_a[i] = true_cate_x1(x1.row(i), cfg);
  const auto& truth_b = population.role_column(Role::TrueIte);

  std::vector<std::pair<EstimatorSpec, FittedEstimator>> fits;
  std::vector<MetricsRecord> out;
  for (const auto& spec_in : specs) {
    EstimatorSpec spec = spec_in;
    spec.forest.seed = derive_seed(rep_seed, {static_cast<std::uint64_t>(Stream::kForest),
                                              spec_in.forest.seed});
    auto it = std::find_if(fits.begin(), fits.end(),
                           [&](const auto& f) { return same_fit(f.first, spec); });
    if (it == fits.end()) {
      fits.emplace_back(spec, fit_estimator(sample.trial, population, spec));
      it = std::prev(fits.end());
    }
    FittedEstimator& fitted = it->second;
    fitted.spec = spec;

    std::vector<double> pred;
    if (spec.aim == Aim::A) {
      pred = estimate_aim_a(fitted, x1, derive_seed(rep_seed, Stream::kIntegration));
    } else {
      pred = estimate_aim_b(fitted, population);
    }
    const Metrics m = metrics(pred, spec.aim == Aim::A ? truth_a : truth_b);

    MetricsRecord r;
    r.scenario = scenario_id(cfg.coef_x2);
    r.model = spec.model;
    r.aim = spec.aim;
    r.trial_size = trial_size;
    r.dim_x1 = dim_x1;
    r.coef_x2 = cfg.coef_x2;
    r.replicate = replicate;
    r.mse = m.mse;
    r.bias = m.bias;
    r.variance = m.variance;
    out.push_back(std::move(r));
  }
  return out;
}

std::uint64_t replicate_seed(std::uint64_t master_seed, double coef_x2, std::size_t trial_size,
                             std::size_t dim_x1, std::size_t replicate) {
  return derive_seed(master_seed, {std::bit_cast<std::uint64_t>(coef_x2), trial_size, dim_x1,
                                   replicate});
}

MetricsTable run_grid(const GridConfig& grid, std::size_t parallelism, const ProgressFn& progress) {
  grid.validate();
  struct Task {
    std::size_t cell;
    double coef_x2;
    std::size_t trial_size;
    std::size_t dim_x1;
    std::size_t replicate;
  };
  std::vector<Task> tasks;
  std::size_t cell = 0;
  for (double c : grid.coef_x2_values) {
    for (auto t : grid.trial_sizes) {
      for (auto d : grid.dim_x1_values) {
        for (std::size_t r = 0; r < grid.replicates; ++r) tasks.push_back({cell, c, t, d, r});
        ++cell;
      }
    }
  }
  const std::size_t n_cells = cell;

  std::vector<std::vector<MetricsRecord>> results(tasks.size());
  std::vector<std::size_t> remaining(n_cells, grid.replicates);
  std::vector<std::size_t> failed(n_cells, 0);
  std::size_t cells_done = 0;
  std::mutex mutex;

  auto run_task = [&](std::size_t i) {
    const Task& task = tasks[i];
    DGPConfig dgp = grid.base;
    dgp.coef_x2 = task.coef_x2;
    const auto seed =
        replicate_seed(grid.master_seed, task.coef_x2, task.trial_size, task.dim_x1, task.replicate);
    bool ok = true;
    try {
      results[i] = run_cell(dgp, task.trial_size, task.dim_x1, grid.specs, seed, task.replicate);
    } catch (const std::exception& e) {
      ok = false;
      std::vector<MetricsRecord> recs;
      for (const auto& spec : grid.specs) {
        MetricsRecord r;
        r.scenario = scenario_id(task.coef_x2);
        r.model = spec.model;
        r.aim = spec.aim;
        r.trial_size = task.trial_size;
        r.dim_x1 = task.dim_x1;
        r.coef_x2 = task.coef_x2;
        r.replicate = task.replicate;
        r.mse = r.bias = r.variance = std::numeric_limits<double>::quiet_NaN();
        r.status = sanitize(std::string("error: ") + e.what());
        recs.push_back(std::move(r));
      }
      results[i] = std::move(recs);
    }
    std::lock_guard lock(mutex);
    if (!ok) ++failed[task.cell];
    if (--remaining[task.cell] == 0) {
      ++cells_done;
      if (progress) {
        progress({cells_done, n_cells, task.coef_x2, task.trial_size, task.dim_x1,
                  failed[task.cell]});
      }
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(parallelism, 1, std::max<std::size_t>(tasks.size(), 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run_task(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) run_task(i);
      });
    }
  }

  MetricsTable table;
  for (auto& r : results) {
    for (auto& rec : r) table.records.push_back(std::move(rec));
  }
  table.aggregates = aggregate(table.records);
  return table;
}

std::vector<AggregateRecord> aggregate(std::span<const MetricsRecord> records) {
  using Key = std::tuple<std::string, Model, Aim, std::size_t, std::size_t, double>;
  std::vector<Key> order;
  std::map<Key, std::vector<const MetricsRecord*>> groups;
  for (const auto& r : records) {
    Key k{r.scenario, r.model, r.aim, r.trial_size, r.dim_x1, r.coef_x2};
    auto [it, inserted] = groups.try_emplace(k);
    if (inserted) order.push_back(k);
    it->second.push_back(&r);
  }

  std::vector<AggregateRecord> out;
  for (const auto& k : order) {
    const auto& recs = groups.at(k);
    AggregateRecord a;
    std::tie(a.scenario, a.model, a.aim, a.trial_size, a.dim_x1, a.coef_x2) = k;
    std::vector<double> mse, bias, abs_bias, bias_sq, var;
    for (const auto* r : recs) {
      if (!r->ok()) {
        ++a.n_failed;
        continue;
      }
      ++a.n_ok;
      mse.push_back(r->mse);
      bias.push_back(r->bias);
      abs_bias.push_back(std::abs(r->bias));
      bias_sq.push_back(r->bias * r->bias);
      var.push_back(r->variance);
    }
    std::tie(a.mse_mean, a.mse_se) = mean_se(mse);
    std::tie(a.bias_mean, a.bias_se) = mean_se(bias);
    std::tie(a.abs_bias_mean, a.abs_bias_se) = mean_se(abs_bias);
    std::tie(a.bias_sq_mean, a.bias_sq_se) = mean_se(bias_sq);
    std::tie(a.variance_mean, a.variance_se) = mean_se(var);
    out.push_back(std::move(a));
  }
  return out;
}

void write_metrics_csv(std::span<const MetricsRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << kMetricsHeader << '\n';
  for (const auto& r : records) {
    out << r.scenario << ',' << to_string(r.model) << ',' << to_string(r.aim) << ','
        << r.trial_size << ',' << r.dim_x1 << ',' << format_double(r.coef_x2) << ','
        << r.replicate << ',' << real(r.mse) << ',' << real(r.bias) << ',' << real(r.variance)
        << ',' << sanitize(r.status) << '\n';
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  auto in = open_with_header(path, kMetricsHeader);
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 11) {
      throw DataError("'" + path.string() + "' line " + std::to_string(line_no) +
                      ": expected 11 fields");
    }
    MetricsRecord r;
    r.scenario = f[0];
    r.model = model_from_string(f[1]);
    r.aim = aim_from_string(f[2]);
    r.trial_size = parse_count(f[3]);
    r.dim_x1 = parse_count(f[4]);
    r.coef_x2 = parse_real(f[5]);
    r.replicate = parse_count(f[6]);
    r.mse = parse_real(f[7]);
    r.bias = parse_real(f[8]);
    r.variance = parse_real(f[9]);
    r.status = f[10];
    out.push_back(std::move(r));
  }
  return out;
}

void write_aggregate_csv(std::span<const AggregateRecord> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << kAggregateHeader << '\n';
  for (const auto& a : rows) {
    out << a.scenario << ',' << to_string(a.model) << ',' << to_string(a.aim) << ','
        << a.trial_size << ',' << a.dim_x1 << ',' << format_double(a.coef_x2) << ',' << a.n_ok
        << ',' << a.n_failed << ',' << real(a.mse_mean) << ',' << real(a.mse_se) << ','
        << real(a.bias_mean) << ',' << real(a.bias_se) << ',' << real(a.abs_bias_mean) << ','
        << real(a.abs_bias_se) << ',' << real(a.bias_sq_mean) << ',' << real(a.bias_sq_se) << ','
        << real(a.variance_mean) << ',' << real(a.variance_se) << '\n';
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<AggregateRecord> read_aggregate_csv(const std::filesystem::path& path) {
  auto in = open_with_header(path, kAggregateHeader);
  std::vector<AggregateRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 18) throw DataError("'" + path.string() + "': expected 18 fields");
    AggregateRecord a;
    a.scenario = f[0];
    a.model = model_from_string(f[1]);
    a.aim = aim_from_string(f[2]);
    a.trial_size = parse_count(f[3]);
    a.dim_x1 = parse_count(f[4]);
    a.coef_x2 = parse_real(f[5]);
    a.n_ok = parse_count(f[6]);
    a.n_failed = parse_count(f[7]);
    a.mse_mean = parse_real(f[8]);
    a.mse_se = parse_real(f[9]);
    a.bias_mean = parse_real(f[10]);
    a.bias_se = parse_real(f[11]);
    a.abs_bias_mean = parse_real(f[12]);
    a.abs_bias_se = parse_real(f[13]);
    a.bias_sq_mean = parse_real(f[14]);
    a.bias_sq_se = parse_real(f[15]);
    a.variance_mean = parse_real(f[16]);
    a.variance_se = parse_real(f[17]);
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace cate
