// catecli: simulate | replicate | apply | plot
//
// Exit codes: 0 success, 1 usage or config error, 2 runtime or data error.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cate/config.hpp"
#include "cate/dataset.hpp"
#include "cate/dgp.hpp"
#include "cate/gate.hpp"
#include "cate/random.hpp"
#include "cate/simulation.hpp"
#include "cate/svg_plot.hpp"
#include "cate/transport.hpp"

namespace fs = std::filesystem;
using namespace cate;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::size_t> parallelism;
  std::optional<std::uint64_t> seed;
  std::string trial_csv;
  std::string source_csv;
  std::string metrics_csv;
};

// Config file plus command-line overrides. --out wins over CATE_OUTPUT_DIR,
// which wins over the file.
RunConfig resolve_config(const Options& opt) {
  RunConfig cfg = opt.config.empty() ? parse_run_config("{}") : load_run_config(opt.config);
  if (const char* env = std::getenv("CATE_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  if (opt.parallelism) {
    if (*opt.parallelism < 1) throw ConfigError("--parallelism must be >= 1");
    cfg.parallelism = *opt.parallelism;
  }
  if (opt.seed) cfg.set_seed(*opt.seed);
  return cfg;
}

// Files are written under a temporary name and renamed once complete.
template <typename F>
void write_atomically(const fs::path& path, F&& write) {
  fs::path tmp = path;
  tmp += ".part";
  try {
    write(tmp);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

int cmd_simulate(const Options& opt) {
  const RunConfig cfg = resolve_config(opt);
  const SourcePopulation source = generate_source(cfg.dgp);
  TrialSample sample = select_trial(source, cfg.simulate_trial_size, cfg.dgp, cfg.seed);
  sample = assign_and_outcome(std::move(sample), cfg.dgp, cfg.seed);

  fs::create_directories(cfg.output_dir);
  write_atomically(cfg.output_dir / "source.csv",
                   [&](const fs::path& p) { write_dataset(sample.source, p); });
  write_atomically(cfg.output_dir / "trial.csv",
                   [&](const fs::path& p) { write_dataset(sample.trial, p); });
  std::printf("source rows: %zu\n", sample.source.n_rows());
  std::printf("trial rows: %zu (target %zu, %zu selection passes)\n", sample.trial.n_rows(),
              cfg.simulate_trial_size, sample.attempts);
  std::printf("mu: %s\n", format_double(sample.mu).c_str());
  return 0;
}

int cmd_replicate(const Options& opt) {
  const RunConfig cfg = resolve_config(opt);
  validate_grid(cfg.grid);
  const auto table = run_grid(cfg.grid, cfg.parallelism, [](const CellProgress& p) {
    std::fprintf(stderr, "[%zu/%zu] coef_x2=%s trial_size=%zu dim_x1=%zu failed=%zu\n",
                 p.cells_done, p.cells_total, format_double(p.coef_x2).c_str(), p.trial_size,
                 p.dim_x1, p.failed_replicates);
  });
  fs::create_directories(cfg.output_dir);
  write_atomically(cfg.output_dir / "metrics.csv",
                   [&](const fs::path& p) { write_metrics_csv(table.records, p); });
  write_atomically(cfg.output_dir / "aggregate.csv",
                   [&](const fs::path& p) { write_aggregate_csv(table.aggregates, p); });
  std::size_t failed = 0;
  for (const auto& r : table.records) failed += r.ok() ? 0 : 1;
  std::printf("records: %zu (failed %zu), aggregate rows: %zu\n", table.records.size(), failed,
              table.aggregates.size());
  return 0;
}

// Schema matching the column names written by `simulate`.
SchemaConfig simulated_schema(const DGPConfig& dgp) {
  SchemaConfig s;
  for (std::size_t j = 0; j < dgp.dim_x1; ++j) s.roles[Role::X1].push_back(x1all_name(j));
  for (std::size_t j = 0; j < dgp.dim_x2; ++j) s.roles[Role::X2].push_back(x2_name(j));
  s.roles[Role::Treatment] = {kTreatmentColumn};
  s.roles[Role::Outcome] = {kOutcomeColumn};
  s.roles[Role::Selection] = {kSelectionColumn};
  return s;
}

SchemaConfig restrict_roles(const SchemaConfig& schema, std::initializer_list<Role> keep) {
  SchemaConfig out = schema;
  out.roles.clear();
  for (Role r : keep) {
    if (auto it = schema.roles.find(r); it != schema.roles.end()) out.roles[r] = it->second;
  }
  return out;
}

std::vector<double> row_ids(const Dataset& d, const std::optional<std::string>& column) {
  if (column && d.has_column(*column)) return d.column(*column);
  std::vector<double> ids(d.n_rows());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<double>(i);
  return ids;
}

int cmd_apply(const Options& opt) {
  RunConfig cfg = resolve_config(opt);
  fs::path trial_path, source_path;
  if (!opt.trial_csv.empty()) {
    trial_path = opt.trial_csv;
  } else if (cfg.trial_csv) {
    trial_path = *cfg.trial_csv;
  }
  if (!opt.source_csv.empty()) {
    source_path = opt.source_csv;
  } else if (cfg.source_csv) {
    source_path = *cfg.source_csv;
  }
  if (trial_path.empty() || source_path.empty()) {
    throw ConfigError("apply needs a trial CSV and a source CSV");
  }
  for (std::size_t i = 0; i < cfg.specs.size(); ++i) {
    if (!cfg.sampler_explicit[i]) cfg.specs[i].sampler = SamplerKind::Knn;
  }
  const SchemaConfig schema = cfg.schema ? *cfg.schema : simulated_schema(cfg.dgp);
  const std::optional<std::string> row_id =
      cfg.schema ? cfg.row_id_column : std::optional<std::string>(kRowIdColumn);

  const Dataset trial = load_dataset(
      trial_path, restrict_roles(schema, {Role::X1, Role::X2, Role::Treatment, Role::Outcome}));
  Dataset source;
  if (!cfg.trial_in_source) {
    source = load_dataset(source_path, restrict_roles(schema, {Role::X1, Role::X2}));
  } else if (schema.roles.contains(Role::Selection)) {
    source = load_dataset(source_path, restrict_roles(schema, {Role::X1, Role::X2, Role::Selection}));
  } else {
    // Nested design without a selection column: mark source rows whose id
    // appears in the trial.
    if (!row_id) throw ConfigError("schema: trial_in_source needs a selection or row_id column");
    source = load_dataset(source_path, restrict_roles(schema, {Role::X1, Role::X2}));
    if (!trial.has_column(*row_id) || !source.has_column(*row_id)) {
      throw DataError("row id column '" + *row_id + "' missing from trial or source");
    }
    const auto& ids = trial.column(*row_id);
    const std::set<double> in_trial(ids.begin(), ids.end());
    std::vector<double> s(source.n_rows());
    const auto& src_ids = source.column(*row_id);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = in_trial.contains(src_ids[i]) ? 1.0 : 0.0;
    source = source.with_column("__in_trial", std::move(s), Role::Selection);
  }

  const Matrix source_x1 = select_columns(source, {Role::X1});
  const auto source_ids = row_ids(source, row_id);
  const auto trial_ids = row_ids(trial, row_id);
  const auto& a = trial.role_column(Role::Treatment);
  const auto& y = trial.role_column(Role::Outcome);

  std::ostringstream predictions;
  predictions << "row_id,model,aim,cate_hat\n";
  std::vector<std::pair<EstimatorSpec, FittedEstimator>> fits;
  for (const auto& spec : cfg.specs) {
    auto it = std::find_if(fits.begin(), fits.end(), [&](const auto& f) {
      return f.first.model == spec.model && f.first.forest == spec.forest &&
             f.first.weights == spec.weights &&
             f.first.selection_on_x1_and_x2 == spec.selection_on_x1_and_x2;
    });
    if (it == fits.end()) {
      fits.emplace_back(spec, fit_estimator(trial, source, spec));
      it = std::prev(fits.end());
    }
    FittedEstimator fitted = it->second;
    fitted.spec = spec;
    const auto pred =
        spec.aim == Aim::A
            ? estimate_aim_a(fitted, source_x1, derive_seed(cfg.seed, Stream::kIntegration))
            : estimate_aim_b(fitted, source);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      predictions << format_double(source_ids[i]) << ',' << to_string(spec.model) << ','
                  << to_string(spec.aim) << ',' << format_double(pred[i]) << '\n';
    }
  }

  // Participation weights from the first IPW spec, or the default X2 model.
  EstimatorSpec weight_spec;
  weight_spec.model = Model::M1_IPW;
  for (const auto& spec : cfg.specs) {
    if (is_ipw(spec.model)) {
      weight_spec = spec;
      break;
    }
  }
  const SelectionFit sel = fit_selection(trial, source, weight_spec);
  const std::vector<Role> sel_roles = weight_spec.selection_on_x1_and_x2
                                          ? std::vector<Role>{Role::X1, Role::X2}
                                          : std::vector<Role>{Role::X2};
  const Matrix trial_sel = select_columns(trial, sel_roles);
  std::ostringstream weights;
  weights << "row_id,probability,weight\n";
  for (std::size_t i = 0; i < trial.n_rows(); ++i) {
    weights << format_double(trial_ids[i]) << ','
            << format_double(participation_prob(sel.model, trial_sel.row(i))) << ','
            << format_double(sel.trial_weights[i]) << '\n';
  }

  // Cross-fitted CATE within the trial, grouped by tertile, per model.
  std::ostringstream gate;
  gate << "model,group,n,mean_cate_hat,effect,ci_low,ci_high\n";
  std::set<Model> done;
  for (const auto& [spec, fitted] : fits) {
    if (!done.insert(spec.model).second) continue;
    const Matrix x = select_columns(trial, fitted.feature_roles);
    const auto cate = predict_crossfit(x, a, y, fitted.trial_weights, spec.forest,
                                       cfg.crossfit_folds);
    const GateReport rep = gate_tertiles(cate, a, y);
    auto emit = [&](const GateGroup& g) {
      gate << to_string(spec.model) << ',' << g.group << ',' << g.n << ','
           << format_double(g.mean_cate_hat) << ',' << format_double(g.effect) << ','
           << format_double(g.ci_low) << ',' << format_double(g.ci_high) << '\n';
    };
    for (const auto& g : rep.tertiles) emit(g);
    emit(rep.overall);
  }

  fs::create_directories(cfg.output_dir);
  for (const auto& [name, text] : {std::pair{"predictions.csv", predictions.str()},
                                   std::pair{"weights.csv", weights.str()},
                                   std::pair{"gate.csv", gate.str()}}) {
    write_atomically(cfg.output_dir / name, [&](const fs::path& p) {
      auto out = open_out(p);
      out << text;
      if (!out) throw DataError("write failed for '" + p.string() + "'");
    });
  }
  std::printf("trial rows: %zu, source rows: %zu, specs: %zu\n", trial.n_rows(), source.n_rows(),
              cfg.specs.size());
  if (sel.model.ridge_fallback) std::printf("participation model refit with ridge\n");
  return 0;
}

int cmd_plot(const Options& opt) {
  RunConfig cfg = resolve_config(opt);
  fs::path metrics = opt.metrics_csv.empty() ? cfg.output_dir / "metrics.csv" : fs::path(opt.metrics_csv);
  const auto records = read_metrics_csv(metrics);
  const auto written = plot_metrics(records, cfg.output_dir);
  for (const auto& p : written) std::printf("%s\n", p.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalizable CATE estimation with causal forests"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "Output directory");
    sub->add_option("--parallelism", opt.parallelism, "Worker threads");
    sub->add_option("--seed", opt.seed, "Master seed override");
  };
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic source population and trial");
  auto* replicate = app.add_subcommand("replicate", "Run the replicated simulation grid");
  auto* apply = app.add_subcommand("apply", "Fit estimators on a trial and predict on a source");
  auto* plot = app.add_subcommand("plot", "Render SVG charts from a metrics CSV");
  for (auto* sub : {simulate, replicate, apply, plot}) add_common(sub);
  apply->add_option("--trial", opt.trial_csv, "Trial CSV")->check(CLI::ExistingFile);
  apply->add_option("--source", opt.source_csv, "Source population CSV")->check(CLI::ExistingFile);
  plot->add_option("--metrics", opt.metrics_csv, "Metrics CSV")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageError;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(opt);
    if (replicate->parsed()) return cmd_replicate(opt);
    if (apply->parsed()) return cmd_apply(opt);
    if (plot->parsed()) return cmd_plot(opt);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kUsageError;
}
