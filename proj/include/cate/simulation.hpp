#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cate/dgp.hpp"
#include "cate/metrics.hpp"
#include "cate/transport.hpp"

namespace cate {

struct MetricsRecord {
  std::string scenario;
  Model model = Model::M1;
  Aim aim = Aim::A;
  std::size_t trial_size = 0;
  std::size_t dim_x1 = 0;
  double coef_x2 = 0.0;
  std::size_t replicate = 0;
  double mse = 0.0;
  double bias = 0.0;
  double variance = 0.0;
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
};

struct AggregateRecord {
  std::string scenario;
  Model model = Model::M1;
  Aim aim = Aim::A;
  std::size_t trial_size = 0;
  std::size_t dim_x1 = 0;
  double coef_x2 = 0.0;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  double mse_mean = 0.0, mse_se = 0.0;
  double bias_mean = 0.0, bias_se = 0.0;
  double abs_bias_mean = 0.0, abs_bias_se = 0.0;
  double bias_sq_mean = 0.0, bias_sq_se = 0.0;
  double variance_mean = 0.0, variance_se = 0.0;
};

struct GridConfig {
  DGPConfig base;
  std::vector<std::size_t> trial_sizes{200, 500, 2000, 5000};
  std::vector<std::size_t> dim_x1_values{2, 3, 5, 10};
  std::vector<double> coef_x2_values{0.5, 0.0};
  std::size_t replicates = 50;
  std::vector<EstimatorSpec> specs;
  std::uint64_t master_seed = 1;

  void validate() const;
};

struct MetricsTable {
  std::vector<MetricsRecord> records;
  std::vector<AggregateRecord> aggregates;
};

struct CellProgress {
  std::size_t cells_done = 0;
  std::size_t cells_total = 0;
  double coef_x2 = 0.0;
  std::size_t trial_size = 0;
  std::size_t dim_x1 = 0;
  std::size_t failed_replicates = 0;
};
using ProgressFn = std::function<void(const CellProgress&)>;

std::string scenario_id(double coef_x2);

// The eight (model, aim) combinations with the given forest settings.
std::vector<EstimatorSpec> all_specs(const ForestConfig& forest = {});

// One replicate: fresh source and trial from `replicate_seed`, every spec fit
// on that trial and scored over the whole source population.
std::vector<MetricsRecord> run_cell(const DGPConfig& dgp, std::size_t trial_size,
                                    std::size_t dim_x1, std::span<const EstimatorSpec> specs,
                                    std::uint64_t replicate_seed, std::size_t replicate = 0);

std::uint64_t replicate_seed(std::uint64_t master_seed, double coef_x2, std::size_t trial_size,
                             std::size_t dim_x1, std::size_t replicate);

MetricsTable run_grid(const GridConfig& grid, std::size_t parallelism,
                      const ProgressFn& progress = {});

std::vector<AggregateRecord> aggregate(std::span<const MetricsRecord> records);

void write_metrics_csv(std::span<const MetricsRecord> records, const std::filesystem::path& path);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);
void write_aggregate_csv(std::span<const AggregateRecord> rows, const std::filesystem::path& path);
std::vector<AggregateRecord> read_aggregate_csv(const std::filesystem::path& path);

}  // namespace cate
