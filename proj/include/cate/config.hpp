#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cate/dataset.hpp"
#include "cate/dgp.hpp"
#include "cate/simulation.hpp"
#include "cate/transport.hpp"

namespace cate {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Settings for one CLI run, read from a JSON file. Unknown keys are errors.
struct RunConfig {
  std::filesystem::path output_dir = "out";
  std::size_t parallelism = 1;
  std::uint64_t seed = 1;

  DGPConfig dgp;
  std::size_t simulate_trial_size = 2000;
  GridConfig grid;  // base and specs mirror `dgp` and `specs`

  std::vector<EstimatorSpec> specs;
  std::vector<bool> sampler_explicit;  // per spec: sampler given in the file

  std::optional<SchemaConfig> schema;
  std::optional<std::string> row_id_column;
  bool trial_in_source = true;
  std::size_t crossfit_folds = 5;
  std::optional<std::filesystem::path> trial_csv;
  std::optional<std::filesystem::path> source_csv;

  // Applies a new master seed to every seeded component.
  void set_seed(std::uint64_t s);
};

// `base_dir` resolves relative file references.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& path);
// Rethrows grid validation failures as ConfigError.
void validate_grid(const GridConfig& grid);

}  // namespace cate
