#include "cate/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cate {

namespace {

using nlohmann::json;

// Typed reader over one JSON object that rejects keys it was not asked about.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  void read(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(where(key) + ": expected a non-negative integer");
    }
    out = v.get<std::size_t>();
  }
  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
    out = v.get<double>();
  }
  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
    out = v.get<bool>();
  }
  void read(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
    out = v.get<std::string>();
  }
  template <typename T>
  void read(const std::string& key, std::vector<T>& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(where(key) + ": expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto& e = v[i];
      const std::string at = where(key) + "[" + std::to_string(i) + "]";
      if constexpr (std::is_same_v<T, std::string>) {
        if (!e.is_string()) throw ConfigError(at + ": expected a string");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!e.is_number()) throw ConfigError(at + ": expected a number");
      } else {
        if (!e.is_number_integer() || e.get<long long>() < 0) {
          throw ConfigError(at + ": expected a non-negative integer");
        }
      }
      out.push_back(e.get<T>());
    }
  }

  std::optional<Section> child(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return Section(j_.at(key), where(key));
  }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  // Rejects any key that no read() asked about.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(where(key) + ": unknown key");
    }
  }

  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto wrap(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void read_dgp(Section s, DGPConfig& d) {
  s.read("n_source", d.n_source);
  s.read("dim_x1all", d.dim_x1all);
  s.read("dim_x2", d.dim_x2);
  s.read("dim_o", d.dim_o);
  s.read("dim_x1", d.dim_x1);
  s.read("coef_x1", d.coef_x1);
  s.read("coef_x2", d.coef_x2);
  s.read("coef_o", d.coef_o);
  s.read("selection_linear", d.selection_linear);
  s.read("selection_quadratic", d.selection_quadratic);
  s.read("treat_prob", d.treat_prob);
  s.read("noise_sd", d.noise_sd);
  s.finish();
  wrap(s.where(), [&] { d.validate(); });
}

void read_forest(Section s, ForestConfig& f) {
  s.read("num_trees", f.num_trees);
  s.read("subsample_fraction", f.subsample_fraction);
  s.read("honesty_fraction", f.honesty_fraction);
  s.read("mtry", f.mtry);
  s.read("min_leaf_treated", f.min_leaf_treated);
  s.read("min_leaf_control", f.min_leaf_control);
  s.read("max_depth", f.max_depth);
  s.read("num_threads", f.num_threads);
  s.finish();
  wrap(s.where(), [&] { f.validate(); });
}

void read_weights(Section s, WeightConfig& w) {
  s.read("normalize_mean_one", w.normalize_mean_one);
  if (s.has("trim_upper_quantile")) {
    double q = 0.0;
    s.read("trim_upper_quantile", q);
    w.trim_upper_quantile = q;
  }
  s.finish();
  wrap(s.where(), [&] { w.validate(); });
}

EstimatorSpec read_spec(Section s, const EstimatorSpec& defaults, bool& sampler_explicit) {
  EstimatorSpec spec = defaults;
  std::string model, aim, sampler, selection = "x2";
  s.read("model", model);
  s.read("aim", aim);
  if (model.empty() || aim.empty()) throw ConfigError(s.where() + ": model and aim are required");
  spec.model = wrap(s.where("model"), [&] { return model_from_string(model); });
  spec.aim = wrap(s.where("aim"), [&] { return aim_from_string(aim); });
  s.read("mc_draws", spec.mc_draws);
  s.read("knn_k", spec.knn_k);
  s.read("exhaustive", spec.exhaustive);
  sampler_explicit = s.has("sampler");
  s.read("sampler", sampler);
  if (sampler_explicit) {
    spec.sampler = wrap(s.where("sampler"), [&] { return sampler_from_string(sampler); });
  }
  s.read("selection_features", selection);
  if (selection == "x1x2") {
    spec.selection_on_x1_and_x2 = true;
  } else if (selection != "x2") {
    throw ConfigError(s.where("selection_features") + ": expected \"x2\" or \"x1x2\"");
  }
  if (auto f = s.child("forest")) read_forest(*f, spec.forest);
  if (auto w = s.child("weights")) read_weights(*w, spec.weights);
  s.finish();
  wrap(s.where(), [&] { spec.validate(); });
  return spec;
}

SchemaConfig read_schema(Section s, std::optional<std::string>& row_id) {
  SchemaConfig schema;
  std::vector<std::string> x1, x2, o;
  s.read("x1", x1);
  s.read("x2", x2);
  s.read("o", o);
  if (x1.empty()) throw ConfigError(s.where("x1") + ": at least one X1 column is required");
  schema.roles[Role::X1] = x1;
  if (!x2.empty()) schema.roles[Role::X2] = x2;
  if (!o.empty()) schema.roles[Role::O] = o;
  for (auto [key, role] : {std::pair{"treatment", Role::Treatment},
                           std::pair{"outcome", Role::Outcome},
                           std::pair{"selection", Role::Selection},
                           std::pair{"true_ite", Role::TrueIte},
                           std::pair{"weight", Role::Weight}}) {
    std::string name;
    s.read(key, name);
    if (!name.empty()) schema.roles[role] = {name};
  }
  if (s.has("row_id")) {
    std::string name;
    s.read("row_id", name);
    row_id = name;
  }
  std::string delim = ",";
  s.read("delimiter", delim);
  if (delim.size() != 1) throw ConfigError(s.where("delimiter") + ": expected one character");
  schema.delimiter = delim[0];
  s.finish();

  std::set<std::string> all;
  for (const auto& [role, cols] : schema.roles) {
    for (const auto& c : cols) {
      if (!all.insert(c).second) {
        throw ConfigError(s.where() + ": column '" + c + "' assigned to more than one role");
      }
    }
  }
  return schema;
}

std::filesystem::path existing_file(const std::filesystem::path& base, const std::string& name,
                                    const std::string& where) {
  std::filesystem::path p(name);
  if (p.is_relative()) p = base / p;
  if (!std::filesystem::is_regular_file(p)) {
    throw ConfigError(where + ": file '" + p.string() + "' does not exist");
  }
  return p;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  dgp.seed = s;
  grid.base.seed = s;
  grid.master_seed = s;
  for (auto& spec : specs) spec.forest.seed = s;
  for (auto& spec : grid.specs) spec.forest.seed = s;
}

void validate_grid(const GridConfig& grid) {
  try {
    grid.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }

  RunConfig cfg;
  Section s(root, "");
  std::string out_dir;
  s.read("output_dir", out_dir);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  s.read("parallelism", cfg.parallelism);
  if (cfg.parallelism < 1) throw ConfigError("parallelism: must be >= 1");
  std::size_t seed = cfg.seed;
  s.read("seed", seed);
  cfg.seed = seed;

  if (auto d = s.child("dgp")) read_dgp(*d, cfg.dgp);
  if (auto sim = s.child("simulate")) {
    sim->read("trial_size", cfg.simulate_trial_size);
    sim->finish();
  }

  ForestConfig forest;
  if (auto f = s.child("forest")) read_forest(*f, forest);
  WeightConfig weights;
  if (auto w = s.child("weights")) read_weights(*w, weights);

  EstimatorSpec defaults;
  defaults.forest = forest;
  defaults.weights = weights;
  if (s.has("estimators")) {
    const auto& arr = s.raw("estimators");
    if (!arr.is_array() || arr.empty()) throw ConfigError("estimators: expected a nonempty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      bool explicit_sampler = false;
      cfg.specs.push_back(
          read_spec(Section(arr[i], "estimators[" + std::to_string(i) + "]"), defaults,
                    explicit_sampler));
      cfg.sampler_explicit.push_back(explicit_sampler);
    }
  } else {
    cfg.specs = all_specs(forest);
    for (auto& spec : cfg.specs) spec.weights = weights;
    cfg.sampler_explicit.assign(cfg.specs.size(), false);
  }

  cfg.grid.base = cfg.dgp;
  const bool has_grid = s.has("grid");
  if (auto g = s.child("grid")) {
    g->read("trial_sizes", cfg.grid.trial_sizes);
    g->read("dim_x1_values", cfg.grid.dim_x1_values);
    g->read("coef_x2_values", cfg.grid.coef_x2_values);
    g->read("replicates", cfg.grid.replicates);
    g->finish();
  }
  cfg.grid.specs = cfg.specs;

  if (auto sc = s.child("schema")) cfg.schema = read_schema(*sc, cfg.row_id_column);

  if (auto a = s.child("apply")) {
    a->read("trial_in_source", cfg.trial_in_source);
    a->read("crossfit_folds", cfg.crossfit_folds);
    if (cfg.crossfit_folds < 2) throw ConfigError("apply.crossfit_folds: must be >= 2");
    std::string path;
    if (a->has("trial_csv")) {
      a->read("trial_csv", path);
      cfg.trial_csv = existing_file(base_dir, path, "apply.trial_csv");
    }
    if (a->has("source_csv")) {
      a->read("source_csv", path);
      cfg.source_csv = existing_file(base_dir, path, "apply.source_csv");
    }
    a->finish();
  }
  s.finish();

  cfg.set_seed(cfg.seed);
  // Default grid values may not fit a custom DGP; they are checked when used.
  if (has_grid) validate_grid(cfg.grid);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_run_config(buf.str(), base);
}

}  // namespace cate
