#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cate/matrix.hpp"

namespace cate {

// Raised for malformed or inconsistent data (bad CSV cells, role violations).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Role { X1, X2, O, Treatment, Outcome, Selection, TrueIte, Weight };

std::string_view to_string(Role role);
Role role_from_string(std::string_view name);

// Roles that map to at most one column.
bool is_single_column_role(Role role);

using RoleMap = std::map<Role, std::vector<std::string>>;

struct SchemaConfig {
  RoleMap roles;
  char delimiter = ',';
  bool header = true;
};

// Immutable rectangular table of real-valued columns with role tags.
//
// Invariants (checked on construction):
//  - every column has n_rows entries and a unique name;
//  - role column sets are pairwise disjoint and name existing columns;
//  - treatment/outcome/selection/true_ite/weight map to at most one column;
//  - treatment and selection columns hold only 0 and 1;
//  - a weight column is strictly positive and finite;
//  - every cell is finite.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::string> names, std::vector<std::vector<double>> columns,
          RoleMap roles = {});

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_cols() const { return names_.size(); }

  const std::vector<std::string>& names() const { return names_; }
  const RoleMap& roles() const { return roles_; }

  bool has_column(std::string_view name) const;
  const std::vector<double>& column(std::string_view name) const;
  const std::vector<double>& column(std::size_t index) const { return columns_.at(index); }

  bool has_role(Role role) const;
  const std::vector<std::string>& role_columns(Role role) const;
  // The single column of a single-column role.
  const std::vector<double>& role_column(Role role) const;

  // Copy with an extra column (replacing a same-named one) and optional role.
  Dataset with_column(std::string name, std::vector<double> values,
                      std::optional<Role> role = std::nullopt) const;
  // Copy with the role map replaced.
  Dataset with_roles(RoleMap roles) const;
  // Copy restricted to the listed rows, in order.
  Dataset take_rows(std::span<const std::size_t> rows) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  void validate() const;

  std::size_t n_rows_ = 0;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> columns_;
  RoleMap roles_;
};

Dataset load_dataset(const std::filesystem::path& path, const SchemaConfig& schema);
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Feature matrix for the requested roles. Column order is fixed regardless of
// the order of `roles`: X1 columns (schema order), then X2, then O.
Matrix select_columns(const Dataset& dataset, std::initializer_list<Role> roles);
Matrix select_columns(const Dataset& dataset, std::span<const Role> roles);
std::vector<std::string> selected_names(const Dataset& dataset, std::span<const Role> roles);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace cate
