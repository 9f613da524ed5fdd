#include "cate/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace cate {

namespace {

constexpr std::array<std::pair<Role, std::string_view>, 8> kRoleNames{{
    {Role::X1, "x1"},
    {Role::X2, "x2"},
    {Role::O, "o"},
    {Role::Treatment, "treatment"},
    {Role::Outcome, "outcome"},
    {Role::Selection, "selection"},
    {Role::TrueIte, "true_ite"},
    {Role::Weight, "weight"},
}};

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

std::string_view to_string(Role role) {
  for (const auto& [r, name] : kRoleNames) {
    if (r == role) return name;
  }
  return "unknown";
}

Role role_from_string(std::string_view name) {
  for (const auto& [r, n] : kRoleNames) {
    if (n == name) return r;
  }
  throw std::invalid_argument("unknown role '" + std::string(name) + "'");
}

bool is_single_column_role(Role role) {
  return role != Role::X1 && role != Role::X2 && role != Role::O;
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf.data(), ptr);
}

Dataset::Dataset(std::vector<std::string> names, std::vector<std::vector<double>> columns,
                 RoleMap roles)
    : names_(std::move(names)), columns_(std::move(columns)), roles_(std::move(roles)) {
  if (names_.size() != columns_.size()) {
    throw DataError("dataset: " + std::to_string(names_.size()) + " names for " +
                    std::to_string(columns_.size()) + " columns");
  }
  n_rows_ = columns_.empty() ? 0 : columns_.front().size();
  // Drop empty role entries so that equality and has_role agree.
  for (auto it = roles_.begin(); it != roles_.end();) {
    it = it->second.empty() ? roles_.erase(it) : std::next(it);
  }
  validate();
}

void Dataset::validate() const {
  std::set<std::string_view> seen;
  for (std::size_t c = 0; c < names_.size(); ++c) {
    if (!seen.insert(names_[c]).second) throw DataError("duplicate column '" + names_[c] + "'");
    if (columns_[c].size() != n_rows_) {
      throw DataError("column '" + names_[c] + "' has " + std::to_string(columns_[c].size()) +
                      " rows, expected " + std::to_string(n_rows_));
    }
    for (std::size_t r = 0; r < n_rows_; ++r) {
      if (!std::isfinite(columns_[c][r])) {
        throw DataError("non-finite value in column '" + names_[c] + "' row " +
                        std::to_string(r + 1));
      }
    }
  }

  std::set<std::string_view> claimed;
  for (const auto& [role, cols] : roles_) {
    if (is_single_column_role(role) && cols.size() > 1) {
      throw DataError("role " + std::string(to_string(role)) + " maps to more than one column");
    }
    for (const auto& name : cols) {
      if (!seen.contains(name)) {
        throw DataError("missing column '" + name + "' for role " + std::string(to_string(role)));
      }
      if (!claimed.insert(name).second) {
        throw DataError("column '" + name + "' assigned to more than one role");
      }
    }
  }

  auto check_binary = [&](Role role, const char* label) {
    if (!has_role(role)) return;
    const auto& col = role_column(role);
    for (std::size_t r = 0; r < col.size(); ++r) {
      if (col[r] != 0.0 && col[r] != 1.0) {
        throw DataError(std::string(label) + " not binary at row " + std::to_string(r + 1));
      }
    }
  };
  check_binary(Role::Treatment, "treatment");
  check_binary(Role::Selection, "selection");

  if (has_role(Role::Weight)) {
    const auto& col = role_column(Role::Weight);
    for (std::size_t r = 0; r < col.size(); ++r) {
      if (!(col[r] > 0.0)) throw DataError("nonpositive weight at row " + std::to_string(r + 1));
    }
  }
}

bool Dataset::has_column(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const std::vector<double>& Dataset::column(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw DataError("missing column '" + std::string(name) + "'");
  return columns_[static_cast<std::size_t>(it - names_.begin())];
}

bool Dataset::has_role(Role role) const { return roles_.contains(role); }

const std::vector<std::string>& Dataset::role_columns(Role role) const {
  auto it = roles_.find(role);
  if (it == roles_.end()) {
    throw DataError("role " + std::string(to_string(role)) + " not populated");
  }
  return it->second;
}

const std::vector<double>& Dataset::role_column(Role role) const {
  return column(role_columns(role).front());
}

Dataset Dataset::with_column(std::string name, std::vector<double> values,
                             std::optional<Role> role) const {
  auto names = names_;
  auto columns = columns_;
  auto roles = roles_;
  auto it = std::find(names.begin(), names.end(), name);
  if (it != names.end()) {
    columns[static_cast<std::size_t>(it - names.begin())] = std::move(values);
    // A replaced column keeps its role unless a new one is given.
    if (role) {
      for (auto& [r, cols] : roles) std::erase(cols, name);
    }
  } else {
    names.push_back(name);
    columns.push_back(std::move(values));
  }
  if (role) {
    auto& cols = roles[*role];
    if (is_single_column_role(*role)) cols.clear();
    cols.push_back(name);
  }
  return Dataset(std::move(names), std::move(columns), std::move(roles));
}

Dataset Dataset::with_roles(RoleMap roles) const {
  return Dataset(names_, columns_, std::move(roles));
}

Dataset Dataset::take_rows(std::span<const std::size_t> rows) const {
  std::vector<std::vector<double>> cols(columns_.size());
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    cols[c].reserve(rows.size());
    for (auto r : rows) cols[c].push_back(columns_[c].at(r));
  }
  Dataset out(names_, std::move(cols), roles_);
  if (columns_.empty()) out.n_rows_ = rows.size();
  return out;
}

Dataset load_dataset(const std::filesystem::path& path, const SchemaConfig& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  if (!schema.header) throw DataError("CSV input requires a header row");

  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "': missing header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM

  std::vector<std::string> names;
  for (auto field : split(line, schema.delimiter)) names.emplace_back(trim(field));

  for (const auto& [role, cols] : schema.roles) {
    for (const auto& name : cols) {
      if (std::find(names.begin(), names.end(), name) == names.end()) {
        throw DataError("'" + path.string() + "': missing column '" + name + "' for role " +
                        std::string(to_string(role)));
      }
    }
  }

  std::vector<std::vector<double>> columns(names.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split(line, schema.delimiter);
    if (fields.size() != names.size()) {
      throw DataError("'" + path.string() + "' line " + std::to_string(line_no) + ": expected " +
                      std::to_string(names.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      double v = 0.0;
      if (!parse_double(fields[c], v) || !std::isfinite(v)) {
        throw DataError("'" + path.string() + "' line " + std::to_string(line_no) +
                        ": non-numeric cell in column '" + names[c] + "'");
      }
      columns[c].push_back(v);
    }
  }
  return Dataset(std::move(names), std::move(columns), schema.roles);
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  const auto& names = dataset.names();
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (c) out << ',';
    out << names[c];
  }
  out << '\n';
  std::string row;
  for (std::size_t r = 0; r < dataset.n_rows(); ++r) {
    row.clear();
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (c) row += ',';
      row += format_double(dataset.column(c)[r]);
    }
    row += '\n';
    out << row;
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<std::string> selected_names(const Dataset& dataset, std::span<const Role> roles) {
  std::vector<std::string> out;
  for (Role role : {Role::X1, Role::X2, Role::O}) {
    if (std::find(roles.begin(), roles.end(), role) == roles.end()) continue;
    const auto& cols = dataset.role_columns(role);
    out.insert(out.end(), cols.begin(), cols.end());
  }
  for (Role role : roles) {
    if (is_single_column_role(role)) {
      throw DataError("select_columns: role " + std::string(to_string(role)) +
                      " is not a feature role");
    }
  }
  return out;
}

Matrix select_columns(const Dataset& dataset, std::span<const Role> roles) {
  auto names = selected_names(dataset, roles);
  Matrix m(dataset.n_rows(), names.size());
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto& col = dataset.column(names[c]);
    for (std::size_t r = 0; r < dataset.n_rows(); ++r) m(r, c) = col[r];
  }
  return m;
}

Matrix select_columns(const Dataset& dataset, std::initializer_list<Role> roles) {
  return select_columns(dataset, std::span<const Role>(roles.begin(), roles.size()));
}

}  // namespace cate
