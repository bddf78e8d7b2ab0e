#include "ips/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "ips/error.hpp"

namespace ips {

namespace {

bool is_binary(const VectorXd& v) {
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0 && v[i] != 1.0) return false;
  }
  return true;
}

void require_finite(const VectorXd& v, const char* column) {
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw ValidationError(std::string("non-finite value in column '") + column + "' at row " +
                            std::to_string(i + 1));
    }
  }
}

void require_both_arms(const VectorXd& v, const char* column) {
  const double ones = v.sum();
  if (ones < 1.0 || ones > static_cast<double>(v.size()) - 1.0) {
    throw ValidationError(std::string("column '") + column +
                          "' must contain both 0 and 1 (an arm is empty)");
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

double parse_real(std::string_view cell, std::size_t row, const std::string& column) {
  double value = 0.0;
  // from_chars rejects a leading '+', which some writers emit.
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
    throw ParseError("cannot parse '" + std::string(cell) + "' as a number at row " +
                     std::to_string(row) + ", column '" + column + "'");
  }
  if (!std::isfinite(value)) {
    throw ValidationError("non-finite value at row " + std::to_string(row) + ", column '" +
                          column + "'");
  }
  return value;
}

double parse_binary(std::string_view cell, std::size_t row, const std::string& column) {
  if (cell == "0") return 0.0;
  if (cell == "1") return 1.0;
  throw ValidationError("column '" + column + "' must be 0 or 1; found '" + std::string(cell) +
                        "' at row " + std::to_string(row));
}

}  // namespace

const VectorXd& Dataset::outcome() const {
  if (!y) throw SchemaError("dataset has no outcome column");
  return *y;
}

const VectorXd& Dataset::instrument() const {
  if (!z) throw SchemaError("dataset has no instrument column");
  return *z;
}

void validate(const Dataset& ds) {
  const Index n = ds.d.size();
  if (n < 2) throw ValidationError("dataset needs at least two rows");
  if (ds.x.cols() < 1) throw ValidationError("dataset needs at least one covariate");
  if (ds.x.rows() != n) throw ValidationError("covariate table has the wrong number of rows");
  if (ds.y && ds.y->size() != n) throw ValidationError("outcome has the wrong length");
  if (ds.z && ds.z->size() != n) throw ValidationError("instrument has the wrong length");
  if (!ds.names.empty() && static_cast<Index>(ds.names.size()) != ds.x.cols()) {
    throw ValidationError("covariate names do not match the covariate count");
  }
  require_finite(ds.d, "d");
  if (!is_binary(ds.d)) throw ValidationError("treatment must be 0 or 1");
  require_both_arms(ds.d, "d");
  if (ds.z) {
    require_finite(*ds.z, "z");
    if (!is_binary(*ds.z)) throw ValidationError("instrument must be 0 or 1");
    require_both_arms(*ds.z, "z");
  }
  if (ds.y) require_finite(*ds.y, "y");
  for (Index j = 0; j < ds.x.cols(); ++j) {
    for (Index i = 0; i < n; ++i) {
      if (!std::isfinite(ds.x(i, j))) {
        throw ValidationError("non-finite covariate at row " + std::to_string(i + 1) +
                              ", column " + std::to_string(j + 1));
      }
    }
  }
}

Dataset make_dataset(std::optional<VectorXd> y, VectorXd d, std::optional<VectorXd> z,
                     MatrixXd x, std::vector<std::string> names) {
  if (names.empty()) {
    for (Index j = 0; j < x.cols(); ++j) names.push_back("x" + std::to_string(j + 1));
  }
  Dataset ds{std::move(y), std::move(d), std::move(z), std::move(x), std::move(names)};
  validate(ds);
  return ds;
}

Dataset take_rows(const Dataset& ds, const std::vector<Index>& rows) {
  const Index m = static_cast<Index>(rows.size());
  std::optional<VectorXd> y;
  std::optional<VectorXd> z;
  VectorXd d(m);
  MatrixXd x(m, ds.x.cols());
  if (ds.y) y = VectorXd(m);
  if (ds.z) z = VectorXd(m);
  for (Index i = 0; i < m; ++i) {
    const Index r = rows[static_cast<std::size_t>(i)];
    d[i] = ds.d[r];
    x.row(i) = ds.x.row(r);
    if (y) (*y)[i] = (*ds.y)[r];
    if (z) (*z)[i] = (*ds.z)[r];
  }
  return make_dataset(std::move(y), std::move(d), std::move(z), std::move(x), ds.names);
}

namespace {

std::vector<std::string> read_header(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path.string() + "' is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
    line.erase(0, 3);
  }
  std::vector<std::string> header;
  for (auto cell : split(line)) header.emplace_back(cell);
  return header;
}

}  // namespace

std::vector<std::string> read_csv_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return read_header(in, path);
}

Dataset load_csv(const std::filesystem::path& path, const ColumnRoles& roles) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  if (roles.treatment.empty()) throw SchemaError("no treatment column given");
  if (roles.covariates.empty()) throw SchemaError("at least one covariate column is required");

  const std::vector<std::string> header = read_header(in, path);
  std::string line;
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t j = 0; j < header.size(); ++j) position.emplace(header[j], j);

  auto locate = [&](const std::string& name) {
    const auto it = position.find(name);
    if (it == position.end()) throw SchemaError("missing column '" + name + "'");
    return it->second;
  };
  const auto treatment_col = locate(roles.treatment);
  std::optional<std::size_t> outcome_col;
  std::optional<std::size_t> instrument_col;
  if (roles.outcome) outcome_col = locate(*roles.outcome);
  if (roles.instrument) instrument_col = locate(*roles.instrument);
  std::vector<std::size_t> covariate_cols;
  for (const auto& name : roles.covariates) covariate_cols.push_back(locate(name));

  std::vector<double> y, d, z, x;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " fields, header has " + std::to_string(header.size()));
    }
    d.push_back(parse_binary(cells[treatment_col], row, roles.treatment));
    if (outcome_col) y.push_back(parse_real(cells[*outcome_col], row, *roles.outcome));
    if (instrument_col) z.push_back(parse_binary(cells[*instrument_col], row, *roles.instrument));
    for (std::size_t j = 0; j < covariate_cols.size(); ++j) {
      x.push_back(parse_real(cells[covariate_cols[j]], row, roles.covariates[j]));
    }
  }

  const auto n = static_cast<Index>(d.size());
  const auto k = static_cast<Index>(covariate_cols.size());
  auto to_vector = [](const std::vector<double>& v) {
    return VectorXd(Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size())));
  };
  MatrixXd xm = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      x.data(), n, k);
  std::optional<VectorXd> yv;
  std::optional<VectorXd> zv;
  if (outcome_col) yv = to_vector(y);
  if (instrument_col) zv = to_vector(z);
  return make_dataset(std::move(yv), to_vector(d), std::move(zv), std::move(xm), roles.covariates);
}

ColumnRoles default_roles(const Dataset& ds) {
  ColumnRoles roles;
  if (ds.y) roles.outcome = "y";
  roles.treatment = "d";
  if (ds.z) roles.instrument = "z";
  roles.covariates = ds.names;
  return roles;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  const auto roles = default_roles(ds);
  std::vector<std::string> header;
  if (roles.outcome) header.push_back(*roles.outcome);
  header.push_back(roles.treatment);
  if (roles.instrument) header.push_back(*roles.instrument);
  for (const auto& name : roles.covariates) header.push_back(name);
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';

  char buf[64];
  auto put = [&](double v) {
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    out.write(buf, ptr - buf);
  };
  for (Index i = 0; i < ds.size(); ++i) {
    if (ds.y) {
      put((*ds.y)[i]);
      out << ',';
    }
    out << (ds.d[i] != 0.0 ? '1' : '0');
    if (ds.z) out << ',' << ((*ds.z)[i] != 0.0 ? '1' : '0');
    for (Index j = 0; j < ds.x.cols(); ++j) {
      out << ',';
      put(ds.x(i, j));
    }
    out << '\n';
  }
  if (!out) throw ParseError("write to '" + path.string() + "' failed");
}

void validate(const DesignSpec& spec, Index k) {
  if (!spec.covariate_subset) return;
  const auto& subset = *spec.covariate_subset;
  if (subset.empty()) throw ValidationError("empty covariate selection");
  std::set<Index> seen;
  for (const Index j : subset) {
    if (j < 0 || j >= k) {
      throw ValidationError("covariate index " + std::to_string(j) + " out of range [0, " +
                            std::to_string(k) + ")");
    }
    if (!seen.insert(j).second) {
      throw ValidationError("covariate index " + std::to_string(j) + " selected twice");
    }
  }
}

MatrixXd covariate_matrix(const Dataset& ds, const DesignSpec& spec) {
  validate(spec, ds.covariates());
  if (!spec.covariate_subset) return ds.x;
  const auto& subset = *spec.covariate_subset;
  MatrixXd out(ds.size(), static_cast<Index>(subset.size()));
  for (std::size_t j = 0; j < subset.size(); ++j) out.col(static_cast<Index>(j)) = ds.x.col(subset[j]);
  return out;
}

MatrixXd design_matrix(const Dataset& ds, const DesignSpec& spec) {
  MatrixXd cov = covariate_matrix(ds, spec);
  if (!spec.include_intercept) return cov;
  MatrixXd out(cov.rows(), cov.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(cov.cols()) = cov;
  return out;
}

std::vector<std::string> design_names(const Dataset& ds, const DesignSpec& spec) {
  validate(spec, ds.covariates());
  std::vector<std::string> out;
  if (spec.include_intercept) out.emplace_back("(intercept)");
  auto name_of = [&](Index j) {
    return j < static_cast<Index>(ds.names.size()) ? ds.names[static_cast<std::size_t>(j)]
                                                   : "x" + std::to_string(j + 1);
  };
  if (spec.covariate_subset) {
    for (const Index j : *spec.covariate_subset) out.push_back(name_of(j));
  } else {
    for (Index j = 0; j < ds.covariates(); ++j) out.push_back(name_of(j));
  }
  return out;
}

}  // namespace ips
