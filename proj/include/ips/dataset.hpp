#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ips {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Observed sample: outcome, binary treatment, optional binary instrument and
/// an n x k covariate table. Treated as immutable once built by make_dataset
/// or load_csv, both of which validate.
struct Dataset {
  std::optional<VectorXd> y;
  VectorXd d;
  std::optional<VectorXd> z;
  MatrixXd x;
  std::vector<std::string> names;

  Index size() const { return d.size(); }
  Index covariates() const { return x.cols(); }
  bool has_outcome() const { return y.has_value(); }
  bool has_instrument() const { return z.has_value(); }
  const VectorXd& outcome() const;
  const VectorXd& instrument() const;
};

/// Validates and assembles a Dataset. Throws ValidationError when any column
/// is non-finite, d or z is not 0/1, a treatment or instrument arm is empty,
/// or the shapes disagree.
Dataset make_dataset(std::optional<VectorXd> y, VectorXd d, std::optional<VectorXd> z,
                     MatrixXd x, std::vector<std::string> names = {});

void validate(const Dataset& ds);

/// Row subset (with repetition) of a dataset, as used by the bootstrap.
Dataset take_rows(const Dataset& ds, const std::vector<Index>& rows);

struct ColumnRoles {
  std::optional<std::string> outcome;
  std::string treatment;
  std::optional<std::string> instrument;
  std::vector<std::string> covariates;
};

Dataset load_csv(const std::filesystem::path& path, const ColumnRoles& roles);

/// Column names from the first line of a CSV file.
std::vector<std::string> read_csv_header(const std::filesystem::path& path);

/// Writes columns y (if present), d, z (if present), then covariates by name,
/// with 17 significant digits so that load_csv reproduces every double.
void write_csv(const Dataset& ds, const std::filesystem::path& path);

/// Roles matching the header write_csv produces for this dataset.
ColumnRoles default_roles(const Dataset& ds);

struct DesignSpec {
  bool include_intercept = true;
  /// Zero-based covariate indices in the order they should appear.
  std::optional<std::vector<Index>> covariate_subset;
};

void validate(const DesignSpec& spec, Index k);

/// Selected covariates (no intercept), as consumed by the balance kernels.
MatrixXd covariate_matrix(const Dataset& ds, const DesignSpec& spec);

/// Propensity-model design: a leading column of ones when include_intercept,
/// then the selected covariates.
MatrixXd design_matrix(const Dataset& ds, const DesignSpec& spec);

std::vector<std::string> design_names(const Dataset& ds, const DesignSpec& spec);

}  // namespace ips
