#pragma once

#include "glmar/model.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <string>

namespace glmar {

/// Per-coordinate posterior moments in the stacked parameter layout,
/// produced identically by every backend.
///
/// `variance` and `bmse` hold NaN where a backend has nothing to report
/// (OLS has no variances, VB has no Monte Carlo error).
struct PosteriorSummary {
  std::string method;
  Layout layout;
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::VectorXd bmse;

  bool has_variance() const;

  ParamState mean_state() const { return ParamState::unflatten(layout, {mean.data(), static_cast<std::size_t>(mean.size())}); }
  /// Row k of W (Block::W) or row p of A (Block::A) as an N-vector.
  Eigen::VectorXd mean_row(Block block, int row) const;
  Eigen::VectorXd variance_row(Block block, int row) const;

  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Parses the CSV written by write_csv. Throws DataError with file and line.
PosteriorSummary read_summary(std::istream& in, const std::string& source_name = "<stream>");
PosteriorSummary read_summary(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double ("nan" and "inf" spelled out).
std::string format_double(double v);

}  // namespace glmar
