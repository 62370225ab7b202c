#pragma once

#include "glmar/lattice.hpp"
#include "glmar/model.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace glmar {

/// A dataset together with the mask that orders its voxel columns.
struct Bundle {
  Dataset data;
  Mask mask;
};

struct Design {
  std::vector<std::string> names;
  Eigen::MatrixXd X;
};

/// CSV with a header row of regressor names and one row per time point.
Design read_design_csv(const std::filesystem::path& path);
void write_design_csv(const std::filesystem::path& path, const Design& design);

/// Bundle directory: design.csv, series.f64 (row-major little-endian T x N)
/// or series.csv, mask.txt and meta.txt (key=value lines with T, N, K, P).
/// Every parse error names the file and, for text files, the line.
Bundle read_bundle(const std::filesystem::path& dir);
void write_bundle(const std::filesystem::path& dir, const Dataset& data, const Mask& mask,
                  bool binary_series = true);

/// key=value file; blank lines and lines starting with '#' are skipped.
std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& path);

/// Per-voxel truth table with columns voxel,parameter,value where parameter
/// is w<k>, a<p> (1-based) or lambda.
struct Truth {
  Eigen::MatrixXd W;  // K x N
  Eigen::MatrixXd A;  // P x N
  Eigen::VectorXd lambda;
};
void write_truth_csv(const std::filesystem::path& path, const Truth& truth);
Truth read_truth_csv(const std::filesystem::path& path);

}  // namespace glmar
