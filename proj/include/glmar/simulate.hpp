#pragma once

#include "glmar/lattice.hpp"
#include "glmar/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace glmar {

/// Noise precision per voxel: a fixed value (infinity means noiseless) or
/// i.i.d. Gamma(shape, scale) draws.
struct LambdaSpec {
  bool fixed = true;
  double value = 1.0;
  double shape = 10.0;
  double scale = 10.0;
};

struct SimScenario {
  std::string name;
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
  LambdaSpec lambda;
  int K = 0;
  int P = 0;
  std::filesystem::path design_path;
  std::filesystem::path mask_path;
  int J = 1;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument.
  void validate() const;
};

enum class SimScale { Desk, Full };

SimScale parse_scale(const std::string& s);

/// key=value scenario file: name, K, P, alpha and beta (comma lists),
/// lambda ("fixed <v>" or "gamma <shape> <scale>"), design, mask (paths
/// relative to the file), J, seed. Throws DataError naming the file.
SimScenario read_scenario(const std::filesystem::path& path);
/// Writes absolute paths so the file can be read from anywhere.
void write_scenario(const std::filesystem::path& path, const SimScenario& scenario);

/// The three simulation studies. Desk scale uses the full 20 x 20 grid and
/// J = 20; full scale the 2087-voxel brain mask and J = 100.
std::vector<SimScenario> preset_scenarios(SimScale scale = SimScale::Desk);
/// "study1", "study2" or "study3".
SimScenario preset(const std::string& name, SimScale scale = SimScale::Desk);

struct GroundTruth {
  Eigen::MatrixXd W;  // K x N
  Eigen::MatrixXd A;  // P x N
  Eigen::VectorXd lambda;
  /// Base of the per-replicate noise streams.
  std::uint64_t noise_seed = 0;
};

/// Rows of W and A from their spatial priors via a sparse Cholesky solve
/// of S against white noise; lambda per the scenario. Deterministic in
/// scenario.seed.
GroundTruth draw_truth(const SimScenario& scenario, const SpatialKernel& kernel);

/// How the first P observations were initialised for each voxel.
enum class InitMode { Stationary, BurnIn };

struct Replicate {
  Dataset data;
  /// Voxels whose AR process was not stationary (burn-in initialisation).
  std::vector<int> explosive_voxels;
};

/// y_t = Xfull[t] w_n + e_t with e_t = sum_p a_p e_{t-p} + z_t,
/// z_t ~ N(0, 1/lambda_n). The first P errors come from the stationary
/// AR marginal when it exists, otherwise from a zero start with a 10 P
/// step burn-in. Replicate `rep` has its own stream.
Replicate generate_replicate(const GroundTruth& truth, const Eigen::MatrixXd& Xfull,
                             const std::vector<std::string>& regressor_names, int P, int rep);

/// Stationary covariance of (e_t, ..., e_{t-P+1}) for AR coefficients a
/// and innovation variance sigma2; empty if the process is not stationary.
Eigen::MatrixXd ar_stationary_covariance(const Eigen::VectorXd& a, double sigma2);

}  // namespace glmar
