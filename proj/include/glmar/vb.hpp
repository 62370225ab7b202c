#pragma once

#include "glmar/model.hpp"
#include "glmar/summary.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace glmar {

/// Gamma factor in shape/rate form, or a point mass when `point` is set.
struct GammaFactor {
  double shape = 1.0;
  double rate = 1.0;
  bool point = false;
  double value = 0.0;

  static GammaFactor point_mass(double v) { return {1.0, 1.0, true, v}; }

  double mean() const { return point ? value : shape / rate; }
  double variance() const { return point ? 0.0 : shape / (rate * rate); }
  double mean_log() const;
  double entropy() const;
};

/// Mean-field posterior: one Gaussian per voxel for w_n and for a_n, one
/// Gamma per alpha_k, beta_p and lambda_n.
struct VBPosterior {
  Layout layout;
  Eigen::MatrixXd W_mean;  // K x N
  std::vector<Eigen::MatrixXd> W_cov;
  Eigen::MatrixXd A_mean;  // P x N
  std::vector<Eigen::MatrixXd> A_cov;
  std::vector<GammaFactor> alpha;
  std::vector<GammaFactor> beta;
  std::vector<GammaFactor> lambda;
  std::vector<double> free_energy_trace;

  /// Covariances symmetric positive definite (or zero for frozen blocks),
  /// Gamma parameters finite and positive.
  bool valid() const;
};

struct VBConfig {
  int max_iter = 200;
  double tol = 1e-6;
  /// Update w_n / a_n in colour classes of the S^T S graph, each class
  /// in parallel over `workers` threads.
  bool colored = false;
  int workers = 1;
  unsigned long long seed = 0;

  void validate() const;
};

struct VBFactor {
  Block block;
  /// Voxel for W, A and Lambda; row for Alpha and Beta.
  int index;
};

/// Everything an update needs besides q itself.
struct VBModel {
  const SuffStats& stats;
  const SpatialKernel& kernel;
  HyperPriors hp;
  FrozenBlocks frozen;
};

/// Moments of q with frozen blocks as point masses at `init`.
VBPosterior vb_initialize(const VBModel& model, const ParamState& init);

/// Replaces one factor by its optimal conjugate update. Throws
/// NumericalError if an update precision is not positive definite.
void vb_update_factor(VBPosterior& q, const VBFactor& factor, const VBModel& model);

/// One full sweep: all w_n, all a_n, all alpha_k, all beta_p, all lambda_n.
void vb_sweep(VBPosterior& q, const VBModel& model, const VBConfig& cfg = {});

/// E_q[log p(Y, theta | X)] + H[q], dropping the same constant as
/// log_posterior. Point-mass factors contribute no entropy.
double free_energy(const VBPosterior& q, const VBModel& model);

/// E_q[log p(Y, theta | X)] alone.
double expected_log_joint(const VBPosterior& q, const VBModel& model);

PosteriorSummary vb_summary(const VBPosterior& q);

struct VBFit {
  VBPosterior q;
  PosteriorSummary summary;
  int iterations = 0;
  double final_rel_change = 0.0;
  bool converged = false;
  std::vector<std::string> warnings;
  double seconds_precompute = 0.0;
  double seconds_ascent = 0.0;
};

/// Coordinate ascent from ols_init (or `init`) until the relative change in
/// free energy over a sweep drops below tol.
VBFit run_vb(const Dataset& data, const SpatialKernel& kernel, const HyperPriors& hp,
             const VBConfig& cfg = {}, const FrozenBlocks& frozen = {},
             const std::optional<ParamState>& init = std::nullopt);

/// Greedy colouring of the S^T S sparsity graph in voxel order.
std::vector<std::vector<int>> color_classes(const SpatialKernel& kernel);

}  // namespace glmar
