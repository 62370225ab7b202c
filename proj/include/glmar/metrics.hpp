#pragma once

#include "glmar/io.hpp"
#include "glmar/lattice.hpp"
#include "glmar/summary.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace glmar {

/// J fitted replicates of one method against a common truth.
struct ReplicateSet {
  std::string method;
  Mask mask;
  Truth truth;
  std::vector<PosteriorSummary> reps;

  /// Throws std::invalid_argument when replicates disagree on (N, K, P)
  /// with each other, the truth or the mask, or the set is empty.
  void validate() const;
  Layout layout() const { return reps.front().layout; }
};

/// One W or A row.
struct BlockRef {
  Block block = Block::W;
  int row = 0;
  std::string label() const;  // "W1", "A2", ...
};

std::vector<BlockRef> coefficient_blocks(const Layout& layout);

struct BlockStats {
  BlockRef ref;
  double asbias = 0.0;
  double amse = 0.0;
  std::optional<double> avar;  // absent when a backend reports no variances
  double correlation = 0.0;    // mean over replicates of corr(estimate, truth)
  double amoran = 0.0;         // mean over replicates of Moran's I of the estimate
};

/// Precomputed reciprocal-distance weights. Pair weights are evaluated on
/// the fly from centroids, so memory stays O(N).
class MoranWeights {
 public:
  explicit MoranWeights(const Mask& mask);
  std::size_t size() const { return centroids_.size(); }
  double weight(std::size_t i, std::size_t j) const;
  double total() const { return total_; }

 private:
  std::vector<std::array<double, 3>> centroids_;
  double total_ = 0.0;
};

/// (N / sum phi) * sum phi (x_i - m)(x_j - m) / sum (x_i - m)^2 with m the
/// arithmetic mean. Throws std::domain_error for a constant image.
double morans_i(std::span<const double> image, const MoranWeights& weights);

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

BlockStats summary_stats(const ReplicateSet& set, const BlockRef& ref, const MoranWeights& weights);
std::vector<BlockStats> summary_stats(const ReplicateSet& set, const MoranWeights& weights);

/// Moran's I of each true W and A row.
std::vector<double> truth_moran(const Truth& truth, const MoranWeights& weights);

enum class EffectRule { Fixed, TopQuantile, AboveGlobalMean };

struct Contrast {
  Eigen::VectorXd c;
  EffectRule rule = EffectRule::TopQuantile;
  /// Fixed: the threshold itself. TopQuantile: the fraction q of voxels
  /// above it. AboveGlobalMean: percent above the mean effect.
  double gamma_e = 0.1;
  double gamma_p = 0.9;

  void validate(int K) const;
};

/// Named contrasts: "fame" (-1,-1,1,1,0)/2 and "face" (1,1,1,1,0)/4.
Contrast named_contrast(const std::string& name);

/// Resolves the effect threshold against point estimates c^T w_n.
double effect_threshold(const Contrast& contrast, const Eigen::VectorXd& point_effect);

struct PPM {
  double gamma_e = 0.0;
  Eigen::VectorXd probability;
  std::vector<bool> active;
};

/// Pr(c^T w_n > gamma_e) as the fraction of draws (rows of `effect_draws`,
/// one column per voxel) above the threshold.
PPM ppm_from_draws(const Eigen::MatrixXd& effect_draws, const Eigen::VectorXd& point_effect,
                   const Contrast& contrast);
/// Gaussian upper tail with mean c^T m_n and variance c^T Sigma_n c.
PPM ppm_gaussian(const Eigen::VectorXd& effect_mean, const Eigen::VectorXd& effect_var,
                 const Contrast& contrast);
/// Helpers forming c^T w from stacked draws or from per-voxel covariances.
Eigen::MatrixXd contrast_draws(const Eigen::MatrixXd& w_draws, const Layout& layout, const Eigen::VectorXd& c);
Eigen::VectorXd contrast_variance(const std::vector<Eigen::MatrixXd>& w_cov, const Eigen::VectorXd& c);
Eigen::VectorXd contrast_mean(const Eigen::MatrixXd& W, const Eigen::VectorXd& c);

struct CurvePoint {
  double threshold;
  double sensitivity;
};

/// Fraction of truly active voxels whose probability exceeds each
/// threshold. Throws std::invalid_argument on an empty truth set.
std::vector<CurvePoint> sensitivity_curve(const Eigen::VectorXd& probability, const std::vector<bool>& truth_active,
                                          const std::vector<double>& thresholds);
/// 0.90, 0.91, ..., 1.00
std::vector<double> default_thresholds();

struct BlockComparison {
  BlockRef ref;
  double amse_ratio = 0.0;           // AMSE_a / AMSE_b
  double estimate_correlation = 0.0; // mean over replicates of corr(mean_a, mean_b)
  double amoran_a = 0.0;
  double amoran_b = 0.0;
};

struct Comparison {
  std::string method_a;
  std::string method_b;
  std::vector<BlockComparison> blocks;
  double mean_ratio_all = 0.0;  // over W and A rows
  double mean_ratio_w = 0.0;    // over W rows only
  /// Per W row: voxelwise mean over replicates of log(var_a / var_b);
  /// empty when either method lacks variances.
  std::vector<Eigen::VectorXd> log_variance_ratio;
};

/// Throws std::invalid_argument on mismatched sets.
Comparison compare_report(const ReplicateSet& a, const ReplicateSet& b, const MoranWeights& weights);

/// Table layout: one row per (method, statistic), one column per block.
/// Methods after the first also get percentage rows relative to the first.
void write_table_csv(const std::filesystem::path& path, const std::vector<double>& true_moran,
                     const std::vector<std::vector<BlockStats>>& methods, const std::vector<std::string>& names);
void write_table_json(const std::filesystem::path& path, const std::vector<double>& true_moran,
                      const std::vector<std::vector<BlockStats>>& methods, const std::vector<std::string>& names);
void write_comparison_json(const std::filesystem::path& path, const Comparison& comparison);
void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

/// Grid images of per-voxel values; cells outside the mask are empty (CSV)
/// or 0 (PGM). PGM maps [lo, hi] linearly to 1..255. 2-D masks only.
void write_grid_csv(const std::filesystem::path& path, const Mask& mask, const Eigen::VectorXd& values);
void write_pgm(const std::filesystem::path& path, const Mask& mask, const Eigen::VectorXd& values, double lo,
               double hi);

}  // namespace glmar
