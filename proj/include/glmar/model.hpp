#pragma once

#include "glmar/lattice.hpp"
#include "glmar/target.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace glmar {

/// Response series and design for one GLM-AR fit.
///
/// `Y` is T x N (voxel columns in mask scan order), `Xfull` the full T x K
/// design. The likelihood conditions on the first P time points; their
/// design rows are still used to form lagged residuals.
struct Dataset {
  Eigen::MatrixXd Y;
  Eigen::MatrixXd Xfull;
  int P = 1;
  std::vector<std::string> regressor_names;

  int T() const { return static_cast<int>(Y.rows()); }
  int N() const { return static_cast<int>(Y.cols()); }
  int K() const { return static_cast<int>(Xfull.cols()); }

  /// Rows P..T-1 of the full design (the (T-P) x K matrix X).
  Eigen::MatrixXd trimmed_design() const { return Xfull.bottomRows(T() - P); }

  /// Throws DataError on shape problems or non-finite values.
  void validate() const;
};

/// Gamma(shape, scale) hyperpriors for alpha, beta and lambda.
struct HyperPriors {
  double q1 = 0.01, q2 = 100.0;
  double r1 = 0.01, r2 = 100.0;
  double u1 = 0.01, u2 = 100.0;

  void validate() const;
};

enum class Block { W, A, Alpha, Beta, Lambda };

const char* block_name(Block block);

/// Offsets of the stacked parameter vector
/// theta = (w_1..w_K, a_1..a_P, alpha, beta, lambda), rows of W and A
/// each of length N.
struct Layout {
  int N = 0;
  int K = 0;
  int P = 0;

  std::size_t dim() const {
    return static_cast<std::size_t>((K + P + 1) * N + K + P);
  }
  std::size_t w(int k, int n) const { return static_cast<std::size_t>(k * N + n); }
  std::size_t a(int p, int n) const { return static_cast<std::size_t>((K + p) * N + n); }
  std::size_t alpha(int k) const { return static_cast<std::size_t>((K + P) * N + k); }
  std::size_t beta(int p) const { return static_cast<std::size_t>((K + P) * N + K + p); }
  std::size_t lambda(int n) const { return static_cast<std::size_t>((K + P) * N + K + P + n); }

  struct Coordinate {
    Block block;
    int row;    // k or p; 0 for lambda
    int voxel;  // n; -1 for alpha/beta
  };
  Coordinate decode(std::size_t index) const;

  /// Start offset and length of a block (all rows).
  std::pair<std::size_t, std::size_t> block_range(Block block) const;

  bool operator==(const Layout&) const = default;
};

/// Full parameter state.
struct ParamState {
  Eigen::MatrixXd W;  // K x N
  Eigen::MatrixXd A;  // P x N
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
  Eigen::VectorXd lambda;

  Layout layout() const {
    return {static_cast<int>(W.cols()), static_cast<int>(W.rows()), static_cast<int>(A.rows())};
  }
  /// True when every precision is strictly positive and finite.
  bool valid() const;

  Eigen::VectorXd flatten() const;
  static ParamState unflatten(const Layout& layout, std::span<const double> theta);
  static ParamState zeros(const Layout& layout);
};

/// Lag cross-products. With t running over P..T-1 (0-based):
///   Cyy[n](p,q)    = sum_t y[t-p,n] y[t-q,n]
///   Cyx[n](p,q)[k] = sum_t y[t-p,n] Xfull[t-q,k]
///   Cxx(p,q)[k,k'] = sum_t Xfull[t-p,k] Xfull[t-q,k']
class SuffStats {
 public:
  SuffStats() = default;
  SuffStats(int T, int N, int K, int P);

  int T() const { return T_; }
  int N() const { return N_; }
  int K() const { return K_; }
  int P() const { return P_; }
  int lags() const { return P_ + 1; }

  double& cyy(int n, int p, int q) { return cyy_[(static_cast<std::size_t>(n) * lags() + p) * lags() + q]; }
  double cyy(int n, int p, int q) const { return cyy_[(static_cast<std::size_t>(n) * lags() + p) * lags() + q]; }

  /// K contiguous values Cyx[n](p,q)[0..K-1].
  double* cyx(int n, int p, int q) { return &cyx_[((static_cast<std::size_t>(n) * lags() + p) * lags() + q) * K_]; }
  const double* cyx(int n, int p, int q) const { return &cyx_[((static_cast<std::size_t>(n) * lags() + p) * lags() + q) * K_]; }

  /// K x K block Cxx(p,q), row-major in (k, k').
  double* cxx(int p, int q) { return &cxx_[(static_cast<std::size_t>(p) * lags() + q) * K_ * K_]; }
  const double* cxx(int p, int q) const { return &cxx_[(static_cast<std::size_t>(p) * lags() + q) * K_ * K_]; }

 private:
  int T_ = 0, N_ = 0, K_ = 0, P_ = 0;
  std::vector<double> cyy_;
  std::vector<double> cyx_;
  std::vector<double> cxx_;
};

/// Single pass over t = P..T-1. Throws DataError naming the first
/// non-finite value found.
SuffStats precompute_suffstats(const Dataset& data);

/// Lag covariance of the residuals e_t = y_t - Xfull[t] w_n:
/// F(p,q) = sum_t e_{t-p} e_{t-q}, assembled from the sufficient statistics.
Eigen::MatrixXd residual_form(const SuffStats& stats, int n, std::span<const double> w_n);

/// dF/dw_k for k = 0..K-1 (each (P+1) x (P+1), symmetric).
std::vector<Eigen::MatrixXd> residual_form_derivative(const SuffStats& stats, int n,
                                                      std::span<const double> w_n);

/// (-1, a_1, ..., a_P).
Eigen::VectorXd ar_star(std::span<const double> a_n);

/// Which blocks are held fixed. Used to build reduced models (e.g. A frozen
/// at zero with fixed precisions) for both samplers and VB.
struct FrozenBlocks {
  bool W = false;
  bool A = false;
  bool alpha = false;
  bool beta = false;
  bool lambda = false;

  bool any() const { return W || A || alpha || beta || lambda; }
  /// Per-coordinate flags over the stacked vector.
  std::vector<bool> mask(const Layout& layout) const;
};

/// Unnormalized log posterior of the GLM-AR model on the natural scale of
/// the precisions. Invalid states (any precision <= 0) have density -inf.
class GlmArPosterior final : public Target {
 public:
  GlmArPosterior(const SuffStats& stats, const SpatialKernel& kernel, HyperPriors hp);

  std::size_t dim() const override { return layout_.dim(); }
  const Layout& layout() const { return layout_; }
  const SuffStats& stats() const { return *stats_; }
  const SpatialKernel& kernel() const { return *kernel_; }
  const HyperPriors& hyperpriors() const { return hp_; }

  double log_density(std::span<const double> theta) const override;
  double log_density_gradient(std::span<const double> theta,
                              std::span<double> grad) const override;

 private:
  double evaluate(std::span<const double> theta, std::span<double> grad, bool want_grad) const;

  const SuffStats* stats_;
  const SpatialKernel* kernel_;
  HyperPriors hp_;
  Layout layout_;
};

/// Same posterior with alpha, beta, lambda sampled on the log scale
/// (Jacobian included). Off by default; `to_natural` maps draws back.
class LogScaleGlmArPosterior final : public Target {
 public:
  explicit LogScaleGlmArPosterior(const GlmArPosterior& base) : base_(&base) {}

  std::size_t dim() const override { return base_->dim(); }
  double log_density(std::span<const double> u) const override;
  double log_density_gradient(std::span<const double> u, std::span<double> grad) const override;
  void to_natural(std::span<double> u) const override;
  void from_natural(std::span<double> theta) const;

 private:
  const GlmArPosterior* base_;
};

double log_posterior(const ParamState& state, const SuffStats& stats,
                     const SpatialKernel& kernel, const HyperPriors& hp);

/// Throws std::domain_error for invalid states.
Eigen::VectorXd grad_log_posterior(const ParamState& state, const SuffStats& stats,
                                   const SpatialKernel& kernel, const HyperPriors& hp);

/// Per-voxel OLS starting values. Precisions are clamped to [1e-6, 1e6].
/// Throws DataError listing dependent columns when the trimmed design is
/// rank deficient.
ParamState ols_init(const Dataset& data, const SpatialKernel& kernel);

}  // namespace glmar
