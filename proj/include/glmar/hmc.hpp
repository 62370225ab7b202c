#pragma once

#include "glmar/model.hpp"
#include "glmar/summary.hpp"
#include "glmar/target.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace glmar {

struct HmcConfig {
  double delta0 = 0.00002;
  int L = 250;
  int n_iter = 3000;
  int n_burn = 2000;
  double target_accept = 0.65;
  double kappa = 1.0;
  int adapt_window = 50;
  /// Diagonal of M; empty means all ones.
  Eigen::VectorXd mass;
  int thin = 1;
  std::uint64_t seed = 1;
  /// Each trajectory uses delta * U(1 - jitter, 1 + jitter).
  double jitter = 0.1;

  /// Pilot rounds of mass tuning run before the main chain, each with its
  /// own burn-in adaptation.
  int mass_rounds = 0;
  int pilot_iter = 1500;
  int pilot_burn = 1000;

  /// Sample alpha, beta, lambda on the log scale.
  bool log_scale = false;
  /// Keep every retained draw (needed for draw-based PPMs).
  bool keep_draws = false;
  /// Coordinates whose full trajectory (burn-in included) is recorded.
  std::vector<std::size_t> trace_coords;

  /// Throws std::invalid_argument.
  void validate(std::size_t dim) const;
};

/// Diagonal kinetic energy. Frozen coordinates get zero momentum and zero
/// inverse mass, so they never move.
class Kinetic {
 public:
  Kinetic(const Eigen::VectorXd& mass, const std::vector<bool>& frozen);

  const Eigen::VectorXd& mass() const { return mass_; }
  const Eigen::VectorXd& inv_mass() const { return inv_; }
  void draw_momentum(std::mt19937_64& rng, Eigen::VectorXd& xi) const;
  double energy(const Eigen::VectorXd& xi) const;

 private:
  Eigen::VectorXd mass_;
  Eigen::VectorXd inv_;
  Eigen::VectorXd sd_;
};

struct LeapfrogResult {
  /// True when an intermediate point had -inf density or a non-finite
  /// gradient; the proposal must then be rejected.
  bool rejected = false;
  double log_density = 0.0;
};

/// Half step in momentum, L position steps, momentum steps of delta except
/// the last which is delta/2. `grad` holds the gradient at `theta` on entry
/// and at the end point on exit.
LeapfrogResult leapfrog(const Target& target, Eigen::VectorXd& theta, Eigen::VectorXd& xi,
                        Eigen::VectorXd& grad, double delta, int L, const Eigen::VectorXd& inv_mass);

struct HmcState {
  Eigen::VectorXd theta;
  Eigen::VectorXd grad;
  double log_density = 0.0;
  long iteration = 0;
  long accepted = 0;
  std::mt19937_64 rng;

  /// Throws std::domain_error if theta0 has -inf density.
  static HmcState start(const Target& target, Eigen::VectorXd theta0, std::uint64_t seed);
};

struct StepInfo {
  bool accepted = false;
  /// min(1, exp(-delta_H)); 0 for flagged rejections.
  double accept_prob = 0.0;
  /// H(proposal) - H(start); +inf for flagged rejections.
  double delta_H = 0.0;
};

StepInfo hmc_step(HmcState& state, const Target& target, const Kinetic& kinetic, double delta, int L);

/// delta * exp(kappa * (acc_rate - target_accept)).
double adapt_step_size(double acc_rate, double delta, const HmcConfig& cfg);

/// Retained draws and per-iteration diagnostics of one chain.
class SampleStore {
 public:
  SampleStore() = default;
  SampleStore(std::size_t dim, std::size_t expected_draws, bool keep_draws,
              std::vector<std::size_t> trace_coords);

  void record_draw(std::span<const double> theta);
  void record_step(const StepInfo& info, double delta);
  void record_trace(std::span<const double> theta);

  std::size_t dim() const { return dim_; }
  std::size_t count() const { return count_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Sample variance (n - 1 denominator).
  Eigen::VectorXd variance() const;
  /// Batch-means standard error per coordinate from the online batch sums.
  Eigen::VectorXd bmse() const;

  bool has_draws() const { return keep_; }
  std::span<const double> draw(std::size_t i) const { return {draws_.data() + i * dim_, dim_}; }

  const std::vector<double>& accept_prob() const { return accept_prob_; }
  const std::vector<char>& accepted() const { return accepted_; }
  const std::vector<double>& delta_H() const { return delta_H_; }
  const std::vector<double>& step_size() const { return step_size_; }
  const std::vector<std::size_t>& trace_coords() const { return trace_coords_; }
  /// trace(j)[i] is coordinate trace_coords()[j] after iteration i.
  const std::vector<double>& trace(std::size_t j) const { return traces_[j]; }

 private:
  std::size_t dim_ = 0;
  std::size_t count_ = 0;
  bool keep_ = false;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
  std::vector<double> draws_;

  std::size_t batch_size_ = 0;
  std::size_t batches_ = 0;
  Eigen::MatrixXd batch_sums_;

  std::vector<double> accept_prob_;
  std::vector<char> accepted_;
  std::vector<double> delta_H_;
  std::vector<double> step_size_;
  std::vector<std::size_t> trace_coords_;
  std::vector<std::vector<double>> traces_;
};

/// m_i = 1 / max(var_i, 1e-8). Non-frozen coordinates that hit the floor
/// are reported in `warnings`.
Eigen::VectorXd tune_mass(const SampleStore& pilot, const std::vector<bool>& frozen,
                          std::vector<std::string>* warnings = nullptr);

/// Batch-means Monte Carlo standard error with `batches` equal batches
/// (floor(sqrt(n)) when 0). Trailing draws that do not fill a batch are
/// dropped. Throws std::invalid_argument with fewer than 2 batches of 2.
double bmse(std::span<const double> draws, std::size_t batches = 0);

struct HmcRun {
  SampleStore store;
  Eigen::VectorXd mass;
  double delta = 0.0;
  /// Mean acceptance over the retained iterations.
  double accept_rate = 0.0;
  Eigen::VectorXd final_theta;
  std::vector<std::string> warnings;
};

/// Pilot mass-tuning rounds (if configured) followed by the main chain.
/// Draws are mapped through target.to_natural before being stored.
HmcRun run_chain(const Target& target, const Eigen::VectorXd& theta0, const HmcConfig& cfg,
                 const std::vector<bool>& frozen = {});

struct HmcFit {
  HmcRun run;
  PosteriorSummary summary;
  double seconds_precompute = 0.0;
  double seconds_sampling = 0.0;
};

/// Full GLM-AR fit starting from ols_init, or from `init` when given.
HmcFit run_hmc(const Dataset& data, const SpatialKernel& kernel, const HyperPriors& hp,
               const HmcConfig& cfg, const FrozenBlocks& frozen = {},
               const std::optional<ParamState>& init = std::nullopt);

/// Monitored coordinates by the default rule: 5 random W entries, 2 random
/// A entries, every alpha_k and every beta_p.
std::vector<std::size_t> default_trace_coords(const Layout& layout, std::uint64_t seed);

/// One CSV per monitored coordinate (iteration,value) plus acceptance.csv.
void write_traces(const std::filesystem::path& dir, const SampleStore& store, const Layout& layout);

/// Row-major binary draw archive after a one-line text header "dim count\n".
void write_draws(const std::filesystem::path& path, const SampleStore& store);
/// count x dim matrix. Throws DataError on a malformed or truncated file.
Eigen::MatrixXd read_draws(const std::filesystem::path& path);

}  // namespace glmar
