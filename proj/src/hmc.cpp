#include "glmar/hmc.hpp"

#include "glmar/errors.hpp"
#include "glmar/numeric.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace glmar {

namespace {

constexpr double kMassFloor = 1e-8;

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

void HmcConfig::validate(std::size_t dim) const {
  if (!(delta0 > 0.0) || !std::isfinite(delta0)) throw std::invalid_argument("delta0 must be positive");
  if (L < 1) throw std::invalid_argument("L must be at least 1");
  if (n_iter < 1 || n_burn < 0 || n_burn >= n_iter)
    throw std::invalid_argument("need 0 <= n_burn < n_iter");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw std::invalid_argument("target_accept must lie in (0, 1)");
  if (!(kappa >= 0.0)) throw std::invalid_argument("kappa must be non-negative");
  if (adapt_window < 1) throw std::invalid_argument("adapt_window must be at least 1");
  if (thin < 1) throw std::invalid_argument("thin must be at least 1");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw std::invalid_argument("jitter must lie in [0, 1)");
  if (mass.size() != 0) {
    if (static_cast<std::size_t>(mass.size()) != dim)
      throw std::invalid_argument("mass has length " + std::to_string(mass.size()) + ", expected " +
                                  std::to_string(dim));
    if (!(mass.array() > 0.0).all() || !mass.allFinite())
      throw std::invalid_argument("mass entries must be positive and finite");
  }
  if (mass_rounds < 0) throw std::invalid_argument("mass_rounds must be non-negative");
  if (mass_rounds > 0 && (pilot_burn < 0 || pilot_iter - pilot_burn < 4))
    throw std::invalid_argument("pilot rounds need at least 4 retained iterations");
  for (auto c : trace_coords)
    if (c >= dim) throw std::invalid_argument("trace coordinate " + std::to_string(c) + " out of range");
}

Kinetic::Kinetic(const Eigen::VectorXd& mass, const std::vector<bool>& frozen)
    : mass_(mass), inv_(mass.size()), sd_(mass.size()) {
  for (Eigen::Index i = 0; i < mass.size(); ++i) {
    const bool fixed = !frozen.empty() && frozen[static_cast<std::size_t>(i)];
    inv_[i] = fixed ? 0.0 : 1.0 / mass[i];
    sd_[i] = fixed ? 0.0 : std::sqrt(mass[i]);
  }
}

void Kinetic::draw_momentum(std::mt19937_64& rng, Eigen::VectorXd& xi) const {
  std::normal_distribution<double> norm(0.0, 1.0);
  xi.resize(sd_.size());
  for (Eigen::Index i = 0; i < sd_.size(); ++i) xi[i] = sd_[i] * norm(rng);
}

double Kinetic::energy(const Eigen::VectorXd& xi) const {
  const Eigen::VectorXd terms = xi.array().square() * inv_.array();
  return 0.5 * pairwise_sum(as_span(terms));
}

LeapfrogResult leapfrog(const Target& target, Eigen::VectorXd& theta, Eigen::VectorXd& xi,
                        Eigen::VectorXd& grad, double delta, int L, const Eigen::VectorXd& inv_mass) {
  LeapfrogResult res;
  xi += 0.5 * delta * grad;
  for (int l = 1; l <= L; ++l) {
    theta += delta * inv_mass.cwiseProduct(xi);
    res.log_density = target.log_density_gradient(as_span(theta), as_span(grad));
    if (!std::isfinite(res.log_density) || !all_finite(grad)) {
      res.rejected = true;
      return res;
    }
    xi += (l < L ? delta : 0.5 * delta) * grad;
  }
  return res;
}

HmcState HmcState::start(const Target& target, Eigen::VectorXd theta0, std::uint64_t seed) {
  HmcState s;
  s.theta = std::move(theta0);
  s.grad.resize(s.theta.size());
  s.log_density = target.log_density_gradient(as_span(s.theta), as_span(s.grad));
  if (!std::isfinite(s.log_density) || !all_finite(s.grad))
    throw std::domain_error("initial state has zero posterior density");
  s.rng.seed(seed);
  return s;
}

StepInfo hmc_step(HmcState& state, const Target& target, const Kinetic& kinetic, double delta, int L) {
  StepInfo info;
  Eigen::VectorXd xi;
  kinetic.draw_momentum(state.rng, xi);
  const double h0 = -state.log_density + kinetic.energy(xi);

  Eigen::VectorXd theta = state.theta;
  Eigen::VectorXd grad = state.grad;
  const auto lf = leapfrog(target, theta, xi, grad, delta, L, kinetic.inv_mass());

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(state.rng);
  ++state.iteration;
  if (lf.rejected) {
    info.delta_H = std::numeric_limits<double>::infinity();
    return info;
  }
  const double h1 = -lf.log_density + kinetic.energy(xi);
  info.delta_H = h1 - h0;
  if (!std::isfinite(info.delta_H)) {
    info.delta_H = std::numeric_limits<double>::infinity();
    return info;
  }
  info.accept_prob = std::min(1.0, std::exp(-info.delta_H));
  if (u < info.accept_prob) {
    info.accepted = true;
    state.theta = std::move(theta);
    state.grad = std::move(grad);
    state.log_density = lf.log_density;
    ++state.accepted;
  }
  return info;
}

double adapt_step_size(double acc_rate, double delta, const HmcConfig& cfg) {
  return delta * std::exp(cfg.kappa * (acc_rate - cfg.target_accept));
}

SampleStore::SampleStore(std::size_t dim, std::size_t expected_draws, bool keep_draws,
                         std::vector<std::size_t> trace_coords)
    : dim_(dim),
      keep_(keep_draws),
      mean_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim))),
      m2_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim))),
      trace_coords_(std::move(trace_coords)),
      traces_(trace_coords_.size()) {
  batches_ = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(expected_draws))));
  batch_size_ = batches_ > 0 ? expected_draws / batches_ : 0;
  batch_sums_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(batches_));
  if (keep_) draws_.reserve(dim * expected_draws);
}

void SampleStore::record_draw(std::span<const double> theta) {
  ++count_;
  const double n = static_cast<double>(count_);
  for (std::size_t i = 0; i < dim_; ++i) {
    const auto at = static_cast<Eigen::Index>(i);
    const double d = theta[i] - mean_[at];
    mean_[at] += d / n;
    m2_[at] += d * (theta[i] - mean_[at]);
  }
  if (batch_size_ > 0) {
    const std::size_t b = (count_ - 1) / batch_size_;
    if (b < batches_)
      for (std::size_t i = 0; i < dim_; ++i) batch_sums_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) += theta[i];
  }
  if (keep_) draws_.insert(draws_.end(), theta.begin(), theta.end());
}

void SampleStore::record_step(const StepInfo& info, double delta) {
  accept_prob_.push_back(info.accept_prob);
  accepted_.push_back(info.accepted ? 1 : 0);
  delta_H_.push_back(info.delta_H);
  step_size_.push_back(delta);
}

void SampleStore::record_trace(std::span<const double> theta) {
  for (std::size_t j = 0; j < trace_coords_.size(); ++j) traces_[j].push_back(theta[trace_coords_[j]]);
}

Eigen::VectorXd SampleStore::variance() const {
  if (count_ < 2) return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim_), std::numeric_limits<double>::quiet_NaN());
  return m2_ / static_cast<double>(count_ - 1);
}

Eigen::VectorXd SampleStore::bmse() const {
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd out = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim_), nan);
  if (batches_ < 2 || batch_size_ < 2 || count_ < batches_ * batch_size_) return out;
  const double b = static_cast<double>(batches_);
  for (std::size_t i = 0; i < dim_; ++i) {
    const Eigen::VectorXd means = batch_sums_.row(static_cast<Eigen::Index>(i)).transpose() / static_cast<double>(batch_size_);
    const double mu = means.mean();
    const double var = (means.array() - mu).square().sum() / (b - 1.0);
    out[static_cast<Eigen::Index>(i)] = std::sqrt(var / b);
  }
  return out;
}

Eigen::VectorXd tune_mass(const SampleStore& pilot, const std::vector<bool>& frozen,
                          std::vector<std::string>* warnings) {
  const Eigen::VectorXd var = pilot.variance();
  Eigen::VectorXd m(var.size());
  for (Eigen::Index i = 0; i < var.size(); ++i) {
    const bool fixed = !frozen.empty() && frozen[static_cast<std::size_t>(i)];
    if (fixed) {
      m[i] = 1.0;
      continue;
    }
    const double v = std::isfinite(var[i]) ? var[i] : 0.0;
    if (v < kMassFloor && warnings)
      warnings->push_back("coordinate " + std::to_string(i) + " has pilot variance " +
                          std::to_string(v) + "; using floor 1e-8");
    m[i] = 1.0 / std::max(v, kMassFloor);
  }
  return m;
}

double bmse(std::span<const double> draws, std::size_t batches) {
  const std::size_t n = draws.size();
  if (batches == 0) batches = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  if (batches < 2 || n / batches < 2)
    throw std::invalid_argument("bmse needs at least 2 batches of 2 draws (have " + std::to_string(n) + " draws)");
  const std::size_t size = n / batches;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) means[b] = pairwise_sum(draws.subspan(b * size, size)) / static_cast<double>(size);
  const double mu = pairwise_sum(means) / static_cast<double>(batches);
  std::vector<double> sq(batches);
  for (std::size_t b = 0; b < batches; ++b) sq[b] = (means[b] - mu) * (means[b] - mu);
  const double var = pairwise_sum(sq) / static_cast<double>(batches - 1);
  return std::sqrt(var / static_cast<double>(batches));
}

namespace {

struct Segment {
  SampleStore store;
  HmcState state;
  double delta;
};

// One chain segment: n_burn adaptive iterations then n_iter - n_burn
// retained ones at the frozen step size.
Segment run_segment(const Target& target, HmcState state, const Kinetic& kinetic, double delta,
                    int n_iter, int n_burn, const HmcConfig& cfg, bool keep, bool traces) {
  const auto retained = static_cast<std::size_t>((n_iter - n_burn) / cfg.thin);
  SampleStore store(target.dim(), retained, keep, traces ? cfg.trace_coords : std::vector<std::size_t>{});
  Eigen::VectorXd natural(static_cast<Eigen::Index>(target.dim()));
  double window_sum = 0.0;
  int window_count = 0;
  for (int it = 0; it < n_iter; ++it) {
    double step = delta;
    if (cfg.jitter > 0.0) {
      std::uniform_real_distribution<double> unif(1.0 - cfg.jitter, 1.0 + cfg.jitter);
      step *= unif(state.rng);
    }
    const StepInfo info = hmc_step(state, target, kinetic, step, cfg.L);
    store.record_step(info, delta);
    const bool burn = it < n_burn;
    if (burn) {
      window_sum += info.accept_prob;
      if (++window_count == cfg.adapt_window) {
        delta = adapt_step_size(window_sum / window_count, delta, cfg);
        window_sum = 0.0;
        window_count = 0;
      }
    }
    const bool want_trace = traces && !cfg.trace_coords.empty();
    const bool want_draw = !burn && (it - n_burn + 1) % cfg.thin == 0;
    if (want_trace || want_draw) {
      natural = state.theta;
      target.to_natural(as_span(natural));
      if (want_trace) store.record_trace(as_span(natural));
      if (want_draw) store.record_draw(as_span(natural));
    }
  }
  return {std::move(store), std::move(state), delta};
}

}  // namespace

HmcRun run_chain(const Target& target, const Eigen::VectorXd& theta0, const HmcConfig& cfg,
                 const std::vector<bool>& frozen) {
  cfg.validate(target.dim());
  HmcRun run;
  run.mass = cfg.mass.size() ? cfg.mass : Eigen::VectorXd::Ones(static_cast<Eigen::Index>(target.dim()));
  HmcState state = HmcState::start(target, theta0, cfg.seed);
  double delta = cfg.delta0;
  for (int round = 0; round < cfg.mass_rounds; ++round) {
    const Kinetic kinetic(run.mass, frozen);
    auto seg = run_segment(target, std::move(state), kinetic, delta, cfg.pilot_iter, cfg.pilot_burn, cfg, false, false);
    state = std::move(seg.state);
    delta = seg.delta;
    // Pilot variances are on the natural scale; the sampler needs them on
    // its own scale, which differs only for the log-scale target.
    Eigen::VectorXd m = tune_mass(seg.store, frozen, &run.warnings);
    if (cfg.log_scale) {
      const Eigen::VectorXd mean = seg.store.mean();
      Eigen::VectorXd probe = state.theta;
      target.to_natural(as_span(probe));
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        if (probe[i] != state.theta[i] && mean[i] > 0.0) m[i] *= mean[i] * mean[i];
      }
    }
    // Keep the step along the stiffest direction comparable under the new
    // metric.
    double ratio = 0.0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (frozen.empty() || !frozen[static_cast<std::size_t>(i)]) ratio = std::max(ratio, m[i] / run.mass[i]);
    }
    if (ratio > 0.0) delta *= std::sqrt(ratio);
    run.mass = m;
  }
  const Kinetic kinetic(run.mass, frozen);
  auto seg = run_segment(target, std::move(state), kinetic, delta, cfg.n_iter, cfg.n_burn, cfg, cfg.keep_draws, true);
  run.store = std::move(seg.store);
  run.delta = seg.delta;
  run.final_theta = seg.state.theta;
  target.to_natural(as_span(run.final_theta));
  const auto& probs = run.store.accept_prob();
  if (static_cast<int>(probs.size()) > cfg.n_burn) {
    std::span<const double> tail(probs.data() + cfg.n_burn, probs.size() - static_cast<std::size_t>(cfg.n_burn));
    double acc = 0.0;
    for (std::size_t i = static_cast<std::size_t>(cfg.n_burn); i < run.store.accepted().size(); ++i) acc += run.store.accepted()[i];
    run.accept_rate = acc / static_cast<double>(tail.size());
  }
  return run;
}

HmcFit run_hmc(const Dataset& data, const SpatialKernel& kernel, const HyperPriors& hp,
               const HmcConfig& cfg, const FrozenBlocks& frozen, const std::optional<ParamState>& init) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  data.validate();
  hp.validate();
  const SuffStats stats = precompute_suffstats(data);
  const ParamState start = init ? *init : ols_init(data, kernel);
  const Layout layout = start.layout();
  if (layout.N != data.N() || layout.K != data.K() || layout.P != data.P)
    throw std::invalid_argument("initial state does not match the dataset dimensions");
  const GlmArPosterior posterior(stats, kernel, hp);
  const LogScaleGlmArPosterior log_posterior_target(posterior);
  const auto t1 = clock::now();

  const Target& target = cfg.log_scale ? static_cast<const Target&>(log_posterior_target) : posterior;
  Eigen::VectorXd theta0 = start.flatten();
  if (cfg.log_scale) log_posterior_target.from_natural(as_span(theta0));

  HmcFit fit;
  fit.run = run_chain(target, theta0, cfg, frozen.mask(layout));
  const auto t2 = clock::now();
  fit.summary.method = "HMC";
  fit.summary.layout = layout;
  fit.summary.mean = fit.run.store.mean();
  fit.summary.variance = fit.run.store.variance();
  fit.summary.bmse = fit.run.store.bmse();
  fit.seconds_precompute = std::chrono::duration<double>(t1 - t0).count();
  fit.seconds_sampling = std::chrono::duration<double>(t2 - t1).count();
  return fit;
}

std::vector<std::size_t> default_trace_coords(const Layout& layout, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  auto pick = [&](std::size_t start, std::size_t count, std::size_t how_many) {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(how_many, count));
    std::sort(idx.begin(), idx.end());
    out.insert(out.end(), idx.begin(), idx.end());
  };
  const auto [w0, wn] = layout.block_range(Block::W);
  const auto [a0, an] = layout.block_range(Block::A);
  pick(w0, wn, 5);
  pick(a0, an, 2);
  for (int k = 0; k < layout.K; ++k) out.push_back(layout.alpha(k));
  for (int p = 0; p < layout.P; ++p) out.push_back(layout.beta(p));
  return out;
}

void write_traces(const std::filesystem::path& dir, const SampleStore& store, const Layout& layout) {
  std::filesystem::create_directories(dir);
  for (std::size_t j = 0; j < store.trace_coords().size(); ++j) {
    const auto c = layout.decode(store.trace_coords()[j]);
    std::string name = std::string(block_name(c.block)) + "_" + std::to_string(c.row);
    if (c.voxel >= 0) name += "_" + std::to_string(c.voxel);
    std::ofstream out(dir / ("trace_" + name + ".csv"));
    out << "iteration,value\n";
    const auto& tr = store.trace(j);
    for (std::size_t i = 0; i < tr.size(); ++i) out << i + 1 << ',' << format_double(tr[i]) << '\n';
  }
  std::ofstream acc(dir / "acceptance.csv");
  acc << "iteration,accepted,accept_prob,delta_H,step_size\n";
  for (std::size_t i = 0; i < store.accepted().size(); ++i)
    acc << i + 1 << ',' << static_cast<int>(store.accepted()[i]) << ',' << format_double(store.accept_prob()[i])
        << ',' << format_double(store.delta_H()[i]) << ',' << format_double(store.step_size()[i]) << '\n';
}

void write_draws(const std::filesystem::path& path, const SampleStore& store) {
  if (!store.has_draws()) throw std::logic_error("chain was run without keep_draws");
  std::ofstream out(path, std::ios::binary);
  out << store.dim() << ' ' << store.count() << '\n';
  for (std::size_t i = 0; i < store.count(); ++i) {
    const auto d = store.draw(i);
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
}

Eigen::MatrixXd read_draws(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open");
  std::size_t dim = 0, count = 0;
  if (!(in >> dim >> count) || in.get() != '\n') throw DataError(path.string() + ":1: expected 'dim count' header");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(count, dim);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(count * dim * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * dim * sizeof(double))
    throw DataError(path.string() + ": truncated draw archive");
  return m;
}

}  // namespace glmar
