#include "glmar/vb.hpp"

#include "glmar/errors.hpp"
#include "glmar/numeric.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace glmar {

namespace {

using RowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

RowMap cxx_block(const SuffStats& st, int p, int q) { return RowMap(st.cxx(p, q), st.K(), st.K()); }

// E[a* a*^T] for voxel n.
Eigen::MatrixXd astar_moment(const VBPosterior& q, int n) {
  const int P = q.layout.P;
  Eigen::VectorXd mu(P + 1);
  mu[0] = -1.0;
  mu.tail(P) = q.A_mean.col(n);
  Eigen::MatrixXd M = mu * mu.transpose();
  M.bottomRightCorner(P, P) += q.A_cov[static_cast<std::size_t>(n)];
  return M;
}

// E over q(w_n) of the residual lag form: F(m_n) + tr(Cxx(p,q) Sigma_w).
Eigen::MatrixXd expected_residual_form(const VBPosterior& q, int n, const SuffStats& st) {
  const int K = q.layout.K, lags = q.layout.P + 1;
  Eigen::MatrixXd F = residual_form(st, n, {q.W_mean.col(n).data(), static_cast<std::size_t>(K)});
  const Eigen::MatrixXd& S = q.W_cov[static_cast<std::size_t>(n)];
  for (int p = 0; p < lags; ++p)
    for (int r = 0; r < lags; ++r) F(p, r) += cxx_block(st, p, r).cwiseProduct(S.transpose()).sum();
  return F;
}

// sum_{m != n} StS(n, m) v[m]
double neighbour_sum(const SpatialKernel& kernel, int n, const double* v, Eigen::Index stride) {
  double s = 0.0;
  for (SparseRowMatrix::InnerIterator it(kernel.StS, n); it; ++it)
    if (it.col() != n) s += it.value() * v[it.col() * stride];
  return s;
}

double row_expected_quad(const SpatialKernel& kernel, const Eigen::MatrixXd& mean,
                         const std::vector<Eigen::MatrixXd>& cov, int row) {
  const Eigen::VectorXd m = mean.row(row).transpose();
  double q = quad_form(kernel, as_span(m));
  std::vector<double> diag(cov.size());
  for (std::size_t n = 0; n < cov.size(); ++n) diag[n] = kernel.StS_diag[static_cast<Eigen::Index>(n)] * cov[n](row, row);
  return q + pairwise_sum(diag);
}

void solve_gaussian(const Eigen::MatrixXd& precision, const Eigen::VectorXd& rhs, Eigen::Ref<Eigen::VectorXd> mean,
                    Eigen::MatrixXd& cov, const char* what, int n) {
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success || !precision.allFinite())
    throw NumericalError(std::string("update precision of q(") + what + ") at voxel " + std::to_string(n) +
                         " is not positive definite");
  mean = llt.solve(rhs);
  cov = llt.solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
  cov = 0.5 * (cov + cov.transpose()).eval();
}

Eigen::MatrixXd w_precision(const VBPosterior& q, int n, const VBModel& model, Eigen::VectorXd* rhs) {
  const auto& st = model.stats;
  const int K = q.layout.K, lags = q.layout.P + 1;
  const Eigen::MatrixXd Ma = astar_moment(q, n);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(K, K);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(K);
  for (int p = 0; p < lags; ++p) {
    for (int r = 0; r < lags; ++r) {
      H += Ma(p, r) * cxx_block(st, p, r);
      b += Ma(p, r) * Eigen::Map<const Eigen::VectorXd>(st.cyx(n, p, r), K);
    }
  }
  H = 0.5 * (H + H.transpose()).eval();
  const double lam = q.lambda[static_cast<std::size_t>(n)].mean();
  Eigen::MatrixXd prec = lam * H;
  const double d = model.kernel.StS_diag[n];
  if (rhs) *rhs = lam * b;
  for (int k = 0; k < K; ++k) {
    const double a = q.alpha[static_cast<std::size_t>(k)].mean();
    prec(k, k) += a * d;
    if (rhs) (*rhs)[k] -= a * neighbour_sum(model.kernel, n, q.W_mean.data() + k, q.W_mean.rows());
  }
  return prec;
}

Eigen::MatrixXd a_precision(const VBPosterior& q, int n, const VBModel& model, Eigen::VectorXd* rhs) {
  const int P = q.layout.P;
  const Eigen::MatrixXd F = expected_residual_form(q, n, model.stats);
  const double lam = q.lambda[static_cast<std::size_t>(n)].mean();
  Eigen::MatrixXd prec = lam * F.bottomRightCorner(P, P);
  const double d = model.kernel.StS_diag[n];
  if (rhs) *rhs = lam * F.col(0).tail(P);
  for (int p = 0; p < P; ++p) {
    const double b = q.beta[static_cast<std::size_t>(p)].mean();
    prec(p, p) += b * d;
    if (rhs) (*rhs)[p] -= b * neighbour_sum(model.kernel, n, q.A_mean.data() + p, q.A_mean.rows());
  }
  return prec;
}

double expected_Q(const VBPosterior& q, int n, const SuffStats& st) {
  return astar_moment(q, n).cwiseProduct(expected_residual_form(q, n, st)).sum();
}

double gaussian_entropy(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return 0.5 * static_cast<double>(cov.rows()) * (1.0 + std::log(2.0 * std::numbers::pi)) + 0.5 * logdet;
}

bool spd(const Eigen::MatrixXd& m) {
  if (!m.allFinite() || (m - m.transpose()).norm() > 1e-10 * (1.0 + m.norm())) return false;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.info() == Eigen::Success;
}

}  // namespace

double GammaFactor::mean_log() const {
  return point ? std::log(value) : boost::math::digamma(shape) - std::log(rate);
}

double GammaFactor::entropy() const {
  if (point) return 0.0;
  return shape - std::log(rate) + std::lgamma(shape) + (1.0 - shape) * boost::math::digamma(shape);
}

bool VBPosterior::valid() const {
  auto ok_gamma = [](const GammaFactor& g) {
    return g.point ? (std::isfinite(g.value) && g.value > 0.0)
                   : (std::isfinite(g.shape) && std::isfinite(g.rate) && g.shape > 0.0 && g.rate > 0.0);
  };
  for (const auto& c : W_cov)
    if (!c.isZero(0.0) && !spd(c)) return false;
  for (const auto& c : A_cov)
    if (!c.isZero(0.0) && !spd(c)) return false;
  for (const auto* v : {&alpha, &beta, &lambda})
    for (const auto& g : *v)
      if (!ok_gamma(g)) return false;
  return W_mean.allFinite() && A_mean.allFinite();
}

void VBConfig::validate() const {
  if (max_iter < 1) throw std::invalid_argument("max_iter must be at least 1");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
  if (workers < 1) throw std::invalid_argument("workers must be at least 1");
}

VBPosterior vb_initialize(const VBModel& model, const ParamState& init) {
  VBPosterior q;
  q.layout = init.layout();
  const Layout& lay = q.layout;
  const auto& hp = model.hp;
  const double T_eff = static_cast<double>(model.stats.T() - lay.P);
  q.W_mean = init.W;
  q.A_mean = init.A;
  q.W_cov.assign(static_cast<std::size_t>(lay.N), Eigen::MatrixXd::Zero(lay.K, lay.K));
  q.A_cov.assign(static_cast<std::size_t>(lay.N), Eigen::MatrixXd::Zero(lay.P, lay.P));
  auto gamma_at = [](bool frozen, double shape, double value) {
    return frozen ? GammaFactor::point_mass(value) : GammaFactor{shape, shape / value, false, 0.0};
  };
  for (int k = 0; k < lay.K; ++k) q.alpha.push_back(gamma_at(model.frozen.alpha, hp.q1 + lay.N / 2.0, init.alpha[k]));
  for (int p = 0; p < lay.P; ++p) q.beta.push_back(gamma_at(model.frozen.beta, hp.r1 + lay.N / 2.0, init.beta[p]));
  for (int n = 0; n < lay.N; ++n) q.lambda.push_back(gamma_at(model.frozen.lambda, hp.u1 + T_eff / 2.0, init.lambda[n]));

  // Covariances from the update precisions at the initial means.
  for (int n = 0; n < lay.N; ++n) {
    const auto i = static_cast<std::size_t>(n);
    if (!model.frozen.W) {
      Eigen::LLT<Eigen::MatrixXd> llt(w_precision(q, n, model, nullptr));
      if (llt.info() != Eigen::Success) throw NumericalError("initial q(w) precision is not positive definite at voxel " + std::to_string(n));
      q.W_cov[i] = llt.solve(Eigen::MatrixXd::Identity(lay.K, lay.K));
    }
  }
  for (int n = 0; n < lay.N; ++n) {
    const auto i = static_cast<std::size_t>(n);
    if (!model.frozen.A) {
      Eigen::LLT<Eigen::MatrixXd> llt(a_precision(q, n, model, nullptr));
      if (llt.info() != Eigen::Success) throw NumericalError("initial q(a) precision is not positive definite at voxel " + std::to_string(n));
      q.A_cov[i] = llt.solve(Eigen::MatrixXd::Identity(lay.P, lay.P));
    }
  }
  return q;
}

void vb_update_factor(VBPosterior& q, const VBFactor& f, const VBModel& model) {
  const Layout& lay = q.layout;
  const auto& hp = model.hp;
  const auto i = static_cast<std::size_t>(f.index);
  switch (f.block) {
    case Block::W: {
      if (model.frozen.W) return;
      Eigen::VectorXd rhs;
      const Eigen::MatrixXd prec = w_precision(q, f.index, model, &rhs);
      solve_gaussian(prec, rhs, q.W_mean.col(f.index), q.W_cov[i], "w", f.index);
      return;
    }
    case Block::A: {
      if (model.frozen.A) return;
      Eigen::VectorXd rhs;
      const Eigen::MatrixXd prec = a_precision(q, f.index, model, &rhs);
      solve_gaussian(prec, rhs, q.A_mean.col(f.index), q.A_cov[i], "a", f.index);
      return;
    }
    case Block::Alpha: {
      if (model.frozen.alpha) return;
      const double eq = row_expected_quad(model.kernel, q.W_mean, q.W_cov, f.index);
      q.alpha[i] = {hp.q1 + lay.N / 2.0, 1.0 / hp.q2 + 0.5 * eq, false, 0.0};
      return;
    }
    case Block::Beta: {
      if (model.frozen.beta) return;
      const double eq = row_expected_quad(model.kernel, q.A_mean, q.A_cov, f.index);
      q.beta[i] = {hp.r1 + lay.N / 2.0, 1.0 / hp.r2 + 0.5 * eq, false, 0.0};
      return;
    }
    case Block::Lambda: {
      if (model.frozen.lambda) return;
      const double T_eff = static_cast<double>(model.stats.T() - lay.P);
      q.lambda[i] = {hp.u1 + T_eff / 2.0, 1.0 / hp.u2 + 0.5 * expected_Q(q, f.index, model.stats), false, 0.0};
      return;
    }
  }
}

std::vector<std::vector<int>> color_classes(const SpatialKernel& kernel) {
  const int N = static_cast<int>(kernel.size());
  std::vector<int> color(static_cast<std::size_t>(N), -1);
  std::vector<std::vector<int>> classes;
  std::vector<char> used;
  for (int n = 0; n < N; ++n) {
    used.assign(classes.size() + 1, 0);
    for (SparseRowMatrix::InnerIterator it(kernel.StS, n); it; ++it) {
      const int c = color[static_cast<std::size_t>(it.col())];
      if (it.col() != n && c >= 0) used[static_cast<std::size_t>(c)] = 1;
    }
    int c = 0;
    while (used[static_cast<std::size_t>(c)]) ++c;
    color[static_cast<std::size_t>(n)] = c;
    if (c == static_cast<int>(classes.size())) classes.emplace_back();
    classes[static_cast<std::size_t>(c)].push_back(n);
  }
  return classes;
}

namespace {

void update_voxel_block(VBPosterior& q, Block block, const VBModel& model, const VBConfig& cfg,
                        const std::vector<std::vector<int>>* classes) {
  const int N = q.layout.N;
  if (!cfg.colored || !classes) {
    for (int n = 0; n < N; ++n) vb_update_factor(q, {block, n}, model);
    return;
  }
  for (const auto& cls : *classes) {
    const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(cls.size())));
    if (workers == 1) {
      for (int n : cls) vb_update_factor(q, {block, n}, model);
      continue;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = static_cast<std::size_t>(w); j < cls.size(); j += static_cast<std::size_t>(workers))
            vb_update_factor(q, {block, cls[j]}, model);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
}

}  // namespace

void vb_sweep(VBPosterior& q, const VBModel& model, const VBConfig& cfg) {
  std::vector<std::vector<int>> classes;
  if (cfg.colored) classes = color_classes(model.kernel);
  update_voxel_block(q, Block::W, model, cfg, cfg.colored ? &classes : nullptr);
  update_voxel_block(q, Block::A, model, cfg, cfg.colored ? &classes : nullptr);
  for (int k = 0; k < q.layout.K; ++k) vb_update_factor(q, {Block::Alpha, k}, model);
  for (int p = 0; p < q.layout.P; ++p) vb_update_factor(q, {Block::Beta, p}, model);
  for (int n = 0; n < q.layout.N; ++n) vb_update_factor(q, {Block::Lambda, n}, model);
}

double expected_log_joint(const VBPosterior& q, const VBModel& model) {
  const Layout& lay = q.layout;
  const auto& hp = model.hp;
  const double T_eff = static_cast<double>(model.stats.T() - lay.P);
  std::vector<double> terms(static_cast<std::size_t>(lay.N));
  for (int n = 0; n < lay.N; ++n) {
    const auto& g = q.lambda[static_cast<std::size_t>(n)];
    terms[static_cast<std::size_t>(n)] = -0.5 * g.mean() * expected_Q(q, n, model.stats) +
                                         (T_eff / 2.0 + hp.u1 - 1.0) * g.mean_log() - g.mean() / hp.u2;
  }
  double total = pairwise_sum(terms);
  for (int k = 0; k < lay.K; ++k) {
    const auto& g = q.alpha[static_cast<std::size_t>(k)];
    total += -0.5 * g.mean() * row_expected_quad(model.kernel, q.W_mean, q.W_cov, k) +
             (lay.N / 2.0 + hp.q1 - 1.0) * g.mean_log() - g.mean() / hp.q2;
  }
  for (int p = 0; p < lay.P; ++p) {
    const auto& g = q.beta[static_cast<std::size_t>(p)];
    total += -0.5 * g.mean() * row_expected_quad(model.kernel, q.A_mean, q.A_cov, p) +
             (lay.N / 2.0 + hp.r1 - 1.0) * g.mean_log() - g.mean() / hp.r2;
  }
  return total;
}

double free_energy(const VBPosterior& q, const VBModel& model) {
  const Layout& lay = q.layout;
  std::vector<double> ent;
  ent.reserve(static_cast<std::size_t>(2 * lay.N + lay.K + lay.P));
  if (!model.frozen.W)
    for (const auto& c : q.W_cov) ent.push_back(gaussian_entropy(c));
  if (!model.frozen.A)
    for (const auto& c : q.A_cov) ent.push_back(gaussian_entropy(c));
  for (const auto* v : {&q.alpha, &q.beta, &q.lambda})
    for (const auto& g : *v) ent.push_back(g.entropy());
  return expected_log_joint(q, model) + pairwise_sum(ent);
}

PosteriorSummary vb_summary(const VBPosterior& q) {
  const Layout& lay = q.layout;
  PosteriorSummary s;
  s.method = "VB";
  s.layout = lay;
  const auto R = static_cast<Eigen::Index>(lay.dim());
  s.mean.resize(R);
  s.variance.resize(R);
  s.bmse = Eigen::VectorXd::Constant(R, std::numeric_limits<double>::quiet_NaN());
  for (int n = 0; n < lay.N; ++n) {
    const auto i = static_cast<std::size_t>(n);
    for (int k = 0; k < lay.K; ++k) {
      s.mean[static_cast<Eigen::Index>(lay.w(k, n))] = q.W_mean(k, n);
      s.variance[static_cast<Eigen::Index>(lay.w(k, n))] = q.W_cov[i](k, k);
    }
    for (int p = 0; p < lay.P; ++p) {
      s.mean[static_cast<Eigen::Index>(lay.a(p, n))] = q.A_mean(p, n);
      s.variance[static_cast<Eigen::Index>(lay.a(p, n))] = q.A_cov[i](p, p);
    }
    s.mean[static_cast<Eigen::Index>(lay.lambda(n))] = q.lambda[i].mean();
    s.variance[static_cast<Eigen::Index>(lay.lambda(n))] = q.lambda[i].variance();
  }
  for (int k = 0; k < lay.K; ++k) {
    s.mean[static_cast<Eigen::Index>(lay.alpha(k))] = q.alpha[static_cast<std::size_t>(k)].mean();
    s.variance[static_cast<Eigen::Index>(lay.alpha(k))] = q.alpha[static_cast<std::size_t>(k)].variance();
  }
  for (int p = 0; p < lay.P; ++p) {
    s.mean[static_cast<Eigen::Index>(lay.beta(p))] = q.beta[static_cast<std::size_t>(p)].mean();
    s.variance[static_cast<Eigen::Index>(lay.beta(p))] = q.beta[static_cast<std::size_t>(p)].variance();
  }
  return s;
}

VBFit run_vb(const Dataset& data, const SpatialKernel& kernel, const HyperPriors& hp, const VBConfig& cfg,
             const FrozenBlocks& frozen, const std::optional<ParamState>& init) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  cfg.validate();
  data.validate();
  hp.validate();
  const SuffStats stats = precompute_suffstats(data);
  const ParamState start = init ? *init : ols_init(data, kernel);
  const VBModel model{stats, kernel, hp, frozen};
  const auto t1 = clock::now();

  VBFit fit;
  fit.q = vb_initialize(model, start);
  double prev = free_energy(fit.q, model);
  fit.q.free_energy_trace.push_back(prev);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    vb_sweep(fit.q, model, cfg);
    const double cur = free_energy(fit.q, model);
    fit.q.free_energy_trace.push_back(cur);
    fit.iterations = it;
    fit.final_rel_change = std::abs(cur - prev) / std::max(std::abs(prev), 1e-300);
    if (cur < prev - 1e-8 * std::max(1.0, std::abs(prev)))
      fit.warnings.push_back("free energy decreased at iteration " + std::to_string(it));
    prev = cur;
    if (fit.final_rel_change < cfg.tol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged)
    fit.warnings.push_back("not converged after " + std::to_string(cfg.max_iter) +
                           " iterations (relative change " + format_double(fit.final_rel_change) + ")");
  fit.summary = vb_summary(fit.q);
  fit.seconds_precompute = std::chrono::duration<double>(t1 - t0).count();
  fit.seconds_ascent = std::chrono::duration<double>(clock::now() - t1).count();
  return fit;
}

}  // namespace glmar
