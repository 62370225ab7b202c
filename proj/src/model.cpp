#include "glmar/model.hpp"

#include "glmar/errors.hpp"
#include "glmar/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace glmar {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kPrecisionFloor = 1e-6;
constexpr double kPrecisionCeil = 1e6;

bool positive_finite(double x) { return x > 0.0 && std::isfinite(x); }

double clamp_precision(double x) {
  if (!std::isfinite(x)) return kPrecisionCeil;
  return std::clamp(x, kPrecisionFloor, kPrecisionCeil);
}

// y = StS * x for contiguous spans, using the CSR arrays directly.
void sparse_apply(const SparseRowMatrix& m, const double* x, double* y) {
  const auto* outer = m.outerIndexPtr();
  const auto* inner = m.innerIndexPtr();
  const auto* vals = m.valuePtr();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (auto j = outer[i]; j < outer[i + 1]; ++j) s += vals[j] * x[inner[j]];
    y[i] = s;
  }
}

}  // namespace

const char* block_name(Block block) {
  switch (block) {
    case Block::W: return "W";
    case Block::A: return "A";
    case Block::Alpha: return "alpha";
    case Block::Beta: return "beta";
    case Block::Lambda: return "lambda";
  }
  return "?";
}

void Dataset::validate() const {
  if (P < 1) throw DataError("AR order P must be >= 1");
  if (T() <= P) {
    throw DataError("series length T=" + std::to_string(T()) + " must exceed P=" +
                    std::to_string(P));
  }
  if (N() < 1) throw DataError("dataset has no voxels");
  if (K() < 1) throw DataError("design matrix has no columns");
  if (Xfull.rows() != Y.rows()) {
    throw DataError("design has " + std::to_string(Xfull.rows()) + " rows but series has T=" +
                    std::to_string(T()));
  }
  if (!regressor_names.empty() && static_cast<int>(regressor_names.size()) != K()) {
    throw DataError("regressor name count does not match design columns");
  }
  for (int n = 0; n < N(); ++n) {
    for (int t = 0; t < T(); ++t) {
      if (!std::isfinite(Y(t, n))) {
        throw DataError("non-finite response at voxel " + std::to_string(n) + ", time " +
                        std::to_string(t));
      }
    }
  }
  for (int t = 0; t < T(); ++t) {
    for (int k = 0; k < K(); ++k) {
      if (!std::isfinite(Xfull(t, k))) {
        throw DataError("non-finite design value at time " + std::to_string(t) + ", column " +
                        std::to_string(k));
      }
    }
  }
}

void HyperPriors::validate() const {
  for (double v : {q1, q2, r1, r2, u1, u2}) {
    if (!positive_finite(v)) throw std::invalid_argument("hyperprior values must be positive");
  }
}

Layout::Coordinate Layout::decode(std::size_t index) const {
  const std::size_t kn = static_cast<std::size_t>(K) * N;
  const std::size_t pn = static_cast<std::size_t>(P) * N;
  if (index < kn) return {Block::W, static_cast<int>(index / N), static_cast<int>(index % N)};
  index -= kn;
  if (index < pn) return {Block::A, static_cast<int>(index / N), static_cast<int>(index % N)};
  index -= pn;
  if (index < static_cast<std::size_t>(K)) return {Block::Alpha, static_cast<int>(index), -1};
  index -= K;
  if (index < static_cast<std::size_t>(P)) return {Block::Beta, static_cast<int>(index), -1};
  index -= P;
  if (index < static_cast<std::size_t>(N)) return {Block::Lambda, 0, static_cast<int>(index)};
  throw std::out_of_range("coordinate index beyond parameter dimension");
}

std::pair<std::size_t, std::size_t> Layout::block_range(Block block) const {
  switch (block) {
    case Block::W: return {0, static_cast<std::size_t>(K) * N};
    case Block::A: return {a(0, 0), static_cast<std::size_t>(P) * N};
    case Block::Alpha: return {alpha(0), static_cast<std::size_t>(K)};
    case Block::Beta: return {beta(0), static_cast<std::size_t>(P)};
    case Block::Lambda: return {lambda(0), static_cast<std::size_t>(N)};
  }
  return {0, 0};
}

bool ParamState::valid() const {
  auto all_pos = [](const Eigen::VectorXd& v) {
    return std::all_of(v.data(), v.data() + v.size(), positive_finite);
  };
  return all_pos(alpha) && all_pos(beta) && all_pos(lambda);
}

Eigen::VectorXd ParamState::flatten() const {
  const Layout lay = layout();
  Eigen::VectorXd theta(lay.dim());
  for (int k = 0; k < lay.K; ++k)
    for (int n = 0; n < lay.N; ++n) theta[lay.w(k, n)] = W(k, n);
  for (int p = 0; p < lay.P; ++p)
    for (int n = 0; n < lay.N; ++n) theta[lay.a(p, n)] = A(p, n);
  for (int k = 0; k < lay.K; ++k) theta[lay.alpha(k)] = alpha[k];
  for (int p = 0; p < lay.P; ++p) theta[lay.beta(p)] = beta[p];
  for (int n = 0; n < lay.N; ++n) theta[lay.lambda(n)] = lambda[n];
  return theta;
}

ParamState ParamState::unflatten(const Layout& lay, std::span<const double> theta) {
  if (theta.size() != lay.dim()) {
    throw std::invalid_argument("parameter vector has length " + std::to_string(theta.size()) +
                                ", expected " + std::to_string(lay.dim()));
  }
  ParamState s = zeros(lay);
  for (int k = 0; k < lay.K; ++k)
    for (int n = 0; n < lay.N; ++n) s.W(k, n) = theta[lay.w(k, n)];
  for (int p = 0; p < lay.P; ++p)
    for (int n = 0; n < lay.N; ++n) s.A(p, n) = theta[lay.a(p, n)];
  for (int k = 0; k < lay.K; ++k) s.alpha[k] = theta[lay.alpha(k)];
  for (int p = 0; p < lay.P; ++p) s.beta[p] = theta[lay.beta(p)];
  for (int n = 0; n < lay.N; ++n) s.lambda[n] = theta[lay.lambda(n)];
  return s;
}

ParamState ParamState::zeros(const Layout& lay) {
  ParamState s;
  s.W = Eigen::MatrixXd::Zero(lay.K, lay.N);
  s.A = Eigen::MatrixXd::Zero(lay.P, lay.N);
  s.alpha = Eigen::VectorXd::Zero(lay.K);
  s.beta = Eigen::VectorXd::Zero(lay.P);
  s.lambda = Eigen::VectorXd::Zero(lay.N);
  return s;
}

std::vector<bool> FrozenBlocks::mask(const Layout& lay) const {
  std::vector<bool> m(lay.dim(), false);
  auto set = [&](Block b, bool on) {
    if (!on) return;
    const auto [start, len] = lay.block_range(b);
    std::fill(m.begin() + static_cast<std::ptrdiff_t>(start),
              m.begin() + static_cast<std::ptrdiff_t>(start + len), true);
  };
  set(Block::W, W);
  set(Block::A, A);
  set(Block::Alpha, alpha);
  set(Block::Beta, beta);
  set(Block::Lambda, lambda);
  return m;
}

SuffStats::SuffStats(int T, int N, int K, int P)
    : T_(T), N_(N), K_(K), P_(P),
      cyy_(static_cast<std::size_t>(N) * (P + 1) * (P + 1), 0.0),
      cyx_(static_cast<std::size_t>(N) * (P + 1) * (P + 1) * K, 0.0),
      cxx_(static_cast<std::size_t>(P + 1) * (P + 1) * K * K, 0.0) {}

SuffStats precompute_suffstats(const Dataset& data) {
  data.validate();
  const int T = data.T(), N = data.N(), K = data.K(), P = data.P;
  SuffStats s(T, N, K, P);
  const auto& X = data.Xfull;

  for (int p = 0; p <= P; ++p) {
    for (int q = 0; q <= P; ++q) {
      double* c = s.cxx(p, q);
      for (int t = P; t < T; ++t) {
        for (int k = 0; k < K; ++k) {
          const double xp = X(t - p, k);
          for (int k2 = 0; k2 < K; ++k2) c[k * K + k2] += xp * X(t - q, k2);
        }
      }
    }
  }

  for (int n = 0; n < N; ++n) {
    const double* y = data.Y.col(n).data();
    for (int p = 0; p <= P; ++p) {
      for (int q = 0; q <= P; ++q) {
        double cyy = 0.0;
        double* cyx = s.cyx(n, p, q);
        for (int t = P; t < T; ++t) {
          const double yp = y[t - p];
          cyy += yp * y[t - q];
          for (int k = 0; k < K; ++k) cyx[k] += yp * X(t - q, k);
        }
        s.cyy(n, p, q) = cyy;
      }
    }
  }
  return s;
}

Eigen::MatrixXd residual_form(const SuffStats& stats, int n, std::span<const double> w_n) {
  const int K = stats.K(), lags = stats.lags();
  if (static_cast<int>(w_n.size()) != K) throw std::invalid_argument("w_n must have length K");
  Eigen::Map<const Eigen::VectorXd> w(w_n.data(), K);
  Eigen::MatrixXd F(lags, lags);
  for (int p = 0; p < lags; ++p) {
    for (int q = 0; q < lags; ++q) {
      Eigen::Map<const Eigen::VectorXd> cyx_pq(stats.cyx(n, p, q), K);
      Eigen::Map<const Eigen::VectorXd> cyx_qp(stats.cyx(n, q, p), K);
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
          cxx(stats.cxx(p, q), K, K);
      F(p, q) = stats.cyy(n, p, q) - cyx_pq.dot(w) - cyx_qp.dot(w) + w.dot(cxx * w);
    }
  }
  return F;
}

std::vector<Eigen::MatrixXd> residual_form_derivative(const SuffStats& stats, int n,
                                                      std::span<const double> w_n) {
  const int K = stats.K(), lags = stats.lags();
  if (static_cast<int>(w_n.size()) != K) throw std::invalid_argument("w_n must have length K");
  Eigen::Map<const Eigen::VectorXd> w(w_n.data(), K);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  std::vector<Eigen::MatrixXd> G(K, Eigen::MatrixXd(lags, lags));
  for (int p = 0; p < lags; ++p) {
    for (int q = 0; q < lags; ++q) {
      Eigen::Map<const RowMat> cxx_pq(stats.cxx(p, q), K, K);
      Eigen::Map<const RowMat> cxx_qp(stats.cxx(q, p), K, K);
      const Eigen::VectorXd quad = cxx_pq * w + cxx_qp * w;
      for (int k = 0; k < K; ++k) {
        G[k](p, q) = -stats.cyx(n, p, q)[k] - stats.cyx(n, q, p)[k] + quad[k];
      }
    }
  }
  return G;
}

Eigen::VectorXd ar_star(std::span<const double> a_n) {
  Eigen::VectorXd s(a_n.size() + 1);
  s[0] = -1.0;
  for (std::size_t p = 0; p < a_n.size(); ++p) s[p + 1] = a_n[p];
  return s;
}

GlmArPosterior::GlmArPosterior(const SuffStats& stats, const SpatialKernel& kernel, HyperPriors hp)
    : stats_(&stats), kernel_(&kernel), hp_(hp),
      layout_{stats.N(), stats.K(), stats.P()} {
  hp_.validate();
  if (kernel.size() != static_cast<std::size_t>(stats.N())) {
    throw std::invalid_argument("kernel size does not match voxel count");
  }
}

double GlmArPosterior::log_density(std::span<const double> theta) const {
  return evaluate(theta, {}, false);
}

double GlmArPosterior::log_density_gradient(std::span<const double> theta,
                                            std::span<double> grad) const {
  return evaluate(theta, grad, true);
}

double GlmArPosterior::evaluate(std::span<const double> theta, std::span<double> grad,
                                bool want_grad) const {
  const Layout& lay = layout_;
  if (theta.size() != lay.dim()) throw std::invalid_argument("theta has wrong dimension");
  if (want_grad && grad.size() != lay.dim()) throw std::invalid_argument("grad has wrong dimension");
  const int N = lay.N, K = lay.K, P = lay.P, lags = P + 1;
  const SuffStats& st = *stats_;

  for (int k = 0; k < K; ++k)
    if (!positive_finite(theta[lay.alpha(k)])) return kNegInf;
  for (int p = 0; p < P; ++p)
    if (!positive_finite(theta[lay.beta(p)])) return kNegInf;
  for (int n = 0; n < N; ++n)
    if (!positive_finite(theta[lay.lambda(n)])) return kNegInf;

  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);

  thread_local std::vector<double> terms, scratch;
  terms.assign(static_cast<std::size_t>(N), 0.0);
  // Per voxel: w (K), a* (lags), B (lags^2), CxW (lags^2 * K), F (lags^2), Fa (lags), gw (K).
  const std::size_t nscratch =
      static_cast<std::size_t>(K + lags + lags * lags + lags * lags * K + lags * lags + lags + K);
  scratch.resize(nscratch);
  double* w = scratch.data();
  double* astar = w + K;
  double* B = astar + lags;
  double* CxW = B + lags * lags;
  double* F = CxW + lags * lags * K;
  double* Fa = F + lags * lags;
  double* gw = Fa + lags;

  const double n_eff = static_cast<double>(st.T() - P);
  const double loglam_coef = n_eff / 2.0 + hp_.u1 - 1.0;

  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < K; ++k) w[k] = theta[lay.w(k, n)];
    astar[0] = -1.0;
    for (int p = 0; p < P; ++p) astar[p + 1] = theta[lay.a(p, n)];
    const double lam = theta[lay.lambda(n)];

    for (int p = 0; p < lags; ++p) {
      for (int q = 0; q < lags; ++q) {
        const double* cyx = st.cyx(n, p, q);
        const double* cxx = st.cxx(p, q);
        double* cw = CxW + (p * lags + q) * K;
        double b = 0.0;
        for (int k = 0; k < K; ++k) {
          b += cyx[k] * w[k];
          double s = 0.0;
          for (int k2 = 0; k2 < K; ++k2) s += cxx[k * K + k2] * w[k2];
          cw[k] = s;
        }
        B[p * lags + q] = b;
      }
    }
    double Q = 0.0;
    for (int p = 0; p < lags; ++p) {
      double fa = 0.0;
      for (int q = 0; q < lags; ++q) {
        const double* cw = CxW + (p * lags + q) * K;
        double wcw = 0.0;
        for (int k = 0; k < K; ++k) wcw += w[k] * cw[k];
        const double f = st.cyy(n, p, q) - B[p * lags + q] - B[q * lags + p] + wcw;
        F[p * lags + q] = f;
        fa += f * astar[q];
      }
      Fa[p] = fa;
      Q += astar[p] * fa;
    }
    const double loglam = std::log(lam);
    terms[n] = -0.5 * lam * Q + loglam_coef * loglam - lam / hp_.u2;

    if (want_grad) {
      for (int k = 0; k < K; ++k) gw[k] = 0.0;
      for (int p = 0; p < lags; ++p) {
        for (int q = 0; q < lags; ++q) {
          const double c = astar[p] * astar[q];
          const double* cyx = st.cyx(n, p, q);
          const double* cw = CxW + (p * lags + q) * K;
          for (int k = 0; k < K; ++k) gw[k] += c * (cyx[k] - cw[k]);
        }
      }
      for (int k = 0; k < K; ++k) grad[lay.w(k, n)] = lam * gw[k];
      for (int p = 0; p < P; ++p) grad[lay.a(p, n)] = -lam * Fa[p + 1];
      grad[lay.lambda(n)] = -0.5 * Q + loglam_coef / lam - 1.0 / hp_.u2;
    }
  }
  double total = pairwise_sum(terms);

  // Spatial priors on the rows of W and A, plus Gamma hyperpriors.
  thread_local std::vector<double> Sv, prod;
  Sv.resize(static_cast<std::size_t>(N));
  prod.resize(static_cast<std::size_t>(N));
  auto row_prior = [&](std::size_t row_start, double prec, double shape, double scale,
                       std::size_t prec_index) {
    const double* v = theta.data() + row_start;
    sparse_apply(kernel_->StS, v, Sv.data());
    for (int n = 0; n < N; ++n) prod[n] = v[n] * Sv[n];
    const double quad = pairwise_sum(prod);
    const double coef = N / 2.0 + shape - 1.0;
    if (want_grad) {
      double* g = grad.data() + row_start;
      for (int n = 0; n < N; ++n) g[n] -= prec * Sv[n];
      grad[prec_index] = -0.5 * quad + coef / prec - 1.0 / scale;
    }
    return -0.5 * prec * quad + coef * std::log(prec) - prec / scale;
  };
  for (int k = 0; k < K; ++k) {
    total += row_prior(lay.w(k, 0), theta[lay.alpha(k)], hp_.q1, hp_.q2, lay.alpha(k));
  }
  for (int p = 0; p < P; ++p) {
    total += row_prior(lay.a(p, 0), theta[lay.beta(p)], hp_.r1, hp_.r2, lay.beta(p));
  }
  return total;
}

namespace {

// Precision coordinates (alpha, beta, lambda) are the tail of the vector.
std::size_t precision_start(const Layout& lay) { return lay.alpha(0); }

}  // namespace

double LogScaleGlmArPosterior::log_density(std::span<const double> u) const {
  thread_local std::vector<double> theta;
  theta.assign(u.begin(), u.end());
  const std::size_t start = precision_start(base_->layout());
  double jac = 0.0;
  for (std::size_t i = start; i < theta.size(); ++i) {
    jac += theta[i];
    theta[i] = std::exp(theta[i]);
  }
  const double lp = base_->log_density(theta);
  return std::isfinite(lp) ? lp + jac : lp;
}

double LogScaleGlmArPosterior::log_density_gradient(std::span<const double> u,
                                                    std::span<double> grad) const {
  thread_local std::vector<double> theta;
  theta.assign(u.begin(), u.end());
  const std::size_t start = precision_start(base_->layout());
  double jac = 0.0;
  for (std::size_t i = start; i < theta.size(); ++i) {
    jac += theta[i];
    theta[i] = std::exp(theta[i]);
  }
  const double lp = base_->log_density_gradient(theta, grad);
  if (!std::isfinite(lp)) return lp;
  for (std::size_t i = start; i < theta.size(); ++i) grad[i] = grad[i] * theta[i] + 1.0;
  return lp + jac;
}

void LogScaleGlmArPosterior::to_natural(std::span<double> u) const {
  for (std::size_t i = precision_start(base_->layout()); i < u.size(); ++i) u[i] = std::exp(u[i]);
}

void LogScaleGlmArPosterior::from_natural(std::span<double> theta) const {
  for (std::size_t i = precision_start(base_->layout()); i < theta.size(); ++i) {
    theta[i] = std::log(theta[i]);
  }
}

double log_posterior(const ParamState& state, const SuffStats& stats,
                     const SpatialKernel& kernel, const HyperPriors& hp) {
  const GlmArPosterior post(stats, kernel, hp);
  const Eigen::VectorXd theta = state.flatten();
  return post.log_density(as_span(theta));
}

Eigen::VectorXd grad_log_posterior(const ParamState& state, const SuffStats& stats,
                                   const SpatialKernel& kernel, const HyperPriors& hp) {
  if (!state.valid()) {
    throw std::domain_error("gradient undefined: nonpositive precision in state");
  }
  const GlmArPosterior post(stats, kernel, hp);
  const Eigen::VectorXd theta = state.flatten();
  Eigen::VectorXd grad(theta.size());
  post.log_density_gradient(as_span(theta), as_span(grad));
  return grad;
}

ParamState ols_init(const Dataset& data, const SpatialKernel& kernel) {
  data.validate();
  const int T = data.T(), N = data.N(), K = data.K(), P = data.P;
  if (kernel.size() != static_cast<std::size_t>(N)) {
    throw std::invalid_argument("kernel size does not match voxel count");
  }
  const Eigen::MatrixXd X = data.trimmed_design();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < K) {
    std::string cols;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = qr.rank(); i < K; ++i) {
      const int c = perm[i];
      if (!cols.empty()) cols += ", ";
      cols += data.regressor_names.empty() ? std::to_string(c)
                                           : data.regressor_names[c] + " (" + std::to_string(c) + ")";
    }
    throw DataError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " < K=" +
                    std::to_string(K) + "); dependent columns: " + cols);
  }

  ParamState s = ParamState::zeros({N, K, P});
  s.W = qr.solve(data.Y.bottomRows(T - P));

  const Eigen::MatrixXd E = data.Y - data.Xfull * s.W;
  const double n_eff = static_cast<double>(T - P);
  for (int n = 0; n < N; ++n) {
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(P + 1, P + 1);
    for (int t = P; t < T; ++t) {
      for (int p = 0; p <= P; ++p)
        for (int q = 0; q <= P; ++q) F(p, q) += E(t - p, n) * E(t - q, n);
    }
    const Eigen::MatrixXd F11 = F.bottomRightCorner(P, P);
    const Eigen::VectorXd f0 = F.bottomLeftCorner(P, 1);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(P);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(F11);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() &&
        F11.diagonal().minCoeff() > 1e-12 * std::max(1.0, F(0, 0))) {
      a = ldlt.solve(f0);
      if (!a.allFinite()) a.setZero();
    }
    s.A.col(n) = a;
    const Eigen::VectorXd as = ar_star({a.data(), static_cast<std::size_t>(P)});
    const double Q = as.dot(F * as);
    s.lambda[n] = Q > 0.0 ? clamp_precision(n_eff / Q) : kPrecisionCeil;
  }

  auto row_precision = [&](const Eigen::MatrixXd& M, int r) {
    const Eigen::VectorXd row = M.row(r).transpose();
    const double quad = quad_form(kernel, {row.data(), static_cast<std::size_t>(row.size())});
    return quad > 0.0 ? clamp_precision(N / quad) : kPrecisionCeil;
  };
  for (int k = 0; k < K; ++k) s.alpha[k] = row_precision(s.W, k);
  for (int p = 0; p < P; ++p) s.beta[p] = row_precision(s.A, p);
  return s;
}

}  // namespace glmar
