#include "doctest.h"

#include "glmar/errors.hpp"
#include "glmar/model.hpp"
#include "glmar/numeric.hpp"
#include "oracles/oracles.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

using namespace glmar;

namespace {

double rel_err(double got, double expected) {
  return std::abs(got - expected) / std::max(1.0, std::abs(expected));
}

}  // namespace

TEST_CASE("sufficient statistics on a hand-sized series") {
  Dataset d;
  d.P = 1;
  d.Y.resize(3, 1);
  d.Y << 1, 2, 3;
  d.Xfull = Eigen::MatrixXd::Ones(3, 1);
  const auto s = precompute_suffstats(d);
  CHECK(s.cyy(0, 0, 0) == 13.0);
  CHECK(s.cyy(0, 0, 1) == 8.0);
  CHECK(s.cyy(0, 1, 0) == 8.0);
  CHECK(s.cyy(0, 1, 1) == 5.0);
  // Cyx(p,q) = sum_{t=1,2} y_{t-p} * 1
  CHECK(s.cyx(0, 0, 0)[0] == 5.0);
  CHECK(s.cyx(0, 1, 0)[0] == 3.0);
  CHECK(s.cxx(0, 1)[0] == 2.0);
}

TEST_CASE("zero data gives zero response statistics") {
  std::mt19937_64 rng(5);
  auto inst = oracle::random_instance(rng, 20, 4, 3, 2);
  const auto before = precompute_suffstats(inst.data);
  inst.data.Y.setZero();
  const auto s = precompute_suffstats(inst.data);
  for (int n = 0; n < 4; ++n) {
    for (int p = 0; p <= 2; ++p) {
      for (int q = 0; q <= 2; ++q) {
        CHECK(s.cyy(n, p, q) == 0.0);
        for (int k = 0; k < 3; ++k) CHECK(s.cyx(n, p, q)[k] == 0.0);
      }
    }
  }
  for (int p = 0; p <= 2; ++p)
    for (int q = 0; q <= 2; ++q)
      for (int i = 0; i < 9; ++i) CHECK(s.cxx(p, q)[i] == before.cxx(p, q)[i]);
}

TEST_CASE("suffstats symmetry invariants") {
  std::mt19937_64 rng(8);
  const auto inst = oracle::random_instance(rng, 30, 5, 3, 3);
  const auto s = precompute_suffstats(inst.data);
  for (int p = 0; p <= 3; ++p) {
    for (int q = 0; q <= 3; ++q) {
      for (int n = 0; n < 5; ++n) CHECK(s.cyy(n, p, q) == s.cyy(n, q, p));
      for (int k = 0; k < 3; ++k)
        for (int k2 = 0; k2 < 3; ++k2) CHECK(s.cxx(p, q)[k * 3 + k2] == s.cxx(q, p)[k2 * 3 + k]);
    }
  }
}

TEST_CASE("non-finite data is rejected with its location") {
  Dataset d;
  d.P = 1;
  d.Y = Eigen::MatrixXd::Zero(5, 2);
  d.Y(3, 1) = std::numeric_limits<double>::quiet_NaN();
  d.Xfull = Eigen::MatrixXd::Ones(5, 1);
  CHECK_THROWS_WITH_AS(precompute_suffstats(d), doctest::Contains("voxel 1, time 3"), DataError);
  d.Y(3, 1) = 0.0;
  d.P = 5;
  CHECK_THROWS_AS(precompute_suffstats(d), DataError);
}

TEST_CASE("residual form from suffstats matches direct residual sums") {
  std::mt19937_64 rng(21);
  const auto inst = oracle::random_instance(rng, 64, 20, 3, 2);
  const auto s = precompute_suffstats(inst.data);
  for (int n = 0; n < 20; ++n) {
    const Eigen::VectorXd w = inst.state.W.col(n);
    const Eigen::MatrixXd fast = residual_form(s, n, {w.data(), 3});
    const Eigen::MatrixXd direct = oracle::direct_residual_form(inst.data, n, w);
    CHECK((fast - direct).norm() <= 1e-10 * direct.norm());
    // positive semidefinite: a*^T F a* >= 0
    std::normal_distribution<double> norm;
    for (int r = 0; r < 10; ++r) {
      Eigen::VectorXd a(3);
      for (auto& x : a) x = norm(rng);
      CHECK(a.dot(fast * a) >= -1e-9 * fast.norm());
    }
  }
}

TEST_CASE("dF/dw matches finite differences of F") {
  std::mt19937_64 rng(4);
  const auto inst = oracle::random_instance(rng, 40, 3, 4, 2);
  const auto s = precompute_suffstats(inst.data);
  const Eigen::VectorXd w = inst.state.W.col(1);
  const auto G = residual_form_derivative(s, 1, {w.data(), 4});
  const double h = 1e-5;
  for (int k = 0; k < 4; ++k) {
    Eigen::VectorXd wp = w, wm = w;
    wp[k] += h;
    wm[k] -= h;
    const Eigen::MatrixXd fd =
        (residual_form(s, 1, {wp.data(), 4}) - residual_form(s, 1, {wm.data(), 4})) / (2 * h);
    CHECK((G[k] - fd).norm() <= 1e-6 * std::max(1.0, fd.norm()));
  }
}

TEST_CASE("log posterior with zero residual") {
  const int T = 12, N = 3, K = 2, P = 1;
  Dataset d;
  d.P = P;
  d.Y = Eigen::MatrixXd::Zero(T, N);
  d.Xfull = Eigen::MatrixXd::Random(T, K);
  const auto kernel = build_kernel(Mask::full({1, 3}), 2);
  const auto s = precompute_suffstats(d);
  HyperPriors hp;
  ParamState st = ParamState::zeros({N, K, P});
  st.alpha << 1.5, 0.7;
  st.beta << 2.0;
  st.lambda << 0.3, 1.0, 4.0;
  double expected = 0.0;
  for (int n = 0; n < N; ++n) {
    expected += 0.5 * (T - P) * std::log(st.lambda[n]);
    expected += (hp.u1 - 1) * std::log(st.lambda[n]) - st.lambda[n] / hp.u2;
  }
  for (int k = 0; k < K; ++k) expected += (N / 2.0 + hp.q1 - 1) * std::log(st.alpha[k]) - st.alpha[k] / hp.q2;
  expected += (N / 2.0 + hp.r1 - 1) * std::log(st.beta[0]) - st.beta[0] / hp.r2;
  CHECK(log_posterior(st, s, kernel, hp) == doctest::Approx(expected).epsilon(1e-14));

  // dlog p / dlambda_n with W = 0, A = 0
  const auto g = grad_log_posterior(st, s, kernel, hp);
  const Layout lay = st.layout();
  for (int n = 0; n < N; ++n) {
    const double expect =
        -s.cyy(n, 0, 0) / 2 + ((T - P) / 2.0 + hp.u1 - 1) / st.lambda[n] - 1 / hp.u2;
    CHECK(g[lay.lambda(n)] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("fast log posterior equals the direct time-loop evaluation") {
  std::mt19937_64 rng(99);
  HyperPriors hp;
  for (int rep = 0; rep < 30; ++rep) {
    std::uniform_int_distribution<int> Td(10, 64), Nd(1, 50), Kd(1, 5), Pd(1, 3);
    const int P = Pd(rng), T = std::max(Td(rng), P + 2);
    const auto inst = oracle::random_instance(rng, T, Nd(rng), Kd(rng), P);
    const auto kernel = build_kernel(inst.mask, 2);
    const auto dense = oracle::dense_kernel(inst.mask);
    const auto s = precompute_suffstats(inst.data);
    const double fast = log_posterior(inst.state, s, kernel, hp);
    const double direct = oracle::direct_log_posterior(inst.data, inst.state, dense.StS, hp);
    CHECK(std::abs(fast - direct) <= 1e-10 * (1.0 + std::abs(direct)));
  }
}

TEST_CASE("doubling alpha with W = 0") {
  std::mt19937_64 rng(17);
  auto inst = oracle::random_instance(rng, 30, 9, 3, 1);
  inst.state.W.setZero();
  const auto kernel = build_kernel(inst.mask, 2);
  const auto s = precompute_suffstats(inst.data);
  HyperPriors hp;
  const double base = log_posterior(inst.state, s, kernel, hp);
  ParamState doubled = inst.state;
  doubled.alpha *= 2.0;
  const int N = 9, K = 3;
  const double expected_change =
      (N / 2.0 + hp.q1 - 1) * K * std::log(2.0) - inst.state.alpha.sum() / hp.q2;
  CHECK(log_posterior(doubled, s, kernel, hp) - base ==
        doctest::Approx(expected_change).epsilon(1e-10));
}

TEST_CASE("invalid states") {
  std::mt19937_64 rng(2);
  auto inst = oracle::random_instance(rng, 20, 4, 2, 1);
  const auto kernel = build_kernel(inst.mask, 2);
  const auto s = precompute_suffstats(inst.data);
  HyperPriors hp;
  for (int which = 0; which < 3; ++which) {
    ParamState st = inst.state;
    if (which == 0) st.alpha[1] = 0.0;
    if (which == 1) st.beta[0] = -1.0;
    if (which == 2) st.lambda[3] = -0.5;
    CHECK(log_posterior(st, s, kernel, hp) == -std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(grad_log_posterior(st, s, kernel, hp), std::domain_error);
  }
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(123);
  HyperPriors hp;
  for (int rep = 0; rep < 5; ++rep) {
    const auto inst = oracle::random_instance(rng, 40, 6, 3, 2);
    const auto kernel = build_kernel(inst.mask, 2);
    const auto s = precompute_suffstats(inst.data);
    const Layout lay = inst.state.layout();
    const auto g = grad_log_posterior(inst.state, s, kernel, hp);
    const auto fd = oracle::central_difference(
        [&](const Eigen::VectorXd& x) {
          return log_posterior(ParamState::unflatten(lay, as_span(x)), s, kernel, hp);
        },
        inst.state.flatten(), 1e-5);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) worst = std::max(worst, rel_err(g[i], fd[i]));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("gradient vanishes at the single-voxel conditional mode") {
  // N = 1, A = 0: the W block of the gradient is
  // lambda X^T (y - X w) - alpha .* (StS)_00 w, zero at the solution of the
  // normal equations below.
  std::mt19937_64 rng(6);
  auto inst = oracle::random_instance(rng, 50, 1, 3, 1);
  inst.state.A.setZero();
  const auto kernel = build_kernel(inst.mask, 2);
  const auto s = precompute_suffstats(inst.data);
  const Eigen::MatrixXd X = inst.data.trimmed_design();
  const Eigen::VectorXd y = inst.data.Y.col(0).tail(49);
  const double lam = inst.state.lambda[0];
  Eigen::MatrixXd M = lam * X.transpose() * X;
  for (int k = 0; k < 3; ++k) M(k, k) += inst.state.alpha[k] * 16.0;
  inst.state.W.col(0) = M.ldlt().solve(lam * X.transpose() * y);
  const auto g = grad_log_posterior(inst.state, s, kernel, HyperPriors{});
  for (int k = 0; k < 3; ++k) CHECK(std::abs(g[k]) < 1e-8);
}

TEST_CASE("flatten and unflatten round trip exactly") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> norm;
  for (int rep = 0; rep < 20; ++rep) {
    const Layout lay{1 + rep % 7, 1 + rep % 4, 1 + rep % 3};
    CHECK(lay.dim() == static_cast<std::size_t>((lay.K + lay.P + 1) * lay.N + lay.K + lay.P));
    Eigen::VectorXd v(lay.dim());
    for (auto& x : v) x = norm(rng);
    CHECK(ParamState::unflatten(lay, as_span(v)).flatten() == v);
    for (std::size_t i = 0; i < lay.dim(); ++i) {
      const auto c = lay.decode(i);
      std::size_t back = 0;
      switch (c.block) {
        case Block::W: back = lay.w(c.row, c.voxel); break;
        case Block::A: back = lay.a(c.row, c.voxel); break;
        case Block::Alpha: back = lay.alpha(c.row); break;
        case Block::Beta: back = lay.beta(c.row); break;
        case Block::Lambda: back = lay.lambda(c.voxel); break;
      }
      CHECK(back == i);
    }
  }
}

TEST_CASE("log posterior is invariant to voxel relabeling") {
  std::mt19937_64 rng(77);
  const auto inst = oracle::random_instance(rng, 30, 12, 2, 2);
  const auto kernel = build_kernel(inst.mask, 2);
  HyperPriors hp;
  const double base = log_posterior(inst.state, precompute_suffstats(inst.data), kernel, hp);

  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> Pm(12);
  for (int i = 0; i < 12; ++i) Pm.indices()[i] = perm[i];

  SpatialKernel permuted;
  permuted.deg = kernel.deg;
  permuted.S = (Pm * Eigen::MatrixXd(kernel.S) * Pm.transpose()).sparseView();
  permuted.StS = (Pm * Eigen::MatrixXd(kernel.StS) * Pm.transpose()).sparseView();
  permuted.StS_diag = permuted.StS.diagonal();

  Dataset d = inst.data;
  d.Y = inst.data.Y * Pm.transpose();
  ParamState st = inst.state;
  st.W = inst.state.W * Pm.transpose();
  st.A = inst.state.A * Pm.transpose();
  st.lambda = Pm * inst.state.lambda;
  const double relabeled = log_posterior(st, precompute_suffstats(d), permuted, hp);
  CHECK(std::abs(relabeled - base) <= 1e-10 * (1 + std::abs(base)));
}

TEST_CASE("log-scale target gradient") {
  std::mt19937_64 rng(12);
  const auto inst = oracle::random_instance(rng, 30, 5, 2, 1);
  const auto kernel = build_kernel(inst.mask, 2);
  const auto s = precompute_suffstats(inst.data);
  const GlmArPosterior base(s, kernel, HyperPriors{});
  const LogScaleGlmArPosterior logt(base);
  Eigen::VectorXd u = inst.state.flatten();
  logt.from_natural(as_span(u));
  Eigen::VectorXd g(u.size());
  logt.log_density_gradient(as_span(u), as_span(g));
  const auto fd = oracle::central_difference(
      [&](const Eigen::VectorXd& x) { return logt.log_density(as_span(x)); }, u, 1e-5);
  for (Eigen::Index i = 0; i < u.size(); ++i) CHECK(rel_err(g[i], fd[i]) < 1e-5);
  Eigen::VectorXd back = u;
  logt.to_natural(as_span(back));
  CHECK((back - inst.state.flatten()).norm() < 1e-12 * back.norm());
}

TEST_CASE("OLS initialisation") {
  SUBCASE("noiseless data recovers W") {
    std::mt19937_64 rng(10);
    auto inst = oracle::random_instance(rng, 60, 8, 4, 1);
    Eigen::MatrixXd W = Eigen::MatrixXd::Random(4, 8);
    inst.data.Y = inst.data.Xfull * W;
    const auto kernel = build_kernel(inst.mask, 2);
    const auto st = ols_init(inst.data, kernel);
    CHECK((st.W - W).norm() <= 1e-8 * W.norm());
    CHECK(st.valid());
  }
  SUBCASE("constant series") {
    Dataset d;
    d.P = 1;
    d.Xfull.resize(20, 3);
    d.Xfull.col(0) = Eigen::VectorXd::LinSpaced(20, -1, 1);
    d.Xfull.col(1) = Eigen::VectorXd::LinSpaced(20, 0, 1).array().square();
    d.Xfull.col(2).setOnes();
    d.Y = Eigen::MatrixXd::Constant(20, 2, 5.0);
    const auto st = ols_init(d, build_kernel(Mask::full({1, 2}), 2));
    for (int n = 0; n < 2; ++n) {
      CHECK(st.W(2, n) == doctest::Approx(5.0).epsilon(1e-10));
      CHECK(std::abs(st.W(0, n)) < 1e-10);
      CHECK(std::abs(st.W(1, n)) < 1e-10);
    }
  }
  SUBCASE("random data has positive finite residual variance everywhere") {
    std::mt19937_64 rng(14);
    const auto inst = oracle::random_instance(rng, 80, 30, 3, 2);
    const auto st = ols_init(inst.data, build_kernel(inst.mask, 2));
    const auto s = precompute_suffstats(inst.data);
    for (int n = 0; n < 30; ++n) {
      const Eigen::VectorXd w = st.W.col(n);
      const Eigen::MatrixXd F = oracle::direct_residual_form(inst.data, n, w);
      const Eigen::VectorXd a = st.A.col(n);
      const Eigen::VectorXd as = ar_star({a.data(), 2});
      const double var = as.dot(F * as) / (80 - 2);
      CHECK(var > 0.0);
      CHECK(std::isfinite(var));
      CHECK(st.lambda[n] == doctest::Approx(1.0 / var).epsilon(1e-9));
      (void)s;
    }
    CHECK(st.valid());
  }
  SUBCASE("rank-deficient design names the dependent column") {
    Dataset d;
    d.P = 1;
    d.Xfull.resize(15, 3);
    d.Xfull.col(0).setOnes();
    d.Xfull.col(1) = Eigen::VectorXd::LinSpaced(15, 0, 1);
    d.Xfull.col(2) = 2.0 * d.Xfull.col(0);
    d.regressor_names = {"const", "ramp", "twice"};
    d.Y = Eigen::MatrixXd::Random(15, 2);
    CHECK_THROWS_WITH_AS(ols_init(d, build_kernel(Mask::full({1, 2}), 2)),
                         doctest::Contains("dependent columns"), DataError);
  }
}
