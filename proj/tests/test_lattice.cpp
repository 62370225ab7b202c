#include "doctest.h"

#include "glmar/errors.hpp"
#include "glmar/lattice.hpp"
#include "oracles/oracles.hpp"

#include <Eigen/Eigenvalues>

#include <random>
#include <sstream>

using namespace glmar;

namespace {

Eigen::MatrixXd to_dense(const SparseRowMatrix& m) { return Eigen::MatrixXd(m); }

Mask line3() { return Mask::full({1, 3}); }

}  // namespace

TEST_CASE("three-voxel line kernel") {
  const auto kernel = build_kernel(line3(), 2);
  CHECK(kernel.deg == 4);
  Eigen::MatrixXd S_expected(3, 3);
  S_expected << 4, -1, 0, -1, 4, -1, 0, -1, 4;
  CHECK(to_dense(kernel.S) == S_expected);

  Eigen::MatrixXd StS_expected(3, 3);
  StS_expected << 17, -8, 1, -8, 18, -8, 1, -8, 17;
  CHECK(to_dense(kernel.StS) == StS_expected);
}

TEST_CASE("quad_form on small cases") {
  const auto kernel = build_kernel(line3(), 2);
  const std::vector<double> zero(3, 0.0), e0{1.0, 0.0, 0.0};
  CHECK(quad_form(kernel, zero) == 0.0);
  CHECK(quad_form(kernel, e0) == 17.0);
  const std::vector<double> short_v{1.0, 2.0};
  CHECK_THROWS_AS(quad_form(kernel, short_v), std::invalid_argument);
}

TEST_CASE("quad_form matches dense product on a 5x5 grid") {
  const Mask mask = Mask::full({5, 5});
  const auto kernel = build_kernel(mask, 2);
  const auto dense = oracle::dense_kernel(mask);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> norm;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd v(25);
    for (auto& x : v) x = norm(rng);
    const double expected = v.dot(dense.StS * v);
    const double got = quad_form(kernel, {v.data(), 25});
    CHECK(std::abs(got - expected) <= 1e-12 * std::abs(expected));
    // row-wise consistency: v^T (StS v) versus (v^T StS) v
    const Eigen::VectorXd Sv = kernel.StS * v;
    const Eigen::RowVectorXd vS = v.transpose() * kernel.StS;
    CHECK(std::abs(v.dot(Sv) - vS.dot(v)) <= 1e-12 * std::abs(expected));
  }
}

TEST_CASE("precision_row") {
  const auto kernel = build_kernel(line3(), 2);
  using Row = std::vector<std::pair<std::size_t, double>>;
  CHECK(precision_row(kernel, 0) == Row{{0, 17.0}, {1, -8.0}, {2, 1.0}});
  CHECK(precision_row(kernel, 1) == Row{{0, -8.0}, {1, 18.0}, {2, -8.0}});
  CHECK_THROWS_AS(precision_row(kernel, 3), std::out_of_range);

  const auto single = build_kernel(Mask::full({1, 1}), 2);
  CHECK(precision_row(single, 0) == Row{{0, 16.0}});
}

TEST_CASE("interior sparsity matches the 13 / 25 nonzero stencil") {
  const auto k2 = build_kernel(Mask::full({10, 10}), 2);
  const std::size_t interior = 5 * 10 + 5;
  CHECK(precision_row(k2, interior).size() == 13);
  std::size_t max_nnz = 0;
  for (std::size_t n = 0; n < k2.size(); ++n) max_nnz = std::max(max_nnz, precision_row(k2, n).size());
  CHECK(max_nnz == 13);

  const Mask cube = Mask::full({6, 6, 6});
  const auto k3 = build_kernel(cube, 3);
  CHECK(k3.deg == 6);
  const long centre = cube.voxel_at({3, 3, 3});
  CHECK(precision_row(k3, static_cast<std::size_t>(centre)).size() == 25);
}

TEST_CASE("boundary voxels keep the fixed diagonal") {
  const auto kernel = build_kernel(Mask::full({4, 4}), 2);
  const Eigen::MatrixXd S = to_dense(kernel.S);
  for (int i = 0; i < 16; ++i) CHECK(S(i, i) == 4.0);
}

TEST_CASE("StS equals dense S^T S, is symmetric and positive definite on random masks") {
  std::mt19937_64 rng(3);
  for (int N : {1, 2, 7, 25, 60, 100}) {
    const Mask mask = oracle::random_mask(rng, N);
    const auto kernel = build_kernel(mask, 2);
    const auto dense = oracle::dense_kernel(mask);
    const Eigen::MatrixXd StS = to_dense(kernel.StS);
    CHECK(to_dense(kernel.S) == dense.S);
    CHECK(StS == dense.StS);
    CHECK(StS == StS.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(StS);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("column indices are sorted within each row") {
  const auto kernel = build_kernel(Mask::full({6, 7}), 2);
  for (Eigen::Index i = 0; i < kernel.StS.outerSize(); ++i) {
    long prev = -1;
    for (SparseRowMatrix::InnerIterator it(kernel.StS, i); it; ++it) {
      CHECK(it.col() > prev);
      prev = it.col();
    }
  }
}

TEST_CASE("build_kernel errors") {
  CHECK_THROWS_AS(build_kernel(Mask({2, 2}, {false, false, false, false}), 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_kernel(Mask::full({3, 3}), 3), std::invalid_argument);
  CHECK_THROWS_AS(build_kernel(Mask::full({3, 3, 3}), 2), std::invalid_argument);
}

TEST_CASE("mask text format") {
  std::istringstream in("dims: 2 3\n1 0 1\n\n1 1 0\n");
  const Mask m = parse_mask(in);
  CHECK(m.voxel_count() == 4);
  CHECK(m.coord(1) == std::array<int, 3>{0, 2, 0});
  CHECK(m.coord(3) == std::array<int, 3>{1, 1, 0});
  CHECK(m.centroid(2) == std::array<double, 3>{1.0, 0.0, 0.0});

  std::ostringstream out;
  write_mask(out, m);
  std::istringstream back(out.str());
  CHECK(parse_mask(back) == m);

  std::istringstream bad_value("dims: 1 2\n1 2\n");
  CHECK_THROWS_AS(parse_mask(bad_value), DataError);
  std::istringstream short_row("dims: 2 2\n1 1\n1\n");
  CHECK_THROWS_WITH_AS(parse_mask(short_row, "m.txt"), doctest::Contains("m.txt:3"), DataError);
  std::istringstream no_header("1 1\n");
  CHECK_THROWS_AS(parse_mask(no_header), DataError);
}

TEST_CASE("kernel CSV export") {
  const auto kernel = build_kernel(line3(), 2);
  std::ostringstream out;
  export_kernel_csv(out, kernel.S);
  CHECK(out.str() == "row,col,value\n0,0,4\n0,1,-1\n1,0,-1\n1,1,4\n1,2,-1\n2,1,-1\n2,2,4\n");
}
