#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>

namespace glmar {

/// Pairwise (cascade) summation. The traversal order depends only on the
/// length, so the result is reproducible for a given input.
inline double pairwise_sum(std::span<const double> v) {
  constexpr std::size_t kBlock = 16;
  if (v.size() <= kBlock) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

inline std::span<double> as_span(Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace glmar
