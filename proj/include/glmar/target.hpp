#pragma once

#include <cstddef>
#include <span>

namespace glmar {

/// A differentiable log density over R^dim.
///
/// Points outside the support return -infinity; the gradient buffer is then
/// left in an unspecified state.
class Target {
 public:
  virtual ~Target() = default;

  virtual std::size_t dim() const = 0;
  virtual double log_density(std::span<const double> x) const = 0;
  virtual double log_density_gradient(std::span<const double> x, std::span<double> grad) const = 0;

  /// Maps a point of the sampling space back to the reported parameter
  /// space, in place. Identity unless the target is reparameterized.
  virtual void to_natural(std::span<double> /*x*/) const {}
};

}  // namespace glmar
