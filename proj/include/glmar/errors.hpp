#pragma once

#include <stdexcept>
#include <string>

namespace glmar {

/// Malformed or inconsistent input data (bundles, masks, CSV files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed where the math says it should not
/// (non-SPD update precision, failed factorization).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace glmar
