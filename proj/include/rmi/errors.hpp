#pragma once

#include <stdexcept>
#include <string>

namespace rmi {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotPositiveDefinite : Error {
  using Error::Error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};

struct ClassOutOfRange : Error {
  using Error::Error;
};

struct FactorTooLarge : Error {
  using Error::Error;
};

struct RegionTooLarge : Error {
  using Error::Error;
};

struct EmptyDistribution : Error {
  using Error::Error;
};

struct TooFewSamples : Error {
  using Error::Error;
};

struct TapeConsumed : Error {
  using Error::Error;
};

struct DimTooLarge : Error {
  using Error::Error;
};

struct DivergenceDetected : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace rmi
