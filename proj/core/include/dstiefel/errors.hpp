#pragma once

#include <stdexcept>
#include <string>

namespace dstiefel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrix shapes or list lengths that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A polar factor was requested for a (numerically) rank-deficient matrix.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// A matrix that was supposed to lie on St(d,r) is too far from it to repair.
class ManifoldError : public Error {
 public:
  using Error::Error;
};

class TopologyError : public Error {
 public:
  using Error::Error;
};

class SpectralError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or divergence during a run.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// The inner-maximization oracle failed to converge.
class OracleError : public Error {
 public:
  using Error::Error;
};

/// Dataset cannot be split into equal node shards.
class PartitionError : public Error {
 public:
  using Error::Error;
};

/// Dataset content does not satisfy a problem's requirements.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dstiefel
