#pragma once

#include <stdexcept>
#include <string>

namespace coldrec {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// dimension / shape mismatches
struct ShapeError : Error {
  using Error::Error;
};

// bad indices, unknown ids
struct LookupError : Error {
  using Error::Error;
};

// malformed files, invalid values, broken invariants in inputs
struct DataError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// non-finite values produced during a numeric pass
struct DivergenceError : Error {
  using Error::Error;
};

struct AdaptError : Error {
  using Error::Error;
};

// metric preconditions (single-class AUC input etc.)
struct MetricError : Error {
  using Error::Error;
};

struct SearchError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace coldrec
