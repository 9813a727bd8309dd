#pragma once

#include <stdexcept>
#include <string>

namespace sfl {

/// Base of every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScheduleError : Error {
  using Error::Error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct ArgumentError : Error {
  using Error::Error;
};

/// Total nested sample product exceeds the configured cap.
struct BudgetError : Error {
  using Error::Error;
};

/// A finite-difference step would leave the feasible parameter box.
struct InfeasiblePerturbation : Error {
  using Error::Error;
};

}  // namespace sfl
