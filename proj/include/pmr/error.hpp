#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pmr {

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes, so keep new failure kinds inside this hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DegenerateRotation : public Error {
 public:
  using Error::Error;
};

class InsufficientFrames : public Error {
 public:
  using Error::Error;
};

// A metric whose denominator is empty (no visible keypoints, no valid samples).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class SimulationDiverged : public Error {
 public:
  SimulationDiverged(std::size_t dof, const std::string& what)
      : Error(what), dof_(dof) {}
  std::size_t dof() const noexcept { return dof_; }

 private:
  std::size_t dof_;
};

}  // namespace pmr
