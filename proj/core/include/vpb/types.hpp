#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>

namespace vpb {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Species index: 0 is the positive (ion) species, 1 the negative one.
enum class Species : int { plus = 0, minus = 1 };

inline constexpr double charge_sign(Species s) { return s == Species::plus ? 1.0 : -1.0; }
inline constexpr int index_of(Species s) { return static_cast<int>(s); }
inline constexpr Species species_at(int i) { return i == 0 ? Species::plus : Species::minus; }

/// Base class of all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

class SolvabilityError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace vpb
