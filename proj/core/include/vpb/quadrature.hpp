#pragma once

#include "vpb/types.hpp"

#include <vector>

namespace vpb {

/// Gauss-Legendre rule on [-1, 1].
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

GaussRule gauss_legendre(int n);

/// Gauss-Legendre rule mapped to [a, b].
GaussRule gauss_legendre(int n, double a, double b);

/// Nearly uniform unit directions on the sphere (Fibonacci lattice).
std::vector<Vec3> fibonacci_directions(int n);

}  // namespace vpb
