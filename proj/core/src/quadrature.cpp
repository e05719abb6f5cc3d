#include "vpb/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <map>
#include <mutex>

namespace vpb {

namespace {

GaussRule golub_welsch(int n) {
  // Golub-Welsch: eigen-decomposition of the Jacobi matrix.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = k / std::sqrt(4.0 * k * k - 1.0);
    J(k - 1, k) = b;
    J(k, k - 1) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  GaussRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int k = 0; k < n; ++k) {
    r.nodes[k] = es.eigenvalues()(k);
    const double v0 = es.eigenvectors()(0, k);
    r.weights[k] = 2.0 * v0 * v0;
  }
  return r;
}

}  // namespace

GaussRule gauss_legendre(int n) {
  if (n < 1) throw PreconditionError("gauss_legendre: n must be positive");
  static std::mutex m;
  static std::map<int, GaussRule> cache;
  std::lock_guard<std::mutex> lock(m);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, golub_welsch(n)).first;
  return it->second;
}

GaussRule gauss_legendre(int n, double a, double b) {
  GaussRule r = gauss_legendre(n);
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  for (int k = 0; k < n; ++k) {
    r.nodes[k] = mid + half * r.nodes[k];
    r.weights[k] *= half;
  }
  return r;
}

std::vector<Vec3> fibonacci_directions(int n) {
  std::vector<Vec3> out;
  out.reserve(n);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    out.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return out;
}

}  // namespace vpb
