#pragma once

#include "vpb/collision.hpp"
#include "vpb/field.hpp"
#include "vpb/phase_grid.hpp"

#include <Eigen/Dense>

#include <array>
#include <vector>

namespace vpb {

/// Orthonormalized null space of L on a velocity grid.
struct NullBasis {
  double dv = 0.0;
  std::array<PairValues, 6> raw;    ///< a+, a-, b1, b2, b3, c before orthonormalization
  std::array<PairValues, 6> ortho;  ///< ortho[j] = sum_i raw[i] * change(i, j)
  Eigen::Matrix<double, 6, 6> raw_gram;
  Eigen::Matrix<double, 6, 6> change;  ///< upper triangular
  double raw_c_norm2() const { return raw_gram(5, 5); }
};

NullBasis build_null_basis(const VelocityGrid& grid);

struct HydroMoments {
  double a_plus = 0.0;
  double a_minus = 0.0;
  Vec3 b = Vec3::Zero();
  double c = 0.0;
};

struct Projected {
  HydroMoments moments;
  PairValues pf;
  PairValues rest;  ///< (I - P) f
};

Projected project_P(const NullBasis& basis, const PairValues& f);
/// P f rebuilt from moments.
PairValues reconstruct(const NullBasis& basis, const HydroMoments& m);

/// Diffuse-reflection projection: c_mu sqrt(mu(v)) times the outgoing half-flux of each species.
PairValues p_gamma(const VelocityGrid& grid, const PairValues& f, const Vec3& n);

enum class BetaKind { a, b, c };
/// Gaussian moment identity residual for the test-function constants; axis in {0, 1, 2}.
double beta_residual(const VelocityGrid& grid, BetaKind kind, double beta, int axis);

struct CoercivityGap {
  double value = 0.0;
  bool degenerate = false;
};
/// <L f, f> / ||nu^{1/2} (I - P) f||^2 with the measured on-grid nu.
CoercivityGap coercivity_gap(const KernelTables& kt, const NullBasis& basis, const PairValues& f);

/// Null-space residuals and random-coercivity statistics from one batched kernel application.
struct SpectralStudy {
  std::array<double, 6> null_residual{};  ///< ||L b_i|| / ||b_i|| for the orthonormal basis
  double max_null_residual = 0.0;
  std::vector<double> gaps;                ///< coercivity gaps of the random samples
  double min_gap = 0.0;
  double mean_gap = 0.0;
  int degenerate = 0;
};
/// Random f = sum of sqrt(mu) v^alpha profiles (|alpha| <= max_degree) per species with N(0,1) coefficients.
SpectralStudy spectral_study(const KernelTables& kt, const NullBasis& basis, int samples, unsigned long long seed,
                             int max_degree = 3);

/// Test functions built from the hydrodynamic moment fields; evaluated at any spatial point.
class TestFunctions {
 public:
  static constexpr double beta_a = 10.0;
  static constexpr double beta_b = 1.0;
  static constexpr double beta_c = 5.0;

  /// a_plus, a_minus, c: one value per mesh node; b: three per node. Neumann data must be neutral.
  TestFunctions(const PoissonSolver& solver, const std::vector<double>& a_plus, const std::vector<double>& a_minus,
                const std::vector<Vec3>& b, const std::vector<double>& c);

  PairValues psi_a(const VelocityGrid& grid, const Vec3& x) const;
  PairValues psi_b1(const VelocityGrid& grid, const Vec3& x, int i, int j) const;
  /// Requires i != j.
  PairValues psi_b2(const VelocityGrid& grid, const Vec3& x, int i, int j) const;
  PairValues psi_c(const VelocityGrid& grid, const Vec3& x) const;

  const PoissonSolution& phi_a(Species s) const { return s == Species::plus ? phi_ap_ : phi_am_; }
  const PoissonSolution& phi_b(int j) const { return phi_b_[j]; }
  const PoissonSolution& phi_c() const { return phi_c_; }

 private:
  PoissonSolution phi_ap_, phi_am_, phi_c_;
  std::array<PoissonSolution, 3> phi_b_;
};

}  // namespace vpb
