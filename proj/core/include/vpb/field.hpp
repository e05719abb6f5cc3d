#pragma once

#include "vpb/geometry.hpp"
#include "vpb/phase_grid.hpp"
#include "vpb/types.hpp"

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace vpb {

enum class BoundaryCondition { neumann, dirichlet };
enum class PoissonMethod { polynomial, finite_difference };

/// rho(x) = int sqrt(mu) (f_+ - f_-) dv at every spatial node.
std::vector<double> charge_density(const VelocityGrid& grid, const DistributionPair& f);

/// Polynomial in three variables over monomials of total degree <= degree, in coordinates x / scale.
class Polynomial3 {
 public:
  Polynomial3() = default;
  Polynomial3(int degree, double scale);

  int degree() const { return degree_; }
  double scale() const { return scale_; }
  std::size_t size() const { return exps_.size(); }
  const std::array<int, 3>& exponent(std::size_t k) const { return exps_[k]; }
  std::vector<double>& coeffs() { return c_; }
  const std::vector<double>& coeffs() const { return c_; }

  double value(const Vec3& x) const;
  Vec3 gradient(const Vec3& x) const;
  Mat3 hessian(const Vec3& x) const;
  /// Value of the k-th basis monomial and its gradient.
  double basis(std::size_t k, const Vec3& x) const;
  Vec3 basis_gradient(std::size_t k, const Vec3& x) const;
  /// Index of a monomial, or -1 when above the degree.
  int index_of(int a, int b, int c) const;

 private:
  int degree_ = 0;
  double scale_ = 1.0;
  std::vector<std::array<int, 3>> exps_;
  std::vector<double> c_;
};

struct PoissonOptions {
  PoissonMethod method = PoissonMethod::finite_difference;
  int poly_degree = 6;           ///< degree of the charge fit for the polynomial method
  int boundary_theta = 24;       ///< boundary samples for the polynomial boundary fit
  int boundary_phi = 48;
  double neutrality_tol = 1e-8;  ///< relative to ||rho||_1
};

/// Potential, gradient and bookkeeping of one Poisson solve.
class PoissonSolution {
 public:
  BoundaryCondition bc = BoundaryCondition::neumann;
  PoissonMethod method = PoissonMethod::finite_difference;
  bool gauge_applied = false;
  double neutrality_shift = 0.0;  ///< mean removed from rho before a Neumann solve
  double residual = 0.0;          ///< max |-Delta_h phi - rho| over active nodes (charge-fit residual for polynomials)
  double boundary_residual = 0.0; ///< max |phi| or |d_n phi| over boundary samples
  std::vector<double> phi;        ///< nodal potential including ghosts
  std::vector<Vec3> grad;         ///< nodal gradient of phi

  double potential(const Vec3& x) const;
  Vec3 gradient(const Vec3& x) const;
  Vec3 field(const Vec3& x) const { return -gradient(x); }
  /// Analytic for the polynomial method, finite differences of the nodal gradient otherwise.
  Mat3 hessian(const Vec3& x) const;
  const std::optional<Polynomial3>& polynomial() const { return poly_; }
  const SpatialMesh& mesh() const { return *mesh_; }

 private:
  friend class PoissonSolver;
  std::shared_ptr<const SpatialMesh> mesh_;
  std::optional<Polynomial3> poly_;
};

class PoissonSolver {
 public:
  PoissonSolver(std::shared_ptr<const SpatialMesh> mesh, PoissonOptions opts = {});
  ~PoissonSolver();
  PoissonSolver(PoissonSolver&&) noexcept;
  PoissonSolver& operator=(PoissonSolver&&) noexcept;

  /// Solve -Delta phi = rho. Neumann data must be neutral up to the tolerance; the residual mean is removed.
  PoissonSolution solve(const std::vector<double>& rho, BoundaryCondition bc) const;
  const SpatialMesh& mesh() const { return *mesh_; }
  const PoissonOptions& options() const { return opts_; }

 private:
  struct FdCache;
  std::shared_ptr<const SpatialMesh> mesh_;
  PoissonOptions opts_;
  mutable std::unique_ptr<FdCache> fd_[2];

  PoissonSolution solve_fd(const std::vector<double>& rho, BoundaryCondition bc) const;
  PoissonSolution solve_polynomial(const std::vector<double>& rho, BoundaryCondition bc) const;
  void finish(PoissonSolution& s) const;
};

/// Lattice coordinates of each mesh node and second-order nodal gradients of a scalar field.
std::vector<std::array<int, 3>> lattice_coordinates(const SpatialMesh& mesh);
std::vector<Vec3> nodal_gradient(const SpatialMesh& mesh, const std::vector<double>& phi);

/// max over node pairs with |x - y| >= min_separation of |u(x) - u(y)| / |x - y|^a, over active nodes.
double holder_seminorm(const SpatialMesh& mesh, const std::vector<double>& values, double a, double min_separation);
double holder_seminorm(const SpatialMesh& mesh, const std::vector<Vec3>& values, double a, double min_separation);
double holder_seminorm(const SpatialMesh& mesh, const std::vector<Mat3>& values, double a, double min_separation);

/// Interpolation-inequality diagnostic: for each t the constant
/// C(t) = ||D^2 phi||_inf / (e^{d1 L t} ||phi||_{C^{1,1-d1}} + e^{-d2 L t} ||phi||_{C^{2,d2}}).
struct InterpolationReport {
  std::vector<double> t;
  std::vector<double> constant;
  double hessian_sup = 0.0;
  double c1_norm = 0.0;
  double c2_norm = 0.0;
  double max_constant = 0.0;
};
InterpolationReport interpolation_inequality(const PoissonSolution& sol, const std::vector<double>& times,
                                             double lambda0 = 1.0, double d1 = 0.5, double d2 = 0.5);

}  // namespace vpb
