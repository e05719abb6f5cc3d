#pragma once

#include "vpb/types.hpp"

#include <functional>
#include <vector>

namespace vpb {

enum class DomainKind { ball, ellipsoid, level_set };

struct LevelSample {
  double xi = 0.0;
  Vec3 grad = Vec3::Zero();
  bool inside = false;
};

/// Outward normal and a right-handed tangent pair at a boundary point.
struct BoundaryFrame {
  Vec3 x;
  Vec3 n;
  Vec3 tau1;
  Vec3 tau2;
};

struct Projection {
  Vec3 point;
  double distance = 0.0;
  bool tie_broken = false;  ///< projection was not unique; +e1 branch chosen
};

struct RayHit {
  double t = kInf;
  Vec3 x = Vec3::Zero();
  bool finite() const { return t < kInf; }
};

/// Boundary quadrature: points, outward normals and surface-area weights.
struct BoundaryQuadrature {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<double> area;
  double total_area() const;
};

/// Bounded convex domain Omega = {xi < 0}. Immutable after construction.
class ConvexDomain {
 public:
  using ScalarFn = std::function<double(const Vec3&)>;
  using VectorFn = std::function<Vec3(const Vec3&)>;
  using MatrixFn = std::function<Mat3(const Vec3&)>;

  static ConvexDomain ball(double radius = 1.0);
  static ConvexDomain ellipsoid(double a, double b, double c);
  /// User level set. Missing derivatives fall back to central differences.
  static ConvexDomain level_set(ScalarFn xi, double bounding_radius, VectorFn grad = {},
                                MatrixFn hessian = {});

  DomainKind kind() const { return kind_; }
  double bounding_radius() const { return bound_; }
  const Vec3& semi_axes() const { return axes_; }
  double boundary_tolerance() const { return 1e-9 * bound_; }

  double xi(const Vec3& x) const;
  Vec3 grad(const Vec3& x) const;
  Mat3 hessian(const Vec3& x) const;

  LevelSample level_and_normal(const Vec3& x) const;
  bool contains(const Vec3& x) const { return xi(x) < 0.0; }
  BoundaryFrame tangent_frame(const Vec3& x) const;
  Vec3 normal(const Vec3& x) const;
  Projection nearest_boundary(const Vec3& x) const;
  double convexity_margin(const Vec3& p, const Vec3& zeta) const;
  RayHit ray_exit(const Vec3& x, const Vec3& v) const;

  /// Product quadrature in (cos theta, phi) of the boundary surface.
  BoundaryQuadrature boundary_quadrature(int n_theta, int n_phi) const;

  /// Volume of Omega: closed form for ball and ellipsoid, lattice count otherwise.
  double volume() const;

 private:
  DomainKind kind_ = DomainKind::ball;
  Vec3 axes_ = Vec3::Ones();
  double bound_ = 1.0;
  ScalarFn user_xi_;
  VectorFn user_grad_;
  MatrixFn user_hess_;

  Vec3 surface_point(double cos_theta, double phi) const;
  Projection project_kkt(const Vec3& x) const;
};

/// Shape operator S = (I - n n^T) Hess(xi) (I - n n^T) / |grad xi| at a boundary point.
Mat3 shape_operator(const ConvexDomain& dom, const Vec3& p);

}  // namespace vpb
