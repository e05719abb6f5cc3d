#include "vpb/geometry.hpp"

#include "vpb/quadrature.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>

namespace vpb {

double BoundaryQuadrature::total_area() const {
  double s = 0.0;
  for (double a : area) s += a;
  return s;
}

ConvexDomain ConvexDomain::ball(double radius) {
  if (!(radius > 0.0)) throw PreconditionError("ball radius must be positive");
  ConvexDomain d;
  d.kind_ = DomainKind::ball;
  d.axes_ = Vec3::Constant(radius);
  d.bound_ = radius;
  return d;
}

ConvexDomain ConvexDomain::ellipsoid(double a, double b, double c) {
  if (!(a > 0.0 && b > 0.0 && c > 0.0)) throw PreconditionError("semi-axes must be positive");
  ConvexDomain d;
  d.kind_ = DomainKind::ellipsoid;
  d.axes_ = Vec3(a, b, c);
  d.bound_ = std::max({a, b, c});
  return d;
}

ConvexDomain ConvexDomain::level_set(ScalarFn xi, double bounding_radius, VectorFn grad,
                                     MatrixFn hessian) {
  if (!xi) throw PreconditionError("level_set: missing level function");
  if (!(bounding_radius > 0.0)) throw PreconditionError("level_set: bounding radius must be positive");
  ConvexDomain d;
  d.kind_ = DomainKind::level_set;
  d.bound_ = bounding_radius;
  d.user_xi_ = std::move(xi);
  d.user_grad_ = std::move(grad);
  d.user_hess_ = std::move(hessian);
  return d;
}

double ConvexDomain::xi(const Vec3& x) const {
  switch (kind_) {
    case DomainKind::ball:
      return x.squaredNorm() - bound_ * bound_;
    case DomainKind::ellipsoid:
      return x.cwiseQuotient(axes_).squaredNorm() - 1.0;
    case DomainKind::level_set:
      return user_xi_(x);
  }
  return 0.0;
}

Vec3 ConvexDomain::grad(const Vec3& x) const {
  switch (kind_) {
    case DomainKind::ball:
      return 2.0 * x;
    case DomainKind::ellipsoid:
      return 2.0 * x.cwiseQuotient(axes_.cwiseProduct(axes_));
    case DomainKind::level_set: {
      if (user_grad_) return user_grad_(x);
      const double h = 1e-6 * bound_;
      Vec3 g;
      for (int i = 0; i < 3; ++i) {
        Vec3 e = Vec3::Zero();
        e[i] = h;
        g[i] = (user_xi_(x + e) - user_xi_(x - e)) / (2.0 * h);
      }
      return g;
    }
  }
  return Vec3::Zero();
}

Mat3 ConvexDomain::hessian(const Vec3& x) const {
  switch (kind_) {
    case DomainKind::ball:
      return 2.0 * Mat3::Identity();
    case DomainKind::ellipsoid: {
      Mat3 h = Mat3::Zero();
      for (int i = 0; i < 3; ++i) h(i, i) = 2.0 / (axes_[i] * axes_[i]);
      return h;
    }
    case DomainKind::level_set: {
      if (user_hess_) return user_hess_(x);
      const double h = 1e-4 * bound_;
      Mat3 H;
      for (int j = 0; j < 3; ++j) {
        Vec3 e = Vec3::Zero();
        e[j] = h;
        H.col(j) = (grad(x + e) - grad(x - e)) / (2.0 * h);
      }
      return 0.5 * (H + H.transpose());
    }
  }
  return Mat3::Zero();
}

LevelSample ConvexDomain::level_and_normal(const Vec3& x) const {
  LevelSample s;
  s.xi = xi(x);
  s.grad = grad(x);
  s.inside = s.xi < 0.0;
  return s;
}

Vec3 ConvexDomain::normal(const Vec3& x) const {
  const Vec3 g = grad(x);
  const double gn = g.norm();
  if (!(gn > 1e-14)) throw DegenerateGeometryError("normal: vanishing level-set gradient");
  return g / gn;
}

BoundaryFrame ConvexDomain::tangent_frame(const Vec3& x) const {
  // Loose acceptance: points produced by floating projections sit a few ulps off.
  if (std::abs(xi(x)) > 1e3 * boundary_tolerance())
    throw PreconditionError("tangent_frame: point is not on the boundary");
  BoundaryFrame f;
  f.x = x;
  f.n = normal(x);
  // Seed with the coordinate axis least aligned with n.
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(f.n[i]) < std::abs(f.n[k])) k = i;
  Vec3 seed = Vec3::Zero();
  seed[k] = 1.0;
  f.tau1 = (seed - seed.dot(f.n) * f.n).normalized();
  f.tau2 = f.n.cross(f.tau1);
  return f;
}

Projection ConvexDomain::nearest_boundary(const Vec3& x) const {
  Projection p;
  if (kind_ == DomainKind::ball) {
    const double r = x.norm();
    if (r < 1e-14 * bound_) {
      p.point = Vec3(bound_, 0.0, 0.0);
      p.distance = bound_;
      p.tie_broken = true;
      return p;
    }
    p.point = x * (bound_ / r);
    p.distance = std::abs(bound_ - r);
    return p;
  }
  if (kind_ == DomainKind::ellipsoid && xi(x) <= 0.0) {
    // Stationarity gives xbar_i = x_i a_i^2/(a_i^2 + t) with t in (-a_min^2, 0].
    const Vec3 a2 = axes_.cwiseProduct(axes_);
    auto g = [&](double t) {
      double s = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double q = axes_[i] * x[i] / (a2[i] + t);
        s += q * q;
      }
      return s - 1.0;
    };
    int imin = 0;
    for (int i = 1; i < 3; ++i)
      if (a2[i] < a2[imin]) imin = i;
    double lo = -a2[imin], hi = 0.0;
    double lo_probe = lo + 1e-14 * a2[imin];
    if (g(lo_probe) > 0.0) {
      lo = lo_probe;
      for (int it = 0; it < 200 && hi - lo > 1e-16 * a2[imin]; ++it) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) > 0.0 ? lo : hi) = mid;
      }
      const double t = 0.5 * (lo + hi);
      Vec3 xb;
      for (int i = 0; i < 3; ++i) xb[i] = x[i] * a2[i] / (a2[i] + t);
      // Snap back onto the surface along the ray from the origin.
      xb /= std::sqrt(xb.cwiseQuotient(axes_).squaredNorm());
      p.point = xb;
      p.distance = (x - xb).norm();
      return p;
    }
  }
  return project_kkt(x);
}

Projection ConvexDomain::project_kkt(const Vec3& x) const {
  // Best Fibonacci candidate, then Newton on the KKT system of min |y-x|^2 s.t. xi(y)=0.
  const auto dirs = fibonacci_directions(400);
  Vec3 best = Vec3::Zero();
  double best_d = kInf, second_d = kInf;
  for (const Vec3& d : dirs) {
    const RayHit h = ray_exit(Vec3::Zero(), d);
    const double dist = (h.x - x).norm();
    if (dist < best_d) {
      second_d = best_d;
      best_d = dist;
      best = h.x;
    } else if (dist < second_d) {
      second_d = dist;
    }
  }
  Vec3 y = best;
  double lam = 0.0;
  {
    const Vec3 g = grad(y);
    lam = -(y - x).dot(g) / std::max(g.squaredNorm(), 1e-300);
  }
  for (int it = 0; it < 50; ++it) {
    const Vec3 g = grad(y);
    const Mat3 H = hessian(y);
    Eigen::Matrix4d J = Eigen::Matrix4d::Zero();
    J.topLeftCorner<3, 3>() = Mat3::Identity() + lam * H;
    J.block<3, 1>(0, 3) = g;
    J.block<1, 3>(3, 0) = g.transpose();
    Eigen::Vector4d F;
    F.head<3>() = y - x + lam * g;
    F[3] = xi(y);
    const Eigen::Vector4d step = J.fullPivLu().solve(-F);
    y += step.head<3>();
    lam += step[3];
    if (step.head<3>().norm() < 1e-15 * bound_) break;
  }
  Projection p;
  p.point = y;
  p.distance = (y - x).norm();
  p.tie_broken = std::abs(second_d - best_d) < 1e-12 * bound_ && (best - x).norm() > 0.0 &&
                 kind_ == DomainKind::level_set;
  return p;
}

double ConvexDomain::convexity_margin(const Vec3& p, const Vec3& zeta) const {
  const double z2 = zeta.squaredNorm();
  if (!(z2 > 0.0)) throw PreconditionError("convexity_margin: zero tangent vector");
  const Vec3 g = grad(p);
  const double gn = g.norm();
  if (!(gn > 1e-14)) throw DegenerateGeometryError("convexity_margin: vanishing gradient");
  return zeta.dot(hessian(p) * zeta) / (gn * z2);
}

RayHit ConvexDomain::ray_exit(const Vec3& x, const Vec3& v) const {
  RayHit h;
  const double v2 = v.squaredNorm();
  if (v2 == 0.0) {
    h.x = x;
    return h;
  }
  if (kind_ == DomainKind::ball || kind_ == DomainKind::ellipsoid) {
    // |D(x + t v)|^2 = 1 with D = diag(1/a).
    const Vec3 xs = x.cwiseQuotient(axes_), vs = v.cwiseQuotient(axes_);
    const double A = vs.squaredNorm(), B = xs.dot(vs), C = xs.squaredNorm() - 1.0;
    const double disc = std::max(0.0, B * B - A * C);
    // Stable root of the larger branch.
    double t = B <= 0.0 ? (-B + std::sqrt(disc)) / A : -C / (B + std::sqrt(disc));
    h.t = std::max(0.0, t);
    h.x = x + h.t * v;
    return h;
  }
  const double vn = std::sqrt(v2);
  double lo = 0.0, hi = (x.norm() + 1.01 * bound_) / vn;
  if (xi(x) >= 0.0) {
    h.t = 0.0;
    h.x = x;
    return h;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (xi(x + mid * v) < 0.0 ? lo : hi) = mid;
  }
  double t = 0.5 * (lo + hi);
  // One Newton polish along the ray.
  const Vec3 y = x + t * v;
  const double d = grad(y).dot(v);
  if (std::abs(d) > 1e-14) {
    const double tn = t - xi(y) / d;
    if (std::abs(tn - t) < 1e-6 * (hi + 1e-300) && std::abs(xi(x + tn * v)) < std::abs(xi(y))) t = tn;
  }
  h.t = t;
  h.x = x + t * v;
  return h;
}

Vec3 ConvexDomain::surface_point(double ct, double phi) const {
  const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
  const Vec3 d(st * std::cos(phi), st * std::sin(phi), ct);
  if (kind_ == DomainKind::level_set) return ray_exit(Vec3::Zero(), d).x;
  return d.cwiseProduct(axes_);
}

BoundaryQuadrature ConvexDomain::boundary_quadrature(int n_theta, int n_phi) const {
  if (n_theta < 1 || n_phi < 1) throw PreconditionError("boundary_quadrature: empty rule");
  const GaussRule gl = gauss_legendre(n_theta);
  BoundaryQuadrature q;
  const double dphi = 2.0 * kPi / n_phi;
  for (int i = 0; i < n_theta; ++i) {
    const double ct = gl.nodes[i];
    for (int j = 0; j < n_phi; ++j) {
      const double phi = (j + 0.5) * dphi;
      const Vec3 p = surface_point(ct, phi);
      // Surface element |x_ct x x_phi| by central differences of the chart.
      const double e = 1e-6;
      const Vec3 dct = (surface_point(std::min(1.0, ct + e), phi) - surface_point(std::max(-1.0, ct - e), phi)) /
                       (std::min(1.0, ct + e) - std::max(-1.0, ct - e));
      const Vec3 dph = (surface_point(ct, phi + e) - surface_point(ct, phi - e)) / (2.0 * e);
      q.points.push_back(p);
      q.normals.push_back(normal(p));
      q.area.push_back(dct.cross(dph).norm() * gl.weights[i] * dphi);
    }
  }
  return q;
}

double ConvexDomain::volume() const {
  if (kind_ != DomainKind::level_set) return 4.0 / 3.0 * kPi * axes_.prod();
  const int n = 96;
  const double h = 2.0 * bound_ / n;
  long count = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Vec3 x(-bound_ + (i + 0.5) * h, -bound_ + (j + 0.5) * h, -bound_ + (k + 0.5) * h);
        if (xi(x) < 0.0) ++count;
      }
  return count * h * h * h;
}

Mat3 shape_operator(const ConvexDomain& dom, const Vec3& p) {
  const Vec3 g = dom.grad(p);
  const double gn = g.norm();
  if (!(gn > 1e-14)) throw DegenerateGeometryError("shape_operator: vanishing gradient");
  const Vec3 n = g / gn;
  const Mat3 P = Mat3::Identity() - n * n.transpose();
  return P * dom.hessian(p) * P / gn;
}

}  // namespace vpb
