#include "vpb/kinetic_distance.hpp"

#include "vpb/collision.hpp"
#include "vpb/quadrature.hpp"

#include <cmath>

namespace vpb {

double chi(double tau) {
  if (tau <= 0.0) return 0.0;
  if (tau >= 1.0) return 1.0;
  return tau * tau * (3.0 - 2.0 * tau);
}

double chi_prime(double tau) {
  if (tau <= 0.0 || tau >= 1.0) return 0.0;
  return 6.0 * tau * (1.0 - tau);
}

void AlphaParams::validate() const {
  if (!(eps > 0.0)) throw PreconditionError("AlphaParams: eps must be positive");
}

AlphaValue alpha(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp, const FieldHandle& field,
                 const AlphaParams& p) {
  p.validate();
  AlphaValue a;
  const ExitRecord e = backward_exit(dom, t, x, v, sp, field, p.trace);
  a.t_b = e.t_b;
  if (e.infinite()) return a;
  a.margin = e.margin;
  a.chi = chi((t - e.t_b + p.eps) / p.eps);
  a.alpha = a.chi * std::abs(e.margin) + (1.0 - a.chi);
  return a;
}

double transport_residual(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp,
                          const FieldHandle& field, const AlphaParams& p, double ds, double span) {
  if (!(ds > 0.0) || !(span >= ds)) throw PreconditionError("transport_residual: need 0 < ds <= span");
  AlphaParams q = p;
  q.trace.max_step = std::min(q.trace.max_step, ds);
  const double a0 = alpha(dom, t, x, v, sp, field, q).alpha;
  const int n = static_cast<int>(std::floor(span / ds + 1e-9));
  TrajectoryState st{t, x, v, sp};
  double r = 0.0;
  // The path itself is resolved far below ds; sharing the tracer's step would make the check vacuous.
  for (int j = 1; j <= n; ++j) {
    st = field.is_zero() ? advance(st, field, -ds) : flow(st, field, st.s - ds, 32);
    if (!dom.contains(st.x)) throw PreconditionError("transport_residual: segment leaves the domain");
    r = std::max(r, std::abs(alpha(dom, st.s, st.x, st.v, sp, field, q).alpha - a0));
  }
  return r;
}

AlphaTilde alpha_tilde(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp,
                       const FieldHandle& field, bool neumann, double collar) {
  const Projection pr = dom.nearest_boundary(x);
  if (pr.distance > collar * dom.bounding_radius()) throw PreconditionError("alpha_tilde: point outside the collar");
  const double xi = dom.xi(x);
  const double vg = v.dot(dom.grad(x));
  double rad = xi * xi + vg * vg - 2.0 * v.dot(dom.hessian(x) * v) * xi;
  if (!neumann) rad -= 2.0 * field.acceleration(sp, t, pr.point).dot(dom.grad(pr.point)) * xi;
  AlphaTilde a;
  a.radicand = rad;
  if (rad < 0.0) {
    a.clamped = true;
    rad = 0.0;
  }
  a.value = std::sqrt(rad);
  return a;
}

VelocityLemmaResult velocity_lemma_residual(const ConvexDomain& dom, const TrajectoryState& start,
                                            const FieldHandle& field, double ds, int n_steps, bool neumann,
                                            double collar) {
  if (n_steps < 2) throw PreconditionError("velocity_lemma_residual: need at least two steps");
  std::vector<TrajectoryState> path{start};
  for (int i = 0; i < n_steps; ++i) path.push_back(advance(path.back(), field, ds));
  const double reach = collar * dom.bounding_radius();
  std::vector<double> a2(path.size(), -1.0);
  for (std::size_t i = 0; i < path.size(); ++i) {
    const TrajectoryState& s = path[i];
    if (!dom.contains(s.x) || dom.nearest_boundary(s.x).distance > reach) continue;
    const double a = alpha_tilde(dom, s.s, s.x, s.v, s.species, field, neumann, collar).value;
    a2[i] = a * a;
  }
  VelocityLemmaResult r;
  for (std::size_t i = 1; i + 1 < path.size(); ++i) {
    ++r.samples;
    if (a2[i - 1] < 0 || a2[i] <= 1e-24 || a2[i + 1] < 0) {
      ++r.excluded;
      continue;
    }
    const double d = (a2[i + 1] - a2[i - 1]) / (2.0 * ds);
    const double speed = path[i].v.norm();
    r.residual = std::max(r.residual, std::abs(d) / ((1.0 + speed + 1.0 / speed) * a2[i]));
  }
  return r;
}

double alpha_inverse_moment(const ConvexDomain& dom, double sigma, double N, double t, const Vec3& x, Species sp,
                            const FieldHandle& field, const AlphaParams& p, const MomentQuadrature& q) {
  if (!(sigma < 1.0) || sigma < 0.0) throw PreconditionError("alpha_inverse_moment: sigma must lie in [0, 1)");
  if (!(N > 0.0)) throw PreconditionError("alpha_inverse_moment: N must be positive");
  // r = N y^2 softens the origin.
  const GaussRule g = gauss_legendre(q.n_radial, 0.0, 1.0);
  const SphereQuadrature sph(q.n_theta, q.n_phi);
  double acc = 0.0;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const double y = g.nodes[i], r = N * y * y, jac = 2.0 * N * y * r * r;
    double ang = 0.0;
    for (std::size_t d = 0; d < sph.size(); ++d) {
      const double a = sigma == 0.0 ? 1.0 : alpha(dom, t, x, r * sph.direction(d), sp, field, p).alpha;
      ang += sph.weight(d) * std::pow(a, -sigma);
    }
    acc += g.weights[i] * jac * ang;
  }
  return acc;
}

double alpha_weighted_tail_moment(const ConvexDomain& dom, double sigma, double kappa, double C, double N,
                                  const Vec3& v, double t, const Vec3& x, Species sp, const FieldHandle& field,
                                  const AlphaParams& p, const MomentQuadrature& q) {
  if (!(kappa > 0.0 && kappa <= 2.0)) throw PreconditionError("alpha_weighted_tail_moment: kappa must lie in (0, 2]");
  if (!(C > 0.0) || !(sigma < 1.0)) throw PreconditionError("alpha_weighted_tail_moment: need C > 0 and sigma < 1");
  // Polar coordinates about v: the |v-u|^{kappa-2} singularity meets the rho^2 Jacobian.
  const double rho_max = std::sqrt(30.0 / C);
  const GaussRule g = gauss_legendre(q.n_radial, 0.0, rho_max);
  const SphereQuadrature sph(q.n_theta, q.n_phi);
  double acc = 0.0;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const double rho = g.nodes[i];
    const double radial = std::exp(-C * rho * rho) * std::pow(rho, kappa);
    double ang = 0.0;
    for (std::size_t d = 0; d < sph.size(); ++d) {
      const Vec3 u = v + rho * sph.direction(d);
      if (u.norm() < N) continue;
      ang += sph.weight(d) * std::pow(alpha(dom, t, x, u, sp, field, p).alpha, -sigma);
    }
    acc += g.weights[i] * radial * ang;
  }
  return acc;
}

}  // namespace vpb
