#include "vpb/characteristics.hpp"

#include "vpb/phase_grid.hpp"

#include <cmath>

namespace vpb {

FieldHandle::FieldHandle(GradFn grad, HessFn hess, bool freeze_negative_time)
    : grad_(std::move(grad)), hess_(std::move(hess)), freeze_(freeze_negative_time) {}

FieldHandle FieldHandle::constant(const Vec3& g) {
  return FieldHandle([g](double, const Vec3&) { return g; }, [](double, const Vec3&) { return Mat3::Zero().eval(); });
}

FieldHandle FieldHandle::rotational(const Vec3& omega) {
  Mat3 skew;
  skew << 0, -omega[2], omega[1], omega[2], 0, -omega[0], -omega[1], omega[0], 0;
  return FieldHandle([omega](double, const Vec3& x) { return omega.cross(x).eval(); },
                     [skew](double, const Vec3&) { return skew; });
}

FieldHandle FieldHandle::from_solution(std::shared_ptr<const PoissonSolution> sol) {
  if (!sol) throw PreconditionError("FieldHandle::from_solution: null solution");
  return FieldHandle([sol](double, const Vec3& x) { return sol->gradient(x); },
                     [sol](double, const Vec3& x) { return sol->hessian(x); });
}

Vec3 FieldHandle::grad_phi(double s, const Vec3& x) const {
  return grad_ ? grad_(clamp(s), x) : Vec3::Zero().eval();
}

Mat3 FieldHandle::hess_phi(double s, const Vec3& x) const {
  if (!grad_) return Mat3::Zero();
  if (hess_) return hess_(clamp(s), x);
  const double e = 1e-5 * std::max(1.0, x.norm());
  Mat3 h;
  for (int j = 0; j < 3; ++j) {
    const Vec3 d = e * Vec3::Unit(j);
    h.col(j) = (grad_(clamp(s), x + d) - grad_(clamp(s), x - d)) / (2 * e);
  }
  return h;
}

TrajectoryState advance(const TrajectoryState& st, const FieldHandle& field, double ds) {
  TrajectoryState out = st;
  out.s = st.s + ds;
  if (field.is_zero()) {
    out.x = st.x + ds * st.v;
    return out;
  }
  const Species sp = st.species;
  const double h2 = 0.5 * ds;
  const Vec3 k1x = st.v;
  const Vec3 k1v = field.acceleration(sp, st.s, st.x);
  const Vec3 k2x = st.v + h2 * k1v;
  const Vec3 k2v = field.acceleration(sp, st.s + h2, st.x + h2 * k1x);
  const Vec3 k3x = st.v + h2 * k2v;
  const Vec3 k3v = field.acceleration(sp, st.s + h2, st.x + h2 * k2x);
  const Vec3 k4x = st.v + ds * k3v;
  const Vec3 k4v = field.acceleration(sp, st.s + ds, st.x + ds * k3x);
  out.x = st.x + ds / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
  out.v = st.v + ds / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
  return out;
}

TrajectoryState flow(const TrajectoryState& st, const FieldHandle& field, double s_target, int n_steps) {
  if (n_steps < 1) throw PreconditionError("flow: n_steps must be positive");
  const double ds = (s_target - st.s) / n_steps;
  TrajectoryState cur = st;
  for (int i = 0; i < n_steps; ++i) cur = advance(cur, field, ds);
  cur.s = s_target;
  return cur;
}

namespace {

double step_size(const ConvexDomain& dom, const Vec3& v, const FieldHandle& field, const TraceOptions& o) {
  const double speed = v.norm();
  const double geo = speed > 0 ? o.step_fraction * dom.bounding_radius() / speed : kInf;
  return field.is_zero() ? geo : std::min(o.max_step, geo);
}

// Exit lies in backward step length (0, h] from st0: xi(st0) <= ~0, xi(advance(st0, -h)) >= 0.
TrajectoryState refine_exit(const ConvexDomain& dom, const TrajectoryState& st0, const FieldHandle& field, double h,
                            double tol) {
  double lo = 0.0, hi = h;
  double flo = std::min(dom.xi(st0.x), 0.0);
  TrajectoryState shi = advance(st0, field, -h);
  double fhi = dom.xi(shi.x);
  int side = 0;
  for (int it = 0; it < 200; ++it) {
    if (fhi <= 1e-4 * tol) break;
    double m;
    if (flo < -tol) {
      m = hi - fhi * (hi - lo) / (fhi - flo);  // Illinois false position once a strict interior bracket exists
      if (!(m > lo && m < hi)) m = 0.5 * (lo + hi);
    } else {
      m = 0.5 * (lo + hi);
    }
    const TrajectoryState sm = advance(st0, field, -m);
    const double fm = dom.xi(sm.x);
    if (fm >= 0.0) {
      hi = m;
      shi = sm;
      fhi = fm;
      if (side == +1) flo *= 0.5;
      side = +1;
    } else {
      lo = m;
      flo = fm;
      if (side == -1) fhi *= 0.5;
      side = -1;
    }
    if (hi - lo <= 1e-15 * h) break;
  }
  return shi;
}

}  // namespace

ExitRecord backward_exit(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp,
                         const FieldHandle& field, const TraceOptions& opts) {
  const double R = dom.bounding_radius();
  const double tol = opts.tol * R;
  const double xi0 = dom.xi(x);
  const double on_boundary = 10.0 * tol;
  if (xi0 > on_boundary) throw PreconditionError("backward_exit: start point outside the domain");
  if (xi0 >= -on_boundary && dom.normal(x).dot(v) <= 0.0)
    throw PreconditionError("backward_exit: boundary start requires n(x).v > 0");
  ExitRecord rec;
  if (v.squaredNorm() == 0.0 && field.is_zero()) return rec;

  TrajectoryState st{t, x, v, sp};
  double elapsed = 0.0;
  while (elapsed < opts.max_time) {
    const double h = std::min(step_size(dom, st.v, field, opts), opts.max_time - elapsed);
    if (!std::isfinite(h)) return rec;
    const TrajectoryState nx = advance(st, field, -h);
    if (dom.xi(nx.x) >= 0.0) {
      const TrajectoryState ex = refine_exit(dom, st, field, h, tol);
      rec.t_b = t - ex.s;
      rec.x_b = ex.x;
      rec.v_b = ex.v;
      rec.margin = dom.normal(ex.x).dot(ex.v);
      rec.residual = std::abs(dom.xi(ex.x));
      return rec;
    }
    st = nx;
    elapsed += h;
  }
  return rec;
}

NTCoordinates nt_decompose(const ConvexDomain& dom, const Vec3& x, const Vec3& v, double collar) {
  const Projection p = dom.nearest_boundary(x);
  if (p.distance > collar * dom.bounding_radius()) throw PreconditionError("nt_decompose: point outside the collar");
  NTCoordinates c;
  c.x_par = p.point;
  c.x_n = dom.contains(x) ? p.distance : -p.distance;
  const BoundaryFrame f = dom.tangent_frame(p.point);
  c.normal = f.n;
  c.v_n = -v.dot(f.n);
  c.v_tan = v - v.dot(f.n) * f.n;
  c.v_par[0] = c.v_tan.dot(f.tau1);
  c.v_par[1] = c.v_tan.dot(f.tau2);
  return c;
}

JacobianResult jacobian_dX_dv(const ConvexDomain& dom, double s, double t, const Vec3& x, const Vec3& v, Species sp,
                              const FieldHandle& field, int n_steps) {
  if (n_steps < 1) throw PreconditionError("jacobian_dX_dv: n_steps must be positive");
  struct Y {
    Vec3 x, v;
    Mat3 jx, jv;
  };
  const double q = charge_sign(sp);
  auto rhs = [&](double tau, const Y& y) {
    Y d;
    d.x = y.v;
    d.v = -q * field.grad_phi(tau, y.x);
    d.jx = y.jv;
    d.jv = -q * field.hess_phi(tau, y.x) * y.jx;
    return d;
  };
  auto axpy = [](const Y& y, double a, const Y& d) {
    return Y{y.x + a * d.x, y.v + a * d.v, y.jx + a * d.jx, y.jv + a * d.jv};
  };
  Y y{x, v, Mat3::Zero(), Mat3::Identity()};
  const double h = (s - t) / n_steps;
  const double tol = 10.0 * dom.boundary_tolerance();
  double tau = t;
  for (int i = 0; i < n_steps; ++i) {
    const Y k1 = rhs(tau, y);
    const Y k2 = rhs(tau + 0.5 * h, axpy(y, 0.5 * h, k1));
    const Y k3 = rhs(tau + 0.5 * h, axpy(y, 0.5 * h, k2));
    const Y k4 = rhs(tau + h, axpy(y, h, k3));
    y.x += h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
    y.v += h / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v);
    y.jx += h / 6 * (k1.jx + 2 * k2.jx + 2 * k3.jx + k4.jx);
    y.jv += h / 6 * (k1.jv + 2 * k2.jv + 2 * k3.jv + k4.jv);
    tau += h;
    if (dom.xi(y.x) > tol) throw DegenerateGeometryError("jacobian_dX_dv: trajectory leaves the domain");
  }
  JacobianResult r;
  r.dX_dv = y.jx;
  r.det = y.jx.determinant();
  const double dt = std::abs(t - s);
  r.norm_ratio = dt > 0 ? y.jx.jacobiSvd().singularValues()[0] / dt : 0.0;
  return r;
}

Mat3 jacobian_dX_dv_fd(double s, double t, const Vec3& x, const Vec3& v, Species sp, const FieldHandle& field,
                       int n_steps, double eps) {
  Mat3 J;
  for (int j = 0; j < 3; ++j) {
    const Vec3 d = eps * Vec3::Unit(j);
    const Vec3 xp = flow({t, x, v + d, sp}, field, s, n_steps).x;
    const Vec3 xm = flow({t, x, v - d, sp}, field, s, n_steps).x;
    J.col(j) = (xp - xm) / (2 * eps);
  }
  return J;
}

BoundarySampler diffuse_sampler() {
  return [](const BoundaryFrame& f, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::normal_distribution<double> N(0.0, 1.0);
    const double vn = std::sqrt(-2.0 * std::log1p(-U(rng)));
    const double a = N(rng), b = N(rng);
    return Vec3(vn * f.n + a * f.tau1 + b * f.tau2);
  };
}

BoundarySampler cutoff_sampler(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw PreconditionError("cutoff_sampler: delta must lie in (0, 1)");
  auto base = diffuse_sampler();
  return [base, delta](const BoundaryFrame& f, std::mt19937_64& rng) {
    for (;;) {
      const Vec3 v = base(f, rng);
      if (v.dot(f.n) > delta && v.norm() < 1.0 / delta) return v;
    }
  };
}

BoundarySampler normal_sampler(double speed) {
  return [speed](const BoundaryFrame& f, std::mt19937_64&) { return Vec3(speed * f.n); };
}

namespace {

double w_sqrt_mu(const Vec3& v, double theta) {
  return std::exp(theta * v.squaredNorm()) * sqrt_mu_of(v);
}

}  // namespace

CycleSequence build_cycles(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp, int k,
                           const BoundarySampler& sampler, const FieldHandle& field, std::mt19937_64& rng,
                           const CycleOptions& opts) {
  if (k < 1) throw PreconditionError("build_cycles: k must be at least 1");
  CycleSequence c;
  ExitRecord e = backward_exit(dom, t, x, v, sp, field, opts.trace);
  if (e.infinite()) return c;
  c.times.push_back(t - e.t_b);
  c.points.push_back(e.x_b);
  c.margins.push_back(e.margin);
  for (int j = 0; j < k && c.times.back() > 0.0; ++j) {
    const BoundaryFrame f = dom.tangent_frame(c.points.back());
    Vec3 vj;
    for (int tries = 0;; ++tries) {
      if (tries > opts.max_resample) throw ConvergenceError("build_cycles: sampler keeps producing incoming velocities");
      vj = sampler(f, rng);
      if (vj.dot(f.n) > 0.0) break;
      ++c.rejections;
    }
    e = backward_exit(dom, c.times.back(), c.points.back(), vj, sp, field, opts.trace);
    c.velocities.push_back(vj);
    if (e.infinite()) break;
    double decay = 1.0;
    if (opts.nu) decay = std::exp(-0.5 * (opts.nu(vj) + opts.nu(e.v_b)) * e.t_b);
    c.exit_velocities.push_back(e.v_b);
    c.weights.push_back(decay * w_sqrt_mu(e.v_b, opts.theta) / w_sqrt_mu(vj, opts.theta));
    c.times.push_back(c.times.back() - e.t_b);
    c.points.push_back(e.x_b);
    c.margins.push_back(e.margin);
  }
  for (double tj : c.times)
    if (tj > 0.0) ++c.k_reached;
  return c;
}

MonteCarloEstimate escape_probability(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp,
                                      int k, std::size_t samples, unsigned long long seed, const FieldHandle& field,
                                      const CycleOptions& opts) {
  if (samples < 1000) throw PreconditionError("escape_probability: at least 1000 samples required");
  if (k < 1) throw PreconditionError("escape_probability: k must be at least 1");
  const auto sampler = diffuse_sampler();
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t m = 0; m < samples; ++m) {
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (m + 1)));
    const CycleSequence c = build_cycles(dom, t, x, v, sp, k, sampler, field, rng, opts);
    double val = 0.0;
    if (c.times.size() == static_cast<std::size_t>(k) + 1 && c.times[k] > 0.0) {
      val = 1.0;
      for (int j = 0; j + 1 < k; ++j) val *= c.weights[j];
    }
    sum += val;
    sum2 += val * val;
  }
  const double n = static_cast<double>(samples);
  MonteCarloEstimate est;
  est.value = sum / n;
  est.stderr_ = std::sqrt(std::max(sum2 / n - est.value * est.value, 0.0) / n);
  return est;
}

}  // namespace vpb
