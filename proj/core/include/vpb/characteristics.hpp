#pragma once

#include "vpb/field.hpp"
#include "vpb/geometry.hpp"

#include <functional>
#include <memory>
#include <random>
#include <vector>

namespace vpb {

/// Time-dependent potential gradient. Particles of species iota accelerate by -iota * grad_phi.
class FieldHandle {
 public:
  using GradFn = std::function<Vec3(double, const Vec3&)>;
  using HessFn = std::function<Mat3(double, const Vec3&)>;

  FieldHandle() = default;
  /// Missing Hessian falls back to central differences of grad. With freeze_negative_time, s < 0 evaluates at s = 0.
  explicit FieldHandle(GradFn grad, HessFn hess = {}, bool freeze_negative_time = true);

  static FieldHandle zero() { return FieldHandle(); }
  static FieldHandle constant(const Vec3& g);
  /// grad_phi = omega x x: tangent to every sphere about the origin.
  static FieldHandle rotational(const Vec3& omega);
  /// Time-independent gradient of a solved potential.
  static FieldHandle from_solution(std::shared_ptr<const PoissonSolution> sol);

  bool is_zero() const { return !grad_; }
  Vec3 grad_phi(double s, const Vec3& x) const;
  Mat3 hess_phi(double s, const Vec3& x) const;
  Vec3 acceleration(Species sp, double s, const Vec3& x) const { return -charge_sign(sp) * grad_phi(s, x); }

 private:
  GradFn grad_;
  HessFn hess_;
  bool freeze_ = true;
  double clamp(double s) const { return freeze_ && s < 0.0 ? 0.0 : s; }
};

struct TrajectoryState {
  double s = 0.0;
  Vec3 x = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Species species = Species::plus;
};

struct TraceOptions {
  double max_step = 0.05;       ///< step cap when the field is nonzero
  double step_fraction = 0.1;   ///< step <= fraction * bounding radius / speed
  double max_time = 1e3;        ///< backward search horizon before the infinite sentinel
  double tol = 1e-10;           ///< |xi(x_b)| relative to the bounding radius
};

/// One classical RK4 step; ds may be negative.
TrajectoryState advance(const TrajectoryState& st, const FieldHandle& field, double ds);
/// n equal RK4 steps to time s_target.
TrajectoryState flow(const TrajectoryState& st, const FieldHandle& field, double s_target, int n_steps);

struct ExitRecord {
  double t_b = kInf;
  Vec3 x_b = Vec3::Zero();
  Vec3 v_b = Vec3::Zero();
  double margin = 0.0;    ///< n(x_b) . v_b
  double residual = 0.0;  ///< |xi(x_b)|
  bool infinite() const { return t_b == kInf; }
};

ExitRecord backward_exit(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp,
                         const FieldHandle& field, const TraceOptions& opts = {});

struct NTCoordinates {
  double x_n = 0.0;  ///< distance to the boundary, positive inside
  Vec3 x_par;        ///< nearest boundary point
  Vec3 normal;       ///< outward normal at x_par
  double v_n = 0.0;  ///< V . (-n)
  Vec3 v_tan;        ///< V - (V . n) n
  double v_par[2] = {0.0, 0.0};  ///< v_tan in the boundary tangent frame
};

/// Requires x within `collar` of the boundary.
NTCoordinates nt_decompose(const ConvexDomain& dom, const Vec3& x, const Vec3& v, double collar = 0.25);

struct JacobianResult {
  Mat3 dX_dv;
  double det = 0.0;
  double norm_ratio = 0.0;  ///< ||dX/dv||_2 / |t - s|
};

/// dX(s; t, x, v)/dv by the variational equations integrated with the flow. Throws if X leaves the domain.
JacobianResult jacobian_dX_dv(const ConvexDomain& dom, double s, double t, const Vec3& x, const Vec3& v, Species sp,
                              const FieldHandle& field, int n_steps = 200);
/// Central finite-difference counterpart.
Mat3 jacobian_dX_dv_fd(double s, double t, const Vec3& x, const Vec3& v, Species sp, const FieldHandle& field,
                       int n_steps = 200, double eps = 1e-5);

struct FieldDecayBounds {
  double lambda1 = 0.0, delta1 = 0.0, lambda2 = 0.0, delta2 = 0.0;
};

/// Draws an outgoing velocity at a boundary point.
using BoundarySampler = std::function<Vec3(const BoundaryFrame&, std::mt19937_64&)>;

/// Exact draw from c_mu mu(v) (n.v) dv on {n.v > 0}.
BoundarySampler diffuse_sampler();
/// Diffuse draw conditioned on n.v > delta and |v| < 1/delta.
BoundarySampler cutoff_sampler(double delta);
/// Deterministic v = speed * n.
BoundarySampler normal_sampler(double speed = 1.0);

struct CycleOptions {
  double theta = 0.0;                    ///< w_theta = exp(theta |v|^2) in the bounce weights
  std::function<double(const Vec3&)> nu;  ///< collision frequency in the exponential factor; empty means 0
  int max_resample = 1000;
  TraceOptions trace;
};

struct CycleSequence {
  std::vector<double> times;    ///< t_1 > t_2 > ...
  std::vector<Vec3> points;     ///< x_1, x_2, ...
  std::vector<Vec3> velocities;  ///< sampled v_1, v_2, ... (one fewer than points unless stopped early)
  std::vector<Vec3> exit_velocities;  ///< v_{j,b} at the end of each sampled segment
  std::vector<double> weights;  ///< per-segment factor e^{-int nu} (w sqrt(mu))(v_b) / (w sqrt(mu))(v_j)
  std::vector<double> margins;  ///< n . v at each exit
  int k_reached = 0;            ///< number of bounces with t_j > 0
  int rejections = 0;
};

/// Alternate backward exits and fresh outgoing velocities, k sampled velocities at most; stops once t_j <= 0.
CycleSequence build_cycles(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp, int k,
                           const BoundarySampler& sampler, const FieldHandle& field, std::mt19937_64& rng,
                           const CycleOptions& opts = {});

struct MonteCarloEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
};

/// Weighted probability that the (k+1)-th backward bounce time is still positive after k diffuse draws.
MonteCarloEstimate escape_probability(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp,
                                      int k, std::size_t samples, unsigned long long seed,
                                      const FieldHandle& field = {}, const CycleOptions& opts = {});

}  // namespace vpb
