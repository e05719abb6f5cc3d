#pragma once

#include "vpb/characteristics.hpp"

namespace vpb {

/// Cubic smoothstep clamped to [0, 1].
double chi(double tau);
double chi_prime(double tau);

struct AlphaParams {
  double eps = 0.1;
  TraceOptions trace;
  void validate() const;
};

struct AlphaValue {
  double alpha = 1.0;
  double t_b = kInf;
  double margin = 0.0;
  double chi = 0.0;
};

AlphaValue alpha(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp, const FieldHandle& field,
                 const AlphaParams& p = {});

/// max over s = t - j ds, j = 1..span/ds, of |alpha(s, X(s), V(s)) - alpha(t, x, v)|; exit tracing uses steps <= ds
/// while the path is integrated with ds/32.
double transport_residual(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp,
                          const FieldHandle& field, const AlphaParams& p, double ds, double span);

struct AlphaTilde {
  double value = 0.0;
  double radicand = 0.0;
  bool clamped = false;
};

/// Legacy boundary weight; E is the acceleration of species sp at the nearest boundary point.
/// The neumann variant drops the field term.
AlphaTilde alpha_tilde(const ConvexDomain& dom, double t, const Vec3& x, const Vec3& v, Species sp,
                       const FieldHandle& field, bool neumann = false, double collar = 0.25);

struct VelocityLemmaResult {
  double residual = 0.0;  ///< max |d/ds alpha_tilde^2| / ((1 + |V| + 1/|V|) alpha_tilde^2)
  int samples = 0;
  int excluded = 0;       ///< vanishing alpha_tilde or outside the collar
};

/// Along the RK4 trajectory from `start` with n_steps steps of size ds; central differences in s.
VelocityLemmaResult velocity_lemma_residual(const ConvexDomain& dom, const TrajectoryState& start,
                                            const FieldHandle& field, double ds, int n_steps, bool neumann = false,
                                            double collar = 0.25);

struct MomentQuadrature {
  int n_radial = 24;
  int n_theta = 16;
  int n_phi = 32;
};

/// Integral of alpha(t, x, u)^{-sigma} over |u| <= N.
double alpha_inverse_moment(const ConvexDomain& dom, double sigma, double N, double t, const Vec3& x, Species sp,
                            const FieldHandle& field, const AlphaParams& p = {}, const MomentQuadrature& q = {});

/// Integral over |u| >= N of exp(-C |v-u|^2) |v-u|^{kappa-2} alpha(t, x, u)^{-sigma}.
double alpha_weighted_tail_moment(const ConvexDomain& dom, double sigma, double kappa, double C, double N,
                                  const Vec3& v, double t, const Vec3& x, Species sp, const FieldHandle& field,
                                  const AlphaParams& p = {}, const MomentQuadrature& q = {});

}  // namespace vpb
