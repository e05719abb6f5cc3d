#include <doctest.h>

#include "vpb/kinetic_distance.hpp"

#include <cmath>
#include <random>

using namespace vpb;

namespace {

FieldHandle harmonic(double k) {
  return FieldHandle([k](double, const Vec3& x) { return (k * k * x).eval(); },
                     [k](double, const Vec3&) { return (k * k * Mat3::Identity()).eval(); });
}

}  // namespace

TEST_CASE("cutoff function") {
  CHECK(chi(-1.0) == 0.0);
  CHECK(chi(0.0) == 0.0);
  CHECK(chi(1.0) == 1.0);
  CHECK(chi(7.0) == 1.0);
  CHECK(chi(0.5) == 0.5);
  double maxd = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    const double tau = -0.5 + 2.0 * i / 10000.0;
    const double d = chi_prime(tau);
    CHECK(d >= 0.0);
    CHECK(d <= 4.0);
    maxd = std::max(maxd, d);
    if (tau > 0.01 && tau < 0.99) CHECK(d == doctest::Approx((chi(tau + 1e-6) - chi(tau - 1e-6)) / 2e-6).epsilon(1e-6));
  }
  CHECK(maxd == doctest::Approx(1.5));
}

TEST_CASE("kinetic distance values") {
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  AlphaParams p;
  p.eps = 0.1;
  const AlphaValue a = alpha(ball, 1.0, Vec3::Zero(), Vec3(2, 0, 0), Species::plus, FieldHandle::zero(), p);
  CHECK(a.t_b == doctest::Approx(0.5));
  CHECK(a.alpha == doctest::Approx(2.0));
  CHECK(alpha(ball, 0.0, Vec3::Zero(), Vec3(0.01, 0, 0), Species::plus, FieldHandle::zero(), p).alpha == 1.0);
  const AlphaValue s = alpha(ball, 0.0, Vec3(0.3, 0, 0), Vec3::Zero(), Species::plus, FieldHandle::zero(), p);
  CHECK(s.alpha == 1.0);
  CHECK(s.t_b == kInf);
  // Transition: t - t_b + eps = eps / 2.
  const AlphaValue h = alpha(ball, 0.45, Vec3::Zero(), Vec3(2, 0, 0), Species::plus, FieldHandle::zero(), p);
  CHECK(h.alpha == doctest::Approx(0.5 * 2.0 + 0.5));
  CHECK_THROWS_AS(alpha(ball, 0.0, Vec3::Zero(), Vec3(1, 0, 0), Species::plus, FieldHandle::zero(), AlphaParams{0.0}),
                  PreconditionError);
}

TEST_CASE("kinetic distance positivity and growth") {
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  const FieldHandle f = FieldHandle::rotational(Vec3(0.2, 0.5, -0.3));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> N(0.0, 1.5);
  std::uniform_real_distribution<double> U(-0.57, 0.57);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const Vec3 x(U(rng), U(rng), U(rng)), v(N(rng), N(rng), N(rng));
    const double a = alpha(ball, 0.7, x, v, i % 2 ? Species::plus : Species::minus, f).alpha;
    CHECK(a > 0.0);
    worst = std::max(worst, a / std::sqrt(1.0 + v.squaredNorm()));
  }
  MESSAGE("alpha / <v> max " << worst);
  CHECK(worst < 10.0);
}

TEST_CASE("boundary consistency") {
  // Saturated history: alpha is the normal speed at the backward foot.
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  const Vec3 v(0.4, -1.2, 0.5);
  const AlphaValue a = alpha(ball, 5.0, Vec3(0.1, 0.2, 0.0), v, Species::plus, FieldHandle::zero());
  const RayHit r = ball.ray_exit(Vec3(0.1, 0.2, 0.0), -v);
  CHECK(a.alpha == doctest::Approx(std::abs(ball.normal(r.x).dot(v))).epsilon(1e-10));
}

TEST_CASE("transport invariance") {
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  AlphaParams p;
  CHECK(transport_residual(ball, 0.9, Vec3(0.1, 0.2, 0), Vec3(0.5, 0.3, -0.2), Species::plus, FieldHandle::zero(), p,
                           0.05, 0.4) <= 1e-12);
  // Crossing the transition: chi argument between 0 and 1 is invariant.
  const Vec3 x(0.2, 0.1, 0.0), v(1.0, 0.0, 0.0);
  const double tb = ball.ray_exit(x, -v).t;
  CHECK(transport_residual(ball, tb - 0.05, x, v, Species::plus, FieldHandle::zero(), p, 0.05, 0.5) <= 1e-12);

  // Exit at t_b ~ 0.908 backwards from t = 0.86: the cutoff is in its transition along the whole segment.
  const FieldHandle f = harmonic(1.5);
  double prev = 0.0;
  for (double ds : {0.04, 0.02, 0.01}) {
    const double r = transport_residual(ball, 0.86, Vec3(0.2, -0.1, 0.1), Vec3(0.7, 0.4, -0.3), Species::minus, f, p,
                                        ds, 0.32);
    REQUIRE(r > 0.0);
    if (prev > 0) CHECK(prev / r >= 12.0);
    prev = r;
  }
  CHECK(prev < 1e-8);
  // Before the exit window alpha is identically one.
  CHECK(transport_residual(ball, 0.6, Vec3(0.2, -0.1, 0.1), Vec3(0.7, 0.4, -0.3), Species::minus, f, p, 0.02, 0.32) ==
        0.0);
}

TEST_CASE("legacy weight") {
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  const AlphaTilde a = alpha_tilde(ball, 0.0, Vec3(0.9, 0, 0), Vec3(0, 1, 0), Species::plus, FieldHandle::zero());
  CHECK(a.value == doctest::Approx(std::sqrt(0.7961)).epsilon(1e-12));
  CHECK(alpha_tilde(ball, 0.0, Vec3(0, 0, 1), Vec3(1, 1, 0), Species::plus, FieldHandle::zero()).value ==
        doctest::Approx(0.0).epsilon(1e-12));
  const Vec3 n = Vec3(1, 2, 2).normalized();
  CHECK(alpha_tilde(ball, 0.0, n, n, Species::plus, FieldHandle::zero()).value ==
        doctest::Approx(std::abs(ball.grad(n).dot(n))).epsilon(1e-12));
  // Field term: E = -grad phi for the plus species; neumann drops it.
  const FieldHandle g = FieldHandle::constant(Vec3(-1, 0, 0));
  const Vec3 x(0.9, 0, 0), v(0, 1, 0);
  const double xi = -0.19, field_term = -2.0 * (Vec3(1, 0, 0).dot(Vec3(2, 0, 0))) * xi;
  CHECK(alpha_tilde(ball, 0.0, x, v, Species::plus, g).value == doctest::Approx(std::sqrt(0.7961 + field_term)));
  CHECK(alpha_tilde(ball, 0.0, x, v, Species::plus, g, true).value == doctest::Approx(std::sqrt(0.7961)));
  const AlphaTilde c = alpha_tilde(ball, 0.0, x, v, Species::minus, FieldHandle::constant(Vec3(-3, 0, 0)));
  CHECK(c.clamped);
  CHECK(c.value == 0.0);
}

TEST_CASE("velocity lemma residual") {
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  const VelocityLemmaResult free =
      velocity_lemma_residual(ball, {0.0, Vec3(0.85, 0, 0), Vec3(0.1, 1.0, 0.2), Species::plus}, FieldHandle::zero(),
                              0.01, 30);
  MESSAGE("free transport residual " << free.residual);
  CHECK(std::isfinite(free.residual));
  CHECK(free.samples == 29);

  const FieldHandle rot = FieldHandle::rotational(Vec3(0.0, 0.0, 2.0));
  std::mt19937_64 rng(12);
  std::normal_distribution<double> N(0.0, 1.0);
  double worst = 0.0;
  int excluded = 0;
  for (int i = 0; i < 1000; ++i) {
    Vec3 d(N(rng), N(rng), N(rng));
    const Vec3 x = 0.9 * d.normalized();
    Vec3 v(N(rng), N(rng), N(rng));
    if (v.norm() < 0.3) v *= 0.3 / v.norm();
    const auto r = velocity_lemma_residual(ball, {0.0, x, v, i % 2 ? Species::plus : Species::minus}, rot, 0.002, 20);
    worst = std::max(worst, r.residual);
    excluded += r.excluded;
  }
  MESSAGE("tangential field residual " << worst << " excluded " << excluded);
  CHECK(std::isfinite(worst));
}

TEST_CASE("inverse moments") {
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  AlphaParams p;
  p.eps = 0.01;
  CHECK(alpha_inverse_moment(ball, 0.0, 1.5, 0.0, Vec3::Zero(), Species::plus, FieldHandle::zero(), p) ==
        doctest::Approx(4.0 * kPi * 1.5 * 1.5 * 1.5 / 3.0).epsilon(1e-12));
  const double m = alpha_inverse_moment(ball, 0.9, 1.0, 1e3, Vec3::Zero(), Species::plus, FieldHandle::zero(), p);
  CHECK(m == doctest::Approx(4.0 * kPi / 2.1).epsilon(1e-3));

  const FieldHandle f = FieldHandle::rotational(Vec3(0.3, 0.0, 0.4));
  MomentQuadrature coarse{12, 8, 16}, fine{24, 16, 32};
  const Vec3 x(0.5, 0.2, -0.1);
  const double a = alpha_inverse_moment(ball, 0.9, 2.0, 0.3, x, Species::minus, f, {}, coarse);
  const double b = alpha_inverse_moment(ball, 0.9, 2.0, 0.3, x, Species::minus, f, {}, fine);
  MESSAGE("inverse moment " << a << " -> " << b);
  CHECK(b < 1.05 * a);
  CHECK(std::isfinite(b));

  const double tail = alpha_weighted_tail_moment(ball, 0.5, 1.0, 0.5, 1.0, Vec3(0.5, 0, 0), 0.3, x, Species::plus, f);
  MESSAGE("tail moment " << tail);
  CHECK(tail > 0.0);
  CHECK(std::isfinite(tail));
}
