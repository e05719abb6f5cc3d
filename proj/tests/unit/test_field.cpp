#include <doctest.h>

#include "vpb/field.hpp"

#include <cmath>
#include <random>

using namespace vpb;

namespace {

std::shared_ptr<const SpatialMesh> ball_mesh(double h) {
  return std::make_shared<const SpatialMesh>(ConvexDomain::ball(1.0), h);
}

std::vector<double> sample(const SpatialMesh& m, double (*f)(const Vec3&)) {
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = f(m.point(i));
  return out;
}

double neumann_exact(const Vec3& x) { return x[0] * (3.0 - x.squaredNorm()) / 10.0; }
double dirichlet_exact(const Vec3& x) { return (1.0 - x.squaredNorm()) / 6.0; }
double x1(const Vec3& x) { return x[0]; }
double one(const Vec3&) { return 1.0; }

double max_error(const PoissonSolution& s, double (*f)(const Vec3&)) {
  double e = 0.0;
  for (std::size_t i = 0; i < s.mesh().active_count(); ++i) e = std::max(e, std::abs(s.phi[i] - f(s.mesh().point(i))));
  return e;
}

}  // namespace

TEST_CASE("charge density") {
  const VelocityGrid g(6.0, 16);
  const auto mesh = ball_mesh(0.5);
  DistributionPair f(mesh->size(), g.size());
  for (std::size_t x = 0; x < mesh->size(); ++x)
    for (std::size_t v = 0; v < g.size(); ++v) f.at(Species::plus, x, v) = sqrt_mu_of(g.node(v));
  for (double r : charge_density(g, f)) CHECK(r == doctest::Approx(1.0).epsilon(1e-6));

  DistributionPair e(mesh->size(), g.size());
  for (std::size_t x = 0; x < mesh->size(); ++x)
    for (std::size_t v = 0; v < g.size(); ++v) {
      e.at(Species::plus, x, v) = 0.3 * sqrt_mu_of(g.node(v));
      e.at(Species::minus, x, v) = 0.3 * sqrt_mu_of(g.node(v));
    }
  for (double r : charge_density(g, e)) CHECK(r == 0.0);

  DistributionPair d(mesh->size(), g.size());
  for (std::size_t x = 0; x < mesh->size(); ++x)
    for (std::size_t v = 0; v < g.size(); ++v) d.at(Species::plus, x, v) = mesh->point(x)[0] * sqrt_mu_of(g.node(v));
  const auto rho = charge_density(g, d);
  for (std::size_t x = 0; x < mesh->size(); ++x) CHECK(rho[x] == doctest::Approx(mesh->point(x)[0]).epsilon(1e-6));
}

TEST_CASE("polynomial derivatives against finite differences") {
  Polynomial3 p(4, 1.7);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N;
  for (double& c : p.coeffs()) c = N(rng);
  const Vec3 x(0.3, -0.7, 0.2);
  const double e = 1e-5;
  for (int c = 0; c < 3; ++c) {
    Vec3 d = Vec3::Zero();
    d[c] = e;
    CHECK(p.gradient(x)[c] == doctest::Approx((p.value(x + d) - p.value(x - d)) / (2 * e)).epsilon(1e-8));
    const Vec3 hc = (p.gradient(x + d) - p.gradient(x - d)) / (2 * e);
    for (int r = 0; r < 3; ++r) CHECK(p.hessian(x)(r, c) == doctest::Approx(hc[r]).epsilon(1e-7));
  }
  CHECK(p.size() == 35u);
  CHECK(p.index_of(0, 0, 5) == -1);
}

TEST_CASE("polynomial Poisson solver reproduces the manufactured solutions") {
  const auto mesh = ball_mesh(0.1);
  PoissonOptions o;
  o.method = PoissonMethod::polynomial;
  const PoissonSolver S(mesh, o);
  const auto a = S.solve(sample(*mesh, x1), BoundaryCondition::neumann);
  CHECK(max_error(a, neumann_exact) < 1e-10);
  CHECK(a.gauge_applied);
  CHECK(a.boundary_residual < 1e-10);
  const Vec3 E0 = a.field(Vec3::Zero());
  CHECK(E0[0] == doctest::Approx(-0.3).epsilon(1e-12));
  CHECK(std::abs(E0[1]) < 1e-12);
  CHECK(std::abs(mesh->integrate(a.phi)) < 1e-12);

  const auto b = S.solve(sample(*mesh, one), BoundaryCondition::dirichlet);
  CHECK(max_error(b, dirichlet_exact) < 1e-10);
  CHECK_FALSE(b.gauge_applied);

  const auto z = S.solve(std::vector<double>(mesh->size(), 0.0), BoundaryCondition::neumann);
  for (double p : z.phi) CHECK(std::abs(p) < 1e-14);
  CHECK(z.gradient(Vec3(0.2, 0.1, 0)).norm() < 1e-14);
}

TEST_CASE("ellipsoid Dirichlet problem") {
  // -Delta phi = 1 with phi = 0 on x^2/a^2 + y^2/b^2 + z^2/c^2 = 1 is a quadratic.
  const double a = 1.2, b = 0.9, c = 0.7, s = 2.0 * (1 / (a * a) + 1 / (b * b) + 1 / (c * c));
  auto exact = [&](const Vec3& x) {
    return (1.0 - x[0] * x[0] / (a * a) - x[1] * x[1] / (b * b) - x[2] * x[2] / (c * c)) / s;
  };
  const auto mesh = std::make_shared<const SpatialMesh>(ConvexDomain::ellipsoid(a, b, c), 0.15);
  for (PoissonMethod m : {PoissonMethod::polynomial, PoissonMethod::finite_difference}) {
    PoissonOptions o;
    o.method = m;
    const auto sol = PoissonSolver(mesh, o).solve(sample(*mesh, one), BoundaryCondition::dirichlet);
    double err = 0.0;
    for (std::size_t i = 0; i < mesh->active_count(); ++i) err = std::max(err, std::abs(sol.phi[i] - exact(mesh->point(i))));
    CHECK(err < 1e-9);
  }
}

TEST_CASE("finite-difference Poisson solver") {
  PoissonOptions o;
  o.method = PoissonMethod::finite_difference;
  double prev = kInf;
  for (double h : {0.2, 0.1}) {
    const auto mesh = ball_mesh(h);
    const PoissonSolver S(mesh, o);
    const auto b = S.solve(sample(*mesh, one), BoundaryCondition::dirichlet);
    // Shortley-Weller is exact for quadratics, and so is the three-point gradient.
    CHECK(max_error(b, dirichlet_exact) < 1e-10);
    for (std::size_t i = 0; i < mesh->active_count(); ++i)
      CHECK((b.grad[i] + mesh->point(i) / 3.0).norm() < 1e-9);
    CHECK(b.residual < 1e-9);

    const auto a = S.solve(sample(*mesh, x1), BoundaryCondition::neumann);
    const double err = max_error(a, neumann_exact);
    CHECK(err < 0.6 * prev);
    prev = err;
    CHECK(std::abs(mesh->integrate(a.phi)) < 1e-12);
  }
  CHECK(prev < 0.02);
}

TEST_CASE("Neumann solvability") {
  const auto mesh = ball_mesh(0.25);
  PoissonOptions o;
  o.method = PoissonMethod::polynomial;
  const PoissonSolver S(mesh, o);
  auto rho = sample(*mesh, x1);
  for (double& r : rho) r += 0.05;
  CHECK_THROWS_AS(S.solve(rho, BoundaryCondition::neumann), SolvabilityError);
  try {
    S.solve(rho, BoundaryCondition::neumann);
  } catch (const SolvabilityError& e) {
    CHECK(std::string(e.what()).find("neutrality") != std::string::npos);
  }
  CHECK_NOTHROW(S.solve(rho, BoundaryCondition::dirichlet));
  // Within the tolerance the mean is projected out and recorded.
  auto near = sample(*mesh, x1);
  for (double& r : near) r += 1e-12;
  const auto s = S.solve(near, BoundaryCondition::neumann);
  CHECK(s.neutrality_shift == doctest::Approx(1e-12).epsilon(1e-6));
}

TEST_CASE("Holder seminorms") {
  const auto mesh = ball_mesh(0.1);
  const double sep = 2 * mesh->spacing();
  CHECK(holder_seminorm(*mesh, std::vector<double>(mesh->size(), 3.0), 0.5, sep) == 0.0);
  CHECK(holder_seminorm(*mesh, sample(*mesh, x1), 1.0, sep) == doctest::Approx(1.0).epsilon(1e-12));
  auto sq = [](const Vec3& x) { return x.squaredNorm(); };
  const double s2 = holder_seminorm(*mesh, sample(*mesh, +sq), 1.0, sep);
  // Pairwise sup of |x| + |y| over the node set.
  double rmax = 0.0;
  for (std::size_t i = 0; i < mesh->active_count(); ++i) rmax = std::max(rmax, mesh->point(i).norm());
  CHECK(s2 <= 2.0 * rmax + 1e-12);
  CHECK(s2 >= 2.0 * rmax - 2 * sep);
  CHECK_THROWS_AS(holder_seminorm(*mesh, sample(*mesh, x1), 1.5, sep), PreconditionError);
}

TEST_CASE("interpolation inequality diagnostic") {
  const auto mesh = ball_mesh(0.2);
  PoissonOptions o;
  o.method = PoissonMethod::polynomial;
  const auto sol = PoissonSolver(mesh, o).solve(sample(*mesh, x1), BoundaryCondition::neumann);
  std::vector<double> times;
  for (int i = 0; i <= 50; ++i) times.push_back(0.1 * i);
  const auto rep = interpolation_inequality(sol, times);
  // ||D^2 phi||_inf for x1(3 - |x|^2)/10 is attained on the boundary; positive and finite.
  CHECK(rep.hessian_sup > 0.3);
  CHECK(rep.hessian_sup < 1.0);
  CHECK(rep.constant.size() == times.size());
  CHECK(std::isfinite(rep.max_constant));
  // e^{t/2} A + e^{-t/2} B >= 2 sqrt(A B), which bounds every constant.
  CHECK(rep.max_constant <= rep.hessian_sup / (2.0 * std::sqrt(rep.c1_norm * rep.c2_norm)) + 1e-12);
}
