#include "vpb/solver.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace vpb;

namespace {

SolverConfig small_config() {
  SolverConfig c;
  c.mesh_h = 0.5;
  c.v_max = 4.0;
  c.n_v = 6;
  c.nonlinear = false;
  c.horizon = 0.05;
  c.segments = 2;
  c.picard_max = 3;
  return c;
}

double compact_bump(const Vec3& x, double r) {
  const double q = 1.0 - x.squaredNorm() / (r * r);
  return q > 0.0 ? q * q : 0.0;
}

}  // namespace

TEST_CASE("diffuse BC maps a sqrt(mu) trace to itself and zero to zero") {
  const VelocityGrid g(6.0, 24);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 5; ++rep) {
    const Vec3 n = Vec3(nd(rng), nd(rng), nd(rng)).normalized();
    PairValues tr(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) tr.plus[k] = tr.minus[k] = sqrt_mu_of(g.node(k));
    const PairValues out = apply_diffuse_bc(g, tr, n);
    double err = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k)
      err = std::max(err, std::abs(out.plus[k] / tr.plus[k] - 1.0) + std::abs(out.minus[k] / tr.minus[k] - 1.0));
    CHECK(err < 1e-6);
    const PairValues zero = apply_diffuse_bc(g, PairValues(g.size()), n);
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(zero.plus[k] == 0.0);
  }
}

TEST_CASE("null flux of the reconstructed F vanishes up to velocity truncation") {
  const VelocityGrid g(6.0, 24);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 5; ++rep) {
    const Vec3 n = Vec3(nd(rng), nd(rng), nd(rng)).normalized();
    PairValues tr(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      const Vec3& v = g.node(k);
      tr.plus[k] = 0.1 * (v[0] + v[1] * v[1]) * sqrt_mu_of(v);
      tr.minus[k] = -0.2 * v.dot(n) * sqrt_mu_of(v);
    }
    CHECK(null_flux_residual(g, tr, n) < 1e-8);
  }
}

TEST_CASE("decay fit") {
  const std::vector<double> t{0.0, 0.1, 0.2, 0.3};
  std::vector<double> y;
  for (double s : t) y.push_back(2.0 * std::exp(-1.7 * s));
  const DecayFit f = fit_decay(t, y);
  CHECK(!f.degenerate);
  CHECK(f.lambda == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(std::exp(f.intercept) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(fit_decay(t, {0.0, 0.0, 0.0, 0.0}).degenerate);
  CHECK(fit_decay(t, {1.0, 1.0, 1.0, 1.0}).degenerate);
  CHECK(fit_decay({0.0}, {1.0}).degenerate);
}

TEST_CASE("config validation") {
  SolverConfig c = small_config();
  c.amplitude = -1.0;
  CHECK_THROWS_AS(Solver{c}, ConfigError);
  c = small_config();
  c.theta = 0.3;
  CHECK_THROWS_AS(Solver{c}, ConfigError);
  c = small_config();
  c.n_v = 2;
  CHECK_THROWS_AS(Solver{c}, ConfigError);
  c = small_config();
  c.horizon = 0.0;
  CHECK_THROWS_AS(Solver{c}, ConfigError);
}

TEST_CASE("initialize: residual bookkeeping and errors") {
  SolverConfig c = small_config();
  c.v_max = 6.0;
  c.n_v = 12;
  c.collisions = false;
  const Solver s(c);

  const IterationState z = s.initialize([](const Vec3&, const Vec3&, Species) { return 0.0; });
  CHECK(z.compatibility_residual == 0.0);
  CHECK(z.neutrality_residual == 0.0);
  CHECK(z.start.phi);
  CHECK(z.history.front().linf_E == 0.0);

  const double d = 0.05;
  const IterationState iso = s.initialize([d](const Vec3&, const Vec3& v, Species) { return d * sqrt_mu_of(v); });
  CHECK(iso.compatibility_residual < 1e-8);
  CHECK(iso.neutrality_residual < 1e-14);

  const IterationState drift =
      s.initialize([d](const Vec3&, const Vec3& v, Species) { return d * v[0] * sqrt_mu_of(v); });
  CHECK(drift.compatibility_residual > 1e-3 * d);

  CHECK_THROWS_AS(s.initialize([](const Vec3&, const Vec3& v, Species) { return -2.0 * sqrt_mu_of(v); }),
                  PreconditionError);
  CHECK_THROWS_AS(s.initialize([d](const Vec3&, const Vec3& v, Species sp) {
                    return sp == Species::plus ? d * sqrt_mu_of(v) : 0.0;
                  }),
                  SolvabilityError);
}

TEST_CASE("picard sweep: equilibrium stays put") {
  SolverConfig c = small_config();
  const Solver s(c);
  IterationState st = s.initialize([](const Vec3&, const Vec3&, Species) { return 0.0; });
  s.picard_sweep(st);
  CHECK(st.increments.back() == 0.0);
  for (double x : st.current.f.raw()) CHECK(x == 0.0);
}

TEST_CASE("picard sweep: uniform sqrt(mu) data is a steady state of transport with diffuse reflection") {
  SolverConfig c = small_config();
  c.v_max = 6.0;
  c.n_v = 12;
  c.collisions = false;
  const Solver s(c);
  const double d = 0.02;
  IterationState st = s.initialize([d](const Vec3&, const Vec3& v, Species) { return d * sqrt_mu_of(v); });
  s.picard_sweep(st);
  double err = 0.0;
  for (std::size_t i = 0; i < s.mesh().active_count(); ++i)
    for (std::size_t k = 0; k < s.grid().size(); ++k)
      err = std::max(err, std::abs(st.current.f.at(Species::plus, i, k) / (d * sqrt_mu_of(s.grid().node(k))) - 1.0));
  CHECK(err < 1e-6);
}

TEST_CASE("picard sweep preserves neutrality of antisymmetric charge data") {
  SolverConfig c = small_config();
  c.amplitude = 0.01;
  const Solver s(c);
  IterationState st = s.initialize();
  for (int l = 0; l < 2; ++l) s.picard_sweep(st);
  const DiagnosticsRecord d = s.diagnose(st.current);
  CHECK(std::abs(d.neutrality) < 1e-12 * (d.mass_plus + d.mass_minus));
  CHECK(d.linf_E > 0.0);
  CHECK(st.increments[1] < st.increments[0]);
}

TEST_CASE("Green identity: zero data and exact lattice transport") {
  SolverConfig c = small_config();
  c.collisions = false;
  c.field = false;
  {
    const Solver s(c);
    IterationState st = s.initialize([](const Vec3&, const Vec3&, Species) { return 0.0; });
    s.picard_sweep(st);
    CHECK(s.green_identity_residual(st.start, st.current) == 0.0);
  }
  // Velocities with all |v_i| = 1/2 move one lattice diagonal in time 1/2, so the bump is shifted exactly.
  c.mesh_h = 0.25;
  c.v_max = 3.0;
  c.n_v = 6;
  c.horizon = 0.5;
  const Solver s(c);
  const InitialProfile f0 = [](const Vec3& x, const Vec3& v, Species) {
    const bool slow = (v.array().abs() < 1.0).all();
    return slow ? 0.3 * compact_bump(x, 0.2) * sqrt_mu_of(v) : 0.0;
  };
  IterationState st = s.initialize(f0);
  s.picard_sweep(st);
  const double n0 = std::pow(s.diagnose(st.start).l2_f, 2);
  REQUIRE(n0 > 0.0);
  CHECK(s.green_identity_residual(st.start, st.current) <= 1e-12 * n0);
}

TEST_CASE("Green identity: free transport of a smooth bump improves under refinement") {
  SolverConfig c = small_config();
  c.collisions = false;
  c.field = false;
  c.v_max = 3.0;
  c.n_v = 6;
  c.horizon = 0.05;
  const InitialProfile f0 = [](const Vec3& x, const Vec3& v, Species) {
    return 0.3 * compact_bump(x, 0.6) * sqrt_mu_of(v);
  };
  double rel[2];
  const double hs[2] = {0.5, 0.25};
  for (int r = 0; r < 2; ++r) {
    c.mesh_h = hs[r];
    const Solver s(c);
    IterationState st = s.initialize(f0);
    s.picard_sweep(st);
    rel[r] = s.green_identity_residual(st.start, st.current) / std::pow(s.diagnose(st.start).l2_f, 2);
  }
  MESSAGE("relative Green imbalance h=0.5: " << rel[0] << ", h=0.25: " << rel[1]);
  CHECK(rel[1] < 0.75 * rel[0]);
}

TEST_CASE("time march: equilibrium gives flat diagnostics and a degenerate fit") {
  SolverConfig c = small_config();
  c.initial = InitialKind::zero;
  const Solver s(c);
  const TimeMarchResult r = s.time_march();
  REQUIRE(r.series.size() == 3);
  for (const auto& d : r.series) {
    CHECK(d.mass_plus == r.series.front().mass_plus);
    CHECK(d.l2_f == 0.0);
  }
  CHECK(r.fit.degenerate);
  CHECK(!r.aborted);
  std::ostringstream os;
  write_csv(os, r.series);
  const std::string csv = os.str();
  CHECK(csv.rfind("t,mass_plus,mass_minus,neutrality,l2_f,linf_wf,linf_E,null_flux_max,picard_increment,min_F\n", 0) ==
        0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("time march without the field conserves mass per species") {
  SolverConfig c = small_config();
  c.field = false;
  c.initial = InitialKind::dipole;
  c.amplitude = 0.01;
  const Solver s(c);
  const TimeMarchResult r = s.time_march();
  CHECK(r.max_mass_drift < 5e-3);
  CHECK(r.max_neutrality < 1e-8);
  CHECK(r.negative_count == 0);
  for (const auto& d : r.series) CHECK(d.linf_E == 0.0);
}
