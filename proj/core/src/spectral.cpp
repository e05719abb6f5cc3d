#include "vpb/spectral.hpp"

#include <cmath>
#include <random>

namespace vpb {

namespace {

PairValues pair_from(const VelocityGrid& grid, double sp, double sm, const std::function<double(const Vec3&)>& p) {
  PairValues out(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Vec3& v = grid.node(k);
    const double val = p(v) * sqrt_mu_of(v);
    out.plus[k] = sp * val;
    out.minus[k] = sm * val;
  }
  return out;
}

void axpy(double a, const PairValues& x, PairValues& y) {
  for (std::size_t k = 0; k < x.size(); ++k) {
    y.plus[k] += a * x.plus[k];
    y.minus[k] += a * x.minus[k];
  }
}

}  // namespace

NullBasis build_null_basis(const VelocityGrid& grid) {
  NullBasis nb;
  nb.dv = grid.cell_volume();
  const double r2 = 1.0 / std::sqrt(2.0);
  nb.raw[0] = pair_from(grid, 1, 0, [](const Vec3&) { return 1.0; });
  nb.raw[1] = pair_from(grid, 0, 1, [](const Vec3&) { return 1.0; });
  for (int i = 0; i < 3; ++i) nb.raw[2 + i] = pair_from(grid, 1, 1, [=](const Vec3& v) { return v[i] * r2; });
  nb.raw[5] = pair_from(grid, 1, 1, [=](const Vec3& v) { return (v.squaredNorm() - 3.0) * 0.5 * r2; });
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) nb.raw_gram(i, j) = dot(nb.raw[i], nb.raw[j], nb.dv);
  // Gram = R^T R with R upper triangular; ortho = raw R^{-1}.
  const Eigen::LLT<Eigen::Matrix<double, 6, 6>> llt(nb.raw_gram);
  if (llt.info() != Eigen::Success) throw DegenerateGeometryError("null basis Gram matrix is not positive definite");
  const Eigen::Matrix<double, 6, 6> R = llt.matrixU();
  nb.change = R.triangularView<Eigen::Upper>().solve(Eigen::Matrix<double, 6, 6>::Identity());
  for (int j = 0; j < 6; ++j) {
    nb.ortho[j] = PairValues(grid.size());
    for (int i = 0; i <= j; ++i)
      if (nb.change(i, j) != 0.0) axpy(nb.change(i, j), nb.raw[i], nb.ortho[j]);
  }
  return nb;
}

PairValues reconstruct(const NullBasis& basis, const HydroMoments& m) {
  PairValues out(basis.ortho[0].size());
  const double coef[6] = {m.a_plus, m.a_minus, m.b[0], m.b[1], m.b[2], m.c};
  for (int j = 0; j < 6; ++j) axpy(coef[j], basis.ortho[j], out);
  return out;
}

Projected project_P(const NullBasis& basis, const PairValues& f) {
  Projected p;
  double coef[6];
  for (int j = 0; j < 6; ++j) coef[j] = dot(f, basis.ortho[j], basis.dv);
  p.moments = {coef[0], coef[1], Vec3(coef[2], coef[3], coef[4]), coef[5]};
  p.pf = reconstruct(basis, p.moments);
  p.rest = f;
  axpy(-1.0, p.pf, p.rest);
  return p;
}

PairValues p_gamma(const VelocityGrid& grid, const PairValues& f, const Vec3& n) {
  PairValues out(grid.size());
  const double zp = c_mu * halfspace_flux(grid, f.plus, n);
  const double zm = c_mu * halfspace_flux(grid, f.minus, n);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double s = sqrt_mu_of(grid.node(k));
    out.plus[k] = zp * s;
    out.minus[k] = zm * s;
  }
  return out;
}

double beta_residual(const VelocityGrid& grid, BetaKind kind, double beta, int axis) {
  if (axis < 0 || axis > 2) throw PreconditionError("beta_residual: axis must be 0, 1 or 2");
  double acc = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Vec3& v = grid.node(k);
    const double s = v.squaredNorm(), vi2 = v[axis] * v[axis];
    double w = 0.0;
    switch (kind) {
      case BetaKind::a: w = (s - beta) * (s - 3.0) / (2.0 * std::sqrt(2.0)) * vi2; break;
      case BetaKind::b: w = vi2 - beta; break;
      case BetaKind::c: w = (s - beta) * vi2; break;
    }
    acc += w * mu_of(v);
  }
  return acc * grid.cell_volume();
}

CoercivityGap coercivity_gap(const KernelTables& kt, const NullBasis& basis, const PairValues& f) {
  const Projected p = project_P(basis, f);
  const auto& nu = kt.nu();
  double den = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k)
    den += nu[k] * (p.rest.plus[k] * p.rest.plus[k] + p.rest.minus[k] * p.rest.minus[k]);
  den *= basis.dv;
  const double fn = dot(f, f, basis.dv);
  if (den <= 1e-24 * std::max(fn, 1e-300) * kt.nu0()) return {0.0, true};
  return {dot(kt.apply_L(f), f, basis.dv) / den, false};
}

SpectralStudy spectral_study(const KernelTables& kt, const NullBasis& basis, int samples, unsigned long long seed,
                             int max_degree) {
  const VelocityGrid& grid = kt.grid();
  const std::size_t n = grid.size();
  const double dv = basis.dv;
  // Scalar profiles sqrt(mu) v^alpha.
  std::vector<std::array<int, 3>> alpha;
  for (int d = 0; d <= max_degree; ++d)
    for (int a = d; a >= 0; --a)
      for (int b = d - a; b >= 0; --b) alpha.push_back({a, b, d - a - b});
  const std::size_t P = alpha.size();
  std::vector<std::vector<double>> prof(P, std::vector<double>(n));
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3& v = grid.node(k);
      prof[p][k] = std::pow(v[0], alpha[p][0]) * std::pow(v[1], alpha[p][1]) * std::pow(v[2], alpha[p][2]) *
                   sqrt_mu_of(v);
    }
  std::vector<std::vector<double>> a1, a2;
  kt.apply_scalar(prof, a1, a2);
  const auto& nu = kt.nu();
  const std::vector<double> zero(n, 0.0);

  // Pair basis e_{p,s}: profile p in species s. L e = nu e - K e with K from the scalar images.
  const std::size_t M = 2 * P;
  std::vector<PairValues> e(M), Le(M);
  for (std::size_t p = 0; p < P; ++p)
    for (int s = 0; s < 2; ++s) {
      const std::size_t i = 2 * p + s;
      e[i] = PairValues(n);
      (s == 0 ? e[i].plus : e[i].minus) = prof[p];
      Le[i] = s == 0 ? KernelTables::combine(a1[p], a2[p], zero, zero) : KernelTables::combine(zero, zero, a1[p], a2[p]);
      for (std::size_t k = 0; k < n; ++k) {
        Le[i].plus[k] = nu[k] * e[i].plus[k] - Le[i].plus[k];
        Le[i].minus[k] = nu[k] * e[i].minus[k] - Le[i].minus[k];
      }
    }

  SpectralStudy out;
  // Null residuals: expand each orthonormal basis vector in the pair basis by least squares.
  {
    Eigen::MatrixXd G(M, M);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = i; j < M; ++j) G(i, j) = G(j, i) = dot(e[i], e[j], dv);
    const auto ldlt = G.ldlt();
    for (int b = 0; b < 6; ++b) {
      Eigen::VectorXd rhs(M);
      for (std::size_t i = 0; i < M; ++i) rhs[i] = dot(e[i], basis.ortho[b], dv);
      const Eigen::VectorXd c = ldlt.solve(rhs);
      PairValues Lb(n), rec(n);
      for (std::size_t i = 0; i < M; ++i) {
        axpy(c[i], Le[i], Lb);
        axpy(c[i], e[i], rec);
      }
      axpy(-1.0, basis.ortho[b], rec);
      if (norm(rec, dv) > 1e-8) throw Error("spectral_study: null basis not in the profile span");
      out.null_residual[b] = norm(Lb, dv) / norm(basis.ortho[b], dv);
      out.max_null_residual = std::max(out.max_null_residual, out.null_residual[b]);
    }
  }

  // Quadratic forms <L e_i, e_j> and <nu (I-P) e_i, (I-P) e_j>.
  Eigen::MatrixXd A(M, M), D(M, M);
  std::vector<PairValues> r(M);
  for (std::size_t i = 0; i < M; ++i) r[i] = project_P(basis, e[i]).rest;
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      A(i, j) = dot(Le[i], e[j], dv);
      double d = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        d += nu[k] * (r[i].plus[k] * r[j].plus[k] + r[i].minus[k] * r[j].minus[k]);
      D(i, j) = d * dv;
    }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  out.min_gap = kInf;
  double sum = 0.0;
  for (int t = 0; t < samples; ++t) {
    Eigen::VectorXd c(M);
    for (std::size_t i = 0; i < M; ++i) c[i] = N(rng);
    const double den = c.dot(D * c);
    if (den <= 1e-14 * c.squaredNorm()) {
      ++out.degenerate;
      continue;
    }
    const double g = c.dot(A * c) / den;
    out.gaps.push_back(g);
    out.min_gap = std::min(out.min_gap, g);
    sum += g;
  }
  out.mean_gap = out.gaps.empty() ? 0.0 : sum / out.gaps.size();
  return out;
}

// ---------------------------------------------------------------------------------------------
// Test functions

TestFunctions::TestFunctions(const PoissonSolver& solver, const std::vector<double>& a_plus,
                             const std::vector<double>& a_minus, const std::vector<Vec3>& b,
                             const std::vector<double>& c) {
  const std::size_t n = solver.mesh().size();
  if (a_plus.size() != n || a_minus.size() != n || b.size() != n || c.size() != n)
    throw PreconditionError("TestFunctions: moment fields do not match the mesh");
  phi_ap_ = solver.solve(a_plus, BoundaryCondition::neumann);
  phi_am_ = solver.solve(a_minus, BoundaryCondition::neumann);
  for (int j = 0; j < 3; ++j) {
    std::vector<double> bj(n);
    for (std::size_t i = 0; i < n; ++i) bj[i] = b[i][j];
    phi_b_[j] = solver.solve(bj, BoundaryCondition::dirichlet);
  }
  phi_c_ = solver.solve(c, BoundaryCondition::dirichlet);
}

PairValues TestFunctions::psi_a(const VelocityGrid& grid, const Vec3& x) const {
  const Vec3 gp = phi_ap_.gradient(x), gm = phi_am_.gradient(x);
  PairValues out(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Vec3& v = grid.node(k);
    const double w = -(v.squaredNorm() - beta_a) * sqrt_mu_of(v);
    out.plus[k] = w * v.dot(gp);
    out.minus[k] = w * v.dot(gm);
  }
  return out;
}

PairValues TestFunctions::psi_b1(const VelocityGrid& grid, const Vec3& x, int i, int j) const {
  const double d = phi_b_[j].gradient(x)[j];
  PairValues out(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Vec3& v = grid.node(k);
    out.plus[k] = out.minus[k] = (v[i] * v[i] - beta_b) * sqrt_mu_of(v) * d;
  }
  return out;
}

PairValues TestFunctions::psi_b2(const VelocityGrid& grid, const Vec3& x, int i, int j) const {
  if (i == j) throw PreconditionError("psi_b2 requires i != j");
  const double d = phi_b_[i].gradient(x)[j];
  PairValues out(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Vec3& v = grid.node(k);
    out.plus[k] = out.minus[k] = v.squaredNorm() * v[i] * v[j] * sqrt_mu_of(v) * d;
  }
  return out;
}

PairValues TestFunctions::psi_c(const VelocityGrid& grid, const Vec3& x) const {
  const Vec3 g = phi_c_.gradient(x);
  PairValues out(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Vec3& v = grid.node(k);
    out.plus[k] = out.minus[k] = (v.squaredNorm() - beta_c) * sqrt_mu_of(v) * v.dot(g);
  }
  return out;
}

}  // namespace vpb
