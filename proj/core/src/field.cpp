#include "vpb/field.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vpb {

std::vector<double> charge_density(const VelocityGrid& grid, const DistributionPair& f) {
  if (f.n_vel() != grid.size()) throw PreconditionError("charge_density: velocity size mismatch");
  const std::vector<double> smu = tabulate(grid, sqrt_mu_of);
  const double dv = grid.cell_volume();
  std::vector<double> rho(f.n_space(), 0.0);
  for (std::size_t x = 0; x < f.n_space(); ++x) {
    const double* p = f.row(Species::plus, x);
    const double* m = f.row(Species::minus, x);
    double acc = 0.0;
    for (std::size_t v = 0; v < grid.size(); ++v) acc += smu[v] * (p[v] - m[v]);
    rho[x] = acc * dv;
  }
  return rho;
}

// ---------------------------------------------------------------------------------------------
// Polynomial3

Polynomial3::Polynomial3(int degree, double scale) : degree_(degree), scale_(scale) {
  if (degree < 0 || !(scale > 0.0)) throw PreconditionError("Polynomial3: bad degree or scale");
  for (int d = 0; d <= degree; ++d)
    for (int a = d; a >= 0; --a)
      for (int b = d - a; b >= 0; --b) exps_.push_back({a, b, d - a - b});
  c_.assign(exps_.size(), 0.0);
}

int Polynomial3::index_of(int a, int b, int c) const {
  if (a < 0 || b < 0 || c < 0 || a + b + c > degree_) return -1;
  for (std::size_t k = 0; k < exps_.size(); ++k)
    if (exps_[k][0] == a && exps_[k][1] == b && exps_[k][2] == c) return static_cast<int>(k);
  return -1;
}

namespace {

double ipow(double x, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= x;
  return r;
}

}  // namespace

double Polynomial3::basis(std::size_t k, const Vec3& x) const {
  const Vec3 s = x / scale_;
  const auto& e = exps_[k];
  return ipow(s[0], e[0]) * ipow(s[1], e[1]) * ipow(s[2], e[2]);
}

Vec3 Polynomial3::basis_gradient(std::size_t k, const Vec3& x) const {
  const Vec3 s = x / scale_;
  const auto& e = exps_[k];
  const double p0 = ipow(s[0], e[0]), p1 = ipow(s[1], e[1]), p2 = ipow(s[2], e[2]);
  Vec3 g;
  g[0] = e[0] ? e[0] * ipow(s[0], e[0] - 1) * p1 * p2 : 0.0;
  g[1] = e[1] ? e[1] * p0 * ipow(s[1], e[1] - 1) * p2 : 0.0;
  g[2] = e[2] ? e[2] * p0 * p1 * ipow(s[2], e[2] - 1) : 0.0;
  return g / scale_;
}

namespace {

// Per-axis powers s^0..s^n of the scaled coordinates.
std::vector<double> power_table(const Vec3& s, int n) {
  std::vector<double> pw(3 * static_cast<std::size_t>(n + 1));
  for (int d = 0; d < 3; ++d) {
    double* p = pw.data() + d * (n + 1);
    p[0] = 1.0;
    for (int i = 1; i <= n; ++i) p[i] = p[i - 1] * s[d];
  }
  return pw;
}

}  // namespace

double Polynomial3::value(const Vec3& x) const {
  const int n = degree_;
  const std::vector<double> pw = power_table(x / scale_, n);
  const double *px = pw.data(), *py = px + n + 1, *pz = py + n + 1;
  double v = 0.0;
  for (std::size_t k = 0; k < exps_.size(); ++k) {
    const auto& e = exps_[k];
    v += c_[k] * px[e[0]] * py[e[1]] * pz[e[2]];
  }
  return v;
}

Vec3 Polynomial3::gradient(const Vec3& x) const {
  const int n = degree_;
  const std::vector<double> pw = power_table(x / scale_, n);
  const double *px = pw.data(), *py = px + n + 1, *pz = py + n + 1;
  double g0 = 0.0, g1 = 0.0, g2 = 0.0;
  for (std::size_t k = 0; k < exps_.size(); ++k) {
    const double c = c_[k];
    if (c == 0.0) continue;
    const auto& e = exps_[k];
    if (e[0]) g0 += c * e[0] * px[e[0] - 1] * py[e[1]] * pz[e[2]];
    if (e[1]) g1 += c * e[1] * px[e[0]] * py[e[1] - 1] * pz[e[2]];
    if (e[2]) g2 += c * e[2] * px[e[0]] * py[e[1]] * pz[e[2] - 1];
  }
  return Vec3(g0, g1, g2) / scale_;
}

Mat3 Polynomial3::hessian(const Vec3& x) const {
  const Vec3 s = x / scale_;
  Mat3 H = Mat3::Zero();
  for (std::size_t k = 0; k < exps_.size(); ++k) {
    if (c_[k] == 0.0) continue;
    const auto& e = exps_[k];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        std::array<int, 3> d = e;
        double f = d[i];
        d[i] -= 1;
        if (d[i] < 0) continue;
        f *= d[j];
        d[j] -= 1;
        if (d[j] < 0 || f == 0.0) continue;
        H(i, j) += c_[k] * f * ipow(s[0], d[0]) * ipow(s[1], d[1]) * ipow(s[2], d[2]);
      }
  }
  return H / (scale_ * scale_);
}

// ---------------------------------------------------------------------------------------------
// Mesh helpers

std::vector<std::array<int, 3>> lattice_coordinates(const SpatialMesh& mesh) {
  const Vec3 o = mesh.lattice_point(0, 0, 0);
  const double h = mesh.spacing();
  std::vector<std::array<int, 3>> out(mesh.size());
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    const Vec3 r = (mesh.point(i) - o) / h;
    out[i] = {static_cast<int>(std::lround(r[0])), static_cast<int>(std::lround(r[1])),
              static_cast<int>(std::lround(r[2]))};
  }
  return out;
}

namespace {

// Derivative at 0 of the quadratic through (-hl, fl), (0, f0), (hr, fr).
double three_point_slope(double hl, double fl, double f0, double hr, double fr) {
  return -hr / (hl * (hl + hr)) * fl + (hr - hl) / (hl * hr) * f0 + hl / (hr * (hl + hr)) * fr;
}

}  // namespace

std::vector<Vec3> nodal_gradient(const SpatialMesh& mesh, const std::vector<double>& phi) {
  const auto lc = lattice_coordinates(mesh);
  const double h = mesh.spacing();
  std::vector<Vec3> g(mesh.size(), Vec3::Zero());
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      std::array<int, 3> lo = lc[i], hi = lc[i];
      lo[c] -= 1;
      hi[c] += 1;
      const int a = mesh.index(lo[0], lo[1], lo[2]), b = mesh.index(hi[0], hi[1], hi[2]);
      if (a >= 0 && b >= 0) {
        g[i][c] = (phi[b] - phi[a]) / (2.0 * h);
      } else if (b >= 0) {
        std::array<int, 3> hh = hi;
        hh[c] += 1;
        const int b2 = mesh.index(hh[0], hh[1], hh[2]);
        g[i][c] = b2 >= 0 ? (-3.0 * phi[i] + 4.0 * phi[b] - phi[b2]) / (2.0 * h) : (phi[b] - phi[i]) / h;
      } else if (a >= 0) {
        std::array<int, 3> ll = lo;
        ll[c] -= 1;
        const int a2 = mesh.index(ll[0], ll[1], ll[2]);
        g[i][c] = a2 >= 0 ? (3.0 * phi[i] - 4.0 * phi[a] + phi[a2]) / (2.0 * h) : (phi[i] - phi[a]) / h;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------------------------
// PoissonSolution

double PoissonSolution::potential(const Vec3& x) const {
  if (poly_) return poly_->value(x);
  return mesh_->interpolate(phi, x);
}

Vec3 PoissonSolution::gradient(const Vec3& x) const {
  if (poly_) return poly_->gradient(x);
  const auto st = mesh_->stencil(x);
  Vec3 g = Vec3::Zero();
  for (int q = 0; q < st.count; ++q) g += st.w[q] * grad[st.node[q]];
  return g;
}

Mat3 PoissonSolution::hessian(const Vec3& x) const {
  if (poly_) return poly_->hessian(x);
  const double h = mesh_->spacing();
  Mat3 H;
  for (int c = 0; c < 3; ++c) {
    Vec3 e = Vec3::Zero();
    e[c] = 0.5 * h;
    H.col(c) = (gradient(x + e) - gradient(x - e)) / h;
  }
  return 0.5 * (H + H.transpose());
}

// ---------------------------------------------------------------------------------------------
// PoissonSolver

struct PoissonSolver::FdCache {
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  // Dirichlet: nodes pinned to zero.
  std::vector<char> pinned;
  std::size_t unknowns = 0;
};

PoissonSolver::PoissonSolver(std::shared_ptr<const SpatialMesh> mesh, PoissonOptions opts)
    : mesh_(std::move(mesh)), opts_(opts) {
  if (!mesh_) throw PreconditionError("PoissonSolver: null mesh");
}
PoissonSolver::~PoissonSolver() = default;
PoissonSolver::PoissonSolver(PoissonSolver&&) noexcept = default;
PoissonSolver& PoissonSolver::operator=(PoissonSolver&&) noexcept = default;

PoissonSolution PoissonSolver::solve(const std::vector<double>& rho_in, BoundaryCondition bc) const {
  const SpatialMesh& mesh = *mesh_;
  if (rho_in.size() != mesh.size()) throw PreconditionError("solve_poisson: rho size does not match the mesh");
  std::vector<double> rho = rho_in;
  double shift = 0.0;
  if (bc == BoundaryCondition::neumann) {
    std::vector<double> a(rho.size());
    for (std::size_t i = 0; i < rho.size(); ++i) a[i] = std::abs(rho[i]);
    const double total = mesh.integrate(rho), l1 = mesh.integrate(a);
    if (std::abs(total) > opts_.neutrality_tol * l1) {
      std::ostringstream os;
      os << "Neumann Poisson problem is not solvable: |int rho| = " << std::abs(total) << " exceeds "
         << opts_.neutrality_tol << " * ||rho||_1 = " << opts_.neutrality_tol * l1 << " (neutrality condition)";
      throw SolvabilityError(os.str());
    }
    double vol = 0.0;
    for (double w : mesh.weights()) vol += w;
    shift = total / vol;
    for (double& r : rho) r -= shift;
  }
  PoissonSolution s = opts_.method == PoissonMethod::polynomial ? solve_polynomial(rho, bc) : solve_fd(rho, bc);
  s.neutrality_shift = shift;
  return s;
}

void PoissonSolver::finish(PoissonSolution& s) const {
  const SpatialMesh& mesh = *mesh_;
  if (s.bc == BoundaryCondition::neumann) {
    double vol = 0.0;
    for (double w : mesh.weights()) vol += w;
    const double mean = mesh.integrate(s.phi) / vol;
    for (double& p : s.phi) p -= mean;
    if (s.poly_) {
      const int c0 = s.poly_->index_of(0, 0, 0);
      s.poly_->coeffs()[c0] -= mean;
    }
    s.gauge_applied = true;
  }
  // Boundary residual on the boundary quadrature points.
  const auto bq = mesh.domain().boundary_quadrature(12, 24);
  double br = 0.0;
  for (std::size_t j = 0; j < bq.points.size(); ++j) {
    const double r = s.bc == BoundaryCondition::dirichlet ? s.potential(bq.points[j])
                                                          : s.gradient(bq.points[j]).dot(bq.normals[j]);
    br = std::max(br, std::abs(r));
  }
  s.boundary_residual = br;
}

PoissonSolution PoissonSolver::solve_polynomial(const std::vector<double>& rho, BoundaryCondition bc) const {
  const SpatialMesh& mesh = *mesh_;
  const double R = mesh.domain().bounding_radius();
  const int D = opts_.poly_degree;
  const Polynomial3 pr(D, R), pf(D + 2, R);

  // Weighted least-squares fit of rho on active nodes.
  const std::size_t na = mesh.active_count();
  Eigen::MatrixXd A(na, pr.size());
  Eigen::VectorXd b(na);
  for (std::size_t i = 0; i < na; ++i) {
    const double w = std::sqrt(std::max(mesh.weight(i), 1e-3 * std::pow(mesh.spacing(), 3)));
    for (std::size_t k = 0; k < pr.size(); ++k) A(i, k) = w * pr.basis(k, mesh.point(i));
    b[i] = w * rho[i];
  }
  const Eigen::VectorXd rc = A.completeOrthogonalDecomposition().solve(b);

  // Laplacian from degree D+2 to degree D in scaled coordinates.
  Eigen::MatrixXd Lap = Eigen::MatrixXd::Zero(pr.size(), pf.size());
  for (std::size_t k = 0; k < pf.size(); ++k) {
    const auto& e = pf.exponent(k);
    for (int c = 0; c < 3; ++c) {
      if (e[c] < 2) continue;
      std::array<int, 3> d = e;
      d[c] -= 2;
      Lap(pr.index_of(d[0], d[1], d[2]), k) += e[c] * (e[c] - 1);
    }
  }
  Lap /= R * R;
  const Eigen::VectorXd part = (-Lap).completeOrthogonalDecomposition().solve(rc);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(Lap);
  const Eigen::MatrixXd harm = lu.kernel();

  Polynomial3 q = pf;
  for (std::size_t k = 0; k < pf.size(); ++k) q.coeffs()[k] = part[k];

  const auto bq = mesh.domain().boundary_quadrature(opts_.boundary_theta, opts_.boundary_phi);
  const std::size_t nb = bq.points.size();
  Eigen::MatrixXd B(nb, harm.cols());
  Eigen::VectorXd rhs(nb);
  for (std::size_t j = 0; j < nb; ++j) {
    const double w = std::sqrt(bq.area[j]);
    const Vec3& x = bq.points[j];
    const Vec3& n = bq.normals[j];
    for (Eigen::Index c = 0; c < harm.cols(); ++c) {
      double val = 0.0;
      for (std::size_t k = 0; k < pf.size(); ++k) {
        if (harm(k, c) == 0.0) continue;
        val += harm(k, c) * (bc == BoundaryCondition::dirichlet ? pf.basis(k, x) : pf.basis_gradient(k, x).dot(n));
      }
      B(j, c) = w * val;
    }
    rhs[j] = -w * (bc == BoundaryCondition::dirichlet ? q.value(x) : q.gradient(x).dot(n));
  }
  const Eigen::VectorXd hc = B.completeOrthogonalDecomposition().solve(rhs);
  const Eigen::VectorXd coef = part + harm * hc;
  for (std::size_t k = 0; k < pf.size(); ++k) q.coeffs()[k] = coef[k];

  PoissonSolution s;
  s.bc = bc;
  s.method = PoissonMethod::polynomial;
  s.mesh_ = mesh_;
  s.poly_ = q;
  s.phi.resize(mesh.size());
  s.grad.resize(mesh.size());
  for (std::size_t i = 0; i < mesh.size(); ++i) s.phi[i] = q.value(mesh.point(i));
  double res = 0.0;
  Polynomial3 fit = pr;
  for (std::size_t k = 0; k < pr.size(); ++k) fit.coeffs()[k] = rc[k];
  for (std::size_t i = 0; i < na; ++i) res = std::max(res, std::abs(fit.value(mesh.point(i)) - rho[i]));
  s.residual = res;
  for (std::size_t i = 0; i < mesh.size(); ++i) s.grad[i] = q.gradient(mesh.point(i));
  finish(s);
  return s;
}

PoissonSolution PoissonSolver::solve_fd(const std::vector<double>& rho, BoundaryCondition bc) const {
  const SpatialMesh& mesh = *mesh_;
  const ConvexDomain& dom = mesh.domain();
  const std::size_t n = mesh.size(), na = mesh.active_count();
  const double h = mesh.spacing();
  const auto lc = lattice_coordinates(mesh);
  auto& cache = fd_[bc == BoundaryCondition::neumann ? 0 : 1];
  // Per-active-node arm lengths toward each axis neighbour (Dirichlet) for the operator and residual.
  struct Arm {
    int node;      // neighbour index, or -1 for the boundary
    double len;
  };
  std::vector<std::array<Arm, 6>> arms(na);
  std::vector<char> pinned(na, 0);
  for (std::size_t i = 0; i < na; ++i) {
    for (int c = 0; c < 3; ++c)
      for (int sgn = 0; sgn < 2; ++sgn) {
        std::array<int, 3> q = lc[i];
        q[c] += sgn ? 1 : -1;
        const int id = mesh.index(q[0], q[1], q[2]);
        Arm a{id, h};
        if (bc == BoundaryCondition::dirichlet && (id < 0 || static_cast<std::size_t>(id) >= na)) {
          Vec3 dir = Vec3::Zero();
          dir[c] = sgn ? 1.0 : -1.0;
          const RayHit hit = dom.ray_exit(mesh.point(i), dir);
          a = {-1, std::min(h, hit.finite() ? hit.t : h)};
          if (a.len < 1e-8 * h) pinned[i] = 1;
        }
        if (bc == BoundaryCondition::neumann && id < 0)
          throw DegenerateGeometryError("Poisson FD: active node without a ghost neighbour");
        arms[i][2 * c + sgn] = a;
      }
  }

  const bool neu = bc == BoundaryCondition::neumann;
  const std::size_t nu = neu ? n + 1 : na;
  if (!cache) {
    std::vector<Eigen::Triplet<double>> T;
    for (std::size_t i = 0; i < na; ++i) {
      if (pinned[i]) {
        T.emplace_back(i, i, 1.0);
        continue;
      }
      double diag = 0.0;
      for (int c = 0; c < 3; ++c) {
        const Arm& l = arms[i][2 * c];
        const Arm& r = arms[i][2 * c + 1];
        // -u'' on a nonuniform three-point stencil.
        const double cl = 2.0 / (l.len * (l.len + r.len)), cr = 2.0 / (r.len * (l.len + r.len));
        diag += cl + cr;
        if (l.node >= 0) T.emplace_back(i, l.node, -cl);
        if (r.node >= 0) T.emplace_back(i, r.node, -cr);
      }
      T.emplace_back(i, i, diag);
      if (neu) T.emplace_back(i, n, 1.0);
    }
    if (neu) {
      // Ghost rows: phi(ghost) equals phi at the mirror point across the tangent plane.
      for (std::size_t g = na; g < n; ++g) {
        const Vec3& xg = mesh.point(g);
        const Projection pj = dom.nearest_boundary(xg);
        const Vec3 nrm = dom.normal(pj.point);
        const double d = (xg - pj.point).norm();
        // Symmetric mirror keeps the normal difference centred on the boundary point.
        const Vec3 m = pj.point - std::max(d, 0.25 * h) * nrm;
        const auto st = mesh.stencil(m);
        T.emplace_back(g, g, 1.0);
        for (int q = 0; q < st.count; ++q) T.emplace_back(g, st.node[q], -st.w[q]);
      }
      // Gauge row pins the node nearest the centre; the mean is removed afterwards.
      std::size_t c0 = 0;
      for (std::size_t i = 1; i < na; ++i)
        if (mesh.point(i).norm() < mesh.point(c0).norm()) c0 = i;
      T.emplace_back(n, c0, 1.0);
    }
    Eigen::SparseMatrix<double> M(nu, nu);
    M.setFromTriplets(T.begin(), T.end());
    M.makeCompressed();
    cache = std::make_unique<FdCache>();
    cache->lu.analyzePattern(M);
    cache->lu.factorize(M);
    if (cache->lu.info() != Eigen::Success) {
      cache.reset();
      throw ConvergenceError("Poisson FD: sparse factorization failed");
    }
    cache->pinned = pinned;
    cache->unknowns = nu;
  }
  Eigen::VectorXd b = Eigen::VectorXd::Zero(nu);
  for (std::size_t i = 0; i < na; ++i) b[i] = pinned[i] ? 0.0 : rho[i];
  const Eigen::VectorXd x = cache->lu.solve(b);

  PoissonSolution s;
  s.bc = bc;
  s.method = PoissonMethod::finite_difference;
  s.mesh_ = mesh_;
  s.phi.assign(n, 0.0);
  for (std::size_t i = 0; i < (neu ? n : na); ++i) s.phi[i] = x[i];
  // Residual of the discrete equations on active nodes.
  double res = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    if (pinned[i]) continue;
    double lap = 0.0;
    for (int c = 0; c < 3; ++c) {
      const Arm& l = arms[i][2 * c];
      const Arm& r = arms[i][2 * c + 1];
      const double ul = l.node >= 0 ? s.phi[l.node] : 0.0, ur = r.node >= 0 ? s.phi[r.node] : 0.0;
      lap += 2.0 / (l.len + r.len) * ((ur - s.phi[i]) / r.len - (s.phi[i] - ul) / l.len);
    }
    res = std::max(res, std::abs(-lap - rho[i] + (neu ? x[n] : 0.0)));
  }
  s.residual = res;
  if (!neu) {
    // Gradient with the boundary value on cut arms; ghosts then follow by extrapolation.
    s.grad.assign(n, Vec3::Zero());
    for (std::size_t i = 0; i < na; ++i)
      for (int c = 0; c < 3; ++c) {
        const Arm& l = arms[i][2 * c];
        const Arm& r = arms[i][2 * c + 1];
        const double ul = l.node >= 0 ? s.phi[l.node] : 0.0, ur = r.node >= 0 ? s.phi[r.node] : 0.0;
        s.grad[i][c] = pinned[i] ? 0.0 : three_point_slope(l.len, ul, s.phi[i], r.len, ur);
      }
    for (std::size_t i = 0; i < na; ++i) {
      if (!pinned[i]) continue;
      // On-boundary node: second-order one-sided differences into the domain.
      for (int c = 0; c < 3; ++c) {
        for (int sgn : {1, -1}) {
          std::array<int, 3> q1 = lc[i], q2 = lc[i];
          q1[c] += sgn;
          q2[c] += 2 * sgn;
          const int a1 = mesh.index(q1[0], q1[1], q1[2]), a2 = mesh.index(q2[0], q2[1], q2[2]);
          if (a1 < 0 || a2 < 0 || static_cast<std::size_t>(a1) >= na || static_cast<std::size_t>(a2) >= na) continue;
          s.grad[i][c] = sgn * (-3.0 * s.phi[i] + 4.0 * s.phi[a1] - s.phi[a2]) / (2.0 * h);
          break;
        }
      }
    }
    mesh.fill_ghosts(s.phi);
    std::vector<double> flat(3 * n);
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) flat[3 * i + c] = s.grad[i][c];
    mesh.fill_ghosts(flat, 3);
    for (std::size_t i = na; i < n; ++i) s.grad[i] = Vec3(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
    finish(s);
  } else {
    double vol = 0.0;
    for (double w : mesh.weights()) vol += w;
    const double mean = mesh.integrate(s.phi) / vol;
    for (double& p : s.phi) p -= mean;
    s.grad = nodal_gradient(mesh, s.phi);
    finish(s);
  }
  return s;
}

// ---------------------------------------------------------------------------------------------
// Holder seminorms and the interpolation diagnostic

namespace {

template <class Diff>
double holder_scan(const SpatialMesh& mesh, double a, double min_sep, Diff diff) {
  if (mesh.active_count() < 2) throw PreconditionError("holder_seminorm: need at least two nodes");
  if (!(a > 0.0 && a <= 1.0)) throw PreconditionError("holder_seminorm: exponent must lie in (0, 1]");
  double best = 0.0;
  const std::size_t na = mesh.active_count();
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = i + 1; j < na; ++j) {
      const double r = (mesh.point(i) - mesh.point(j)).norm();
      if (r < min_sep) continue;
      best = std::max(best, diff(i, j) / std::pow(r, a));
    }
  return best;
}

}  // namespace

double holder_seminorm(const SpatialMesh& mesh, const std::vector<double>& u, double a, double min_sep) {
  return holder_scan(mesh, a, min_sep, [&](std::size_t i, std::size_t j) { return std::abs(u[i] - u[j]); });
}

double holder_seminorm(const SpatialMesh& mesh, const std::vector<Vec3>& u, double a, double min_sep) {
  return holder_scan(mesh, a, min_sep, [&](std::size_t i, std::size_t j) { return (u[i] - u[j]).norm(); });
}

double holder_seminorm(const SpatialMesh& mesh, const std::vector<Mat3>& u, double a, double min_sep) {
  return holder_scan(mesh, a, min_sep, [&](std::size_t i, std::size_t j) { return (u[i] - u[j]).norm(); });
}

InterpolationReport interpolation_inequality(const PoissonSolution& sol, const std::vector<double>& times,
                                             double lambda0, double d1, double d2) {
  const SpatialMesh& mesh = sol.mesh();
  const std::size_t na = mesh.active_count();
  std::vector<double> phi(na);
  std::vector<Vec3> g(na);
  std::vector<Mat3> H(na);
  double sup0 = 0.0, sup1 = 0.0, sup2 = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    const Vec3& x = mesh.point(i);
    phi[i] = sol.potential(x);
    g[i] = sol.gradient(x);
    H[i] = sol.hessian(x);
    sup0 = std::max(sup0, std::abs(phi[i]));
    sup1 = std::max(sup1, g[i].norm());
    sup2 = std::max(sup2, H[i].norm());
  }
  const double sep = 2.0 * mesh.spacing();
  InterpolationReport rep;
  rep.hessian_sup = sup2;
  rep.c1_norm = sup0 + sup1 + holder_seminorm(mesh, g, 1.0 - d1, sep);
  rep.c2_norm = sup0 + sup1 + sup2 + holder_seminorm(mesh, H, d2, sep);
  for (double t : times) {
    const double denom = std::exp(d1 * lambda0 * t) * rep.c1_norm + std::exp(-d2 * lambda0 * t) * rep.c2_norm;
    rep.t.push_back(t);
    rep.constant.push_back(sup2 / denom);
    rep.max_constant = std::max(rep.max_constant, sup2 / denom);
  }
  return rep;
}

}  // namespace vpb
