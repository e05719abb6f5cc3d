#include "vpb/solver.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace vpb {

namespace {

// Exponential integrator weights for a source linear on [0, d] under decay rate z / d.
void expo_weights(double z, double d, double& a, double& b, double& decay) {
  decay = std::exp(-z);
  if (std::abs(z) < 1e-4) {
    a = d * (0.5 - z / 3.0 + z * z / 8.0);
    b = d * (0.5 - z / 6.0 + z * z / 24.0);
    return;
  }
  const double e1 = (1.0 - decay) / z;
  a = d * (e1 - decay) / z;
  b = d * (1.0 - e1) / z;
}

std::string where(const Vec3& x, const Vec3& v, Species sp) {
  std::ostringstream os;
  os << "x=(" << x[0] << "," << x[1] << "," << x[2] << ") v=(" << v[0] << "," << v[1] << "," << v[2]
     << ") species=" << (sp == Species::plus ? "+" : "-");
  return os.str();
}

}  // namespace

void SolverConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("SolverConfig: ") + what);
  };
  need(mesh_h > 0.0, "mesh_h must be positive");
  need(v_max > 0.0, "v_max must be positive");
  need(n_v >= 4, "n_v must be at least 4");
  need(sphere_theta >= 2 && sphere_phi >= 4, "sphere quadrature too coarse");
  need(boundary_theta >= 2 && boundary_phi >= 4, "boundary quadrature too coarse");
  need(poisson_degree >= 1, "poisson_degree must be at least 1");
  need(eps > 0.0, "eps must be positive");
  need(0.0 < theta_tilde && theta_tilde < theta && theta < 0.25, "need 0 < theta_tilde < theta < 1/4");
  need(amplitude >= 0.0, "amplitude must be nonnegative");
  need(picard_max >= 1, "picard_max must be at least 1");
  need(picard_tol >= 0.0, "picard_tol must be nonnegative");
  need(horizon > 0.0, "horizon must be positive");
  need(segments >= 1, "segments must be at least 1");
  need(substeps >= 1, "substeps must be at least 1");
  need(delta > 0.0, "delta must be positive");
  need(neutrality_tol > 0.0, "neutrality_tol must be positive");
  if (domain == DomainKind::ellipsoid) need((axes.array() > 0.0).all(), "ellipsoid axes must be positive");
  need(domain != DomainKind::level_set, "level_set domains are not configurable");
  const double R = domain == DomainKind::ball ? 1.0 : axes.maxCoeff();
  need(mesh_h <= R, "mesh_h exceeds the domain size");
}

ConvexDomain SolverConfig::make_domain() const {
  if (domain == DomainKind::ellipsoid) return ConvexDomain::ellipsoid(axes[0], axes[1], axes[2]);
  return ConvexDomain::ball(1.0);
}

PairValues apply_diffuse_bc(const VelocityGrid& grid, const PairValues& outgoing, const Vec3& n) {
  const std::vector<double> w = halfspace_weights(grid, n, +1);
  PairValues out(grid.size());
  for (int s = 0; s < 2; ++s) {
    const Species sp = species_at(s);
    double z = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) z += w[k] * outgoing[sp][k];
    for (std::size_t k = 0; k < grid.size(); ++k) out[sp][k] = c_mu * sqrt_mu_of(grid.node(k)) * z;
  }
  return out;
}

double null_flux_residual(const VelocityGrid& grid, const PairValues& outgoing, const Vec3& n) {
  const std::vector<double> wp = halfspace_weights(grid, n, +1), wm = halfspace_weights(grid, n, -1);
  const PairValues in = apply_diffuse_bc(grid, outgoing, n);
  double r = 0.0;
  for (int s = 0; s < 2; ++s) {
    const Species sp = species_at(s);
    double acc = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double sm = sqrt_mu_of(grid.node(k));
      acc += wp[k] * (sm + outgoing[sp][k]) - wm[k] * (sm + in[sp][k]);
    }
    r = std::max(r, std::abs(acc));
  }
  return r;
}

DecayFit fit_decay(const std::vector<double>& t, const std::vector<double>& y) {
  if (t.size() != y.size()) throw PreconditionError("fit_decay: size mismatch");
  DecayFit fit;
  std::vector<double> tt, ly;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (y[i] > 0.0 && std::isfinite(y[i])) {
      tt.push_back(t[i]);
      ly.push_back(std::log(y[i]));
    }
  if (tt.size() < 2) return fit;
  const double n = static_cast<double>(tt.size());
  double st = 0, sl = 0, stt = 0, stl = 0;
  for (std::size_t i = 0; i < tt.size(); ++i) {
    st += tt[i];
    sl += ly[i];
    stt += tt[i] * tt[i];
    stl += tt[i] * ly[i];
  }
  const double den = n * stt - st * st;
  if (!(den > 0.0)) return fit;
  const double slope = (n * stl - st * sl) / den;
  fit.lambda = -slope;
  fit.intercept = (sl - slope * st) / n;
  const double spread = *std::max_element(ly.begin(), ly.end()) - *std::min_element(ly.begin(), ly.end());
  fit.degenerate = spread < 1e-12;
  return fit;
}

Solver::Solver(SolverConfig cfg) : cfg_(std::move(cfg)), grid_(cfg_.v_max, cfg_.n_v) {
  cfg_.validate();
  domain_ = std::make_unique<ConvexDomain>(cfg_.make_domain());
  mesh_ = std::make_shared<SpatialMesh>(*domain_, cfg_.mesh_h);
  if (cfg_.collisions) {
    kernel_ = std::make_unique<KernelTables>(grid_);
    if (cfg_.nonlinear)
      gamma_ = std::make_unique<GammaOperator>(grid_, SphereQuadrature(cfg_.sphere_theta, cfg_.sphere_phi));
  }
  if (cfg_.field) {
    PoissonOptions po;
    po.method = PoissonMethod::polynomial;
    po.poly_degree = cfg_.poisson_degree;
    po.neutrality_tol = cfg_.neutrality_tol;
    poisson_ = std::make_unique<PoissonSolver>(mesh_, po);
  }
  bq_ = domain_->boundary_quadrature(cfg_.boundary_theta, cfg_.boundary_phi);
  // Boundary mesh nodes become zero-area samples so their incoming traces are looked up exactly.
  const double tol = domain_->boundary_tolerance();
  for (std::size_t i = 0; i < mesh_->active_count(); ++i) {
    const Vec3& x = mesh_->point(i);
    if (std::abs(domain_->xi(x)) <= tol) {
      bq_.points.push_back(x);
      bq_.normals.push_back(domain_->normal(x));
      bq_.area.push_back(0.0);
    }
  }
  for (const Vec3& n : bq_.normals) {
    w_out_.push_back(halfspace_weights(grid_, n, +1));
    w_in_.push_back(halfspace_weights(grid_, n, -1));
  }
  smu_ = tabulate(grid_, sqrt_mu_of);
  mu_ = tabulate(grid_, mu_of);
  const double th = cfg_.theta;
  wt_ = tabulate(grid_, [th](const Vec3& v) { return std::exp(th * v.squaredNorm()); });
  nu_ = kernel_ ? kernel_->nu() : std::vector<double>(grid_.size(), 0.0);
}

Solver::~Solver() = default;

InitialProfile Solver::initial_profile() const {
  const double M = cfg_.amplitude;
  const double a = cfg_.domain == DomainKind::ellipsoid ? cfg_.axes[0] : 1.0;
  switch (cfg_.initial) {
    case InitialKind::zero:
    case InitialKind::custom:
      return [](const Vec3&, const Vec3&, Species) { return 0.0; };
    case InitialKind::isotropic:
      return [M](const Vec3&, const Vec3& v, Species) { return M * sqrt_mu_of(v); };
    case InitialKind::dipole:
      return [M, a](const Vec3& x, const Vec3& v, Species sp) {
        return M * (charge_sign(sp) * x[0] / a + (v[0] * v[0] - 1.0) / std::sqrt(2.0)) * sqrt_mu_of(v);
      };
  }
  return {};
}

Solver::VStencil Solver::vstencil(const Vec3& v) const {
  VStencil s;
  const int n = grid_.n();
  const double h = grid_.spacing();
  int i0[3];
  double fr[3];
  for (int d = 0; d < 3; ++d) {
    const double q = (v[d] + grid_.v_max()) / h - 0.5;
    i0[d] = std::clamp(static_cast<int>(std::floor(q)), 0, n - 2);
    fr[d] = std::clamp(q - i0[d], 0.0, 1.0);
  }
  for (int q = 0; q < 8; ++q) {
    const int dx = q >> 2 & 1, dy = q >> 1 & 1, dz = q & 1;
    s.idx[q] = grid_.flat(i0[0] + dx, i0[1] + dy, i0[2] + dz);
    s.w[q] = (dx ? fr[0] : 1 - fr[0]) * (dy ? fr[1] : 1 - fr[1]) * (dz ? fr[2] : 1 - fr[2]);
  }
  return s;
}

std::size_t Solver::nearest_sample(const Vec3& x) const {
  std::size_t best = 0;
  double bd = kInf;
  for (std::size_t j = 0; j < bq_.points.size(); ++j) {
    const double d = (bq_.points[j] - x).squaredNorm();
    if (d < bd) {
      bd = d;
      best = j;
    }
  }
  return best;
}

void Solver::fill_ghosts(DistributionPair& f) const {
  const std::size_t block = f.n_space() * f.n_vel();
  for (int s = 0; s < 2; ++s) {
    auto first = f.raw().begin() + static_cast<std::ptrdiff_t>(s * block);
    std::vector<double> tmp(first, first + static_cast<std::ptrdiff_t>(block));
    mesh_->fill_ghosts(tmp, f.n_vel());
    std::copy(tmp.begin(), tmp.end(), first);
  }
}

PairValues Solver::trace_at(const DistributionPair& f, const Vec3& x) const {
  const SpatialMesh::Stencil st = mesh_->stencil(x);
  PairValues out(grid_.size());
  for (int s = 0; s < 2; ++s) {
    const Species sp = species_at(s);
    auto& o = out[sp];
    for (int q = 0; q < st.count; ++q) {
      const double* row = f.row(sp, static_cast<std::size_t>(st.node[q]));
      for (std::size_t k = 0; k < o.size(); ++k) o[k] += st.w[q] * row[k];
    }
  }
  return out;
}

LevelData Solver::make_level(double t, DistributionPair f) const {
  const std::size_t ns = mesh_->size(), nv = grid_.size(), na = mesh_->active_count();
  if (f.n_space() != ns || f.n_vel() != nv) throw PreconditionError("make_level: distribution shape mismatch");
  LevelData lv;
  lv.t = t;
  fill_ghosts(f);
  lv.f = std::move(f);
  lv.f_ratio = lv.f;
  for (int s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < ns; ++i) {
      double* r = lv.f_ratio.row(species_at(s), i);
      for (std::size_t k = 0; k < nv; ++k) r[k] /= smu_[k];
    }

  lv.source = DistributionPair(ns, nv);
  lv.loss.assign(ns * nv, 0.0);
  if (kernel_) {
    std::vector<PairValues> rows(na, PairValues(nv));
    for (std::size_t i = 0; i < na; ++i)
      for (int s = 0; s < 2; ++s) {
        const double* r = lv.f.row(species_at(s), i);
        rows[i][species_at(s)].assign(r, r + nv);
      }
    const std::vector<PairValues> Kf = kernel_->apply_K(rows);
    for (std::size_t i = 0; i < na; ++i) {
      PairValues src = Kf[i];
      if (gamma_) {
        const PairValues g = gamma_->gain(rows[i], rows[i]);
        const std::vector<double> lf = gamma_->loss_frequency(rows[i]);
        for (std::size_t k = 0; k < nv; ++k) {
          src.plus[k] += g.plus[k];
          src.minus[k] += g.minus[k];
          lv.loss[i * nv + k] = lf[k];
        }
      }
      for (int s = 0; s < 2; ++s) {
        const Species sp = species_at(s);
        double* out = lv.source.row(sp, i);
        for (std::size_t k = 0; k < nv; ++k) out[k] = src[sp][k] / smu_[k];
      }
    }
    fill_ghosts(lv.source);
    mesh_->fill_ghosts(lv.loss, nv);
  }

  if (poisson_) {
    const std::vector<double> rho = charge_density(grid_, lv.f);
    lv.phi = std::make_shared<const PoissonSolution>(poisson_->solve(rho, BoundaryCondition::neumann));
  }

  lv.trace.assign(2 * bq_.points.size(), 0.0);
  for (std::size_t j = 0; j < bq_.points.size(); ++j) {
    const PairValues tr = trace_at(lv.f, bq_.points[j]);
    for (int s = 0; s < 2; ++s) {
      double z = 0.0;
      for (std::size_t k = 0; k < nv; ++k) z += w_out_[j][k] * tr[species_at(s)][k];
      lv.trace[2 * j + s] = z;
    }
  }
  return lv;
}

IterationState Solver::initialize() const { return initialize(initial_profile()); }

IterationState Solver::initialize(const InitialProfile& f0) const {
  const std::size_t ns = mesh_->size(), nv = grid_.size(), na = mesh_->active_count();
  DistributionPair f(ns, nv);
  for (int s = 0; s < 2; ++s) {
    const Species sp = species_at(s);
    for (std::size_t i = 0; i < na; ++i) {
      const Vec3& x = mesh_->point(i);
      double* row = f.row(sp, i);
      for (std::size_t k = 0; k < nv; ++k) {
        const Vec3& v = grid_.node(k);
        row[k] = f0(x, v, sp);
        const double F = mu_[k] + smu_[k] * row[k];
        if (!std::isfinite(row[k]) || F < 0.0)
          throw PreconditionError("initialize: F0 = mu + sqrt(mu) f0 is negative or not finite at " + where(x, v, sp));
      }
    }
  }
  IterationState st;
  LevelData lv0 = make_level(0.0, std::move(f));
  const DiagnosticsRecord d0 = diagnose(lv0);
  st.neutrality_residual = std::abs(d0.neutrality) / (d0.mass_plus + d0.mass_minus);
  if (st.neutrality_residual > cfg_.neutrality_tol) {
    std::ostringstream os;
    os << "initialize: initial data is not neutral, |int int (F+ - F-)| / mass = " << st.neutrality_residual
       << " exceeds " << cfg_.neutrality_tol;
    throw SolvabilityError(os.str());
  }
  st.start = std::move(lv0);

  // Compatibility: f0 on the incoming half versus its diffuse image, weighted by w.
  double comp = 0.0;
  for (std::size_t j = 0; j < bq_.points.size(); ++j) {
    const PairValues tr = trace_at(st.start.f, bq_.points[j]);
    for (int s = 0; s < 2; ++s) {
      const Species sp = species_at(s);
      const double z = st.start.trace[2 * j + s];
      for (std::size_t k = 0; k < nv; ++k) {
        if (bq_.normals[j].dot(grid_.node(k)) >= 0.0) continue;
        comp = std::max(comp, wt_[k] * std::abs(tr[sp][k] - c_mu * smu_[k] * z));
      }
    }
  }
  st.compatibility_residual = comp;
  st.current = st.start;
  st.current.t = st.start.t + cfg_.horizon;
  st.history.push_back(d0);
  return st;
}

FieldHandle Solver::segment_field(const IterationState& st) const {
  if (!poisson_) return FieldHandle::zero();
  const auto p0 = st.start.phi, p1 = st.current.phi;
  const double t0 = st.start.t, T = st.current.t - st.start.t;
  return FieldHandle(
      [p0, p1, t0, T](double s, const Vec3& x) {
        const double th = std::clamp((s - t0) / T, 0.0, 1.0);
        return Vec3((1.0 - th) * p0->gradient(x) + th * p1->gradient(x));
      },
      [p0, p1, t0, T](double s, const Vec3& x) {
        const double th = std::clamp((s - t0) / T, 0.0, 1.0);
        return Mat3((1.0 - th) * p0->hessian(x) + th * p1->hessian(x));
      },
      false);
}

double Solver::phase_value(const IterationState& st, const FieldHandle& field, std::size_t node, std::size_t k,
                           Species sp) const {
  const double t0 = st.start.t, t1 = st.current.t, T = t1 - t0;
  const Vec3& x = mesh_->point(node);
  const Vec3& v = grid_.node(k);
  const std::size_t nv = grid_.size();
  const double iota = charge_sign(sp);
  const double tol = domain_->boundary_tolerance();
  const double drift = 0.5 + 2.0 * cfg_.theta;

  // Backward path t1 = s_0 > s_1 > ... > s_m.
  std::vector<TrajectoryState> path{TrajectoryState{t1, x, v, sp}};
  bool hit = false;
  if (std::abs(domain_->xi(x)) <= tol && domain_->normal(x).dot(v) <= 0.0) {
    hit = true;
  } else {
    const double ds = T / cfg_.substeps;
    TraceOptions topt;
    topt.max_step = ds;
    for (int i = 0; i < cfg_.substeps; ++i) {
      const TrajectoryState& cur = path.back();
      TrajectoryState next = advance(cur, field, -ds);
      if (domain_->xi(next.x) > tol) {
        topt.max_time = 2.0 * ds;
        const ExitRecord e = backward_exit(*domain_, cur.s, cur.x, cur.v, sp, field, topt);
        if (!e.infinite() && cur.s - e.t_b > t0 - 1e-14) {
          path.push_back(TrajectoryState{cur.s - e.t_b, e.x_b, e.v_b, sp});
          hit = true;
          break;
        }
      }
      if (i == cfg_.substeps - 1) next.s = t0;
      path.push_back(next);
    }
  }

  auto ratio = [&](const DistributionPair& tab, const SpatialMesh::Stencil& xs, const VStencil& vs) {
    double acc = 0.0;
    for (int q = 0; q < xs.count; ++q) {
      const double* row = tab.row(sp, static_cast<std::size_t>(xs.node[q]));
      double a = 0.0;
      for (int r = 0; r < 8; ++r) a += vs.w[r] * row[vs.idx[r]];
      acc += xs.w[q] * a;
    }
    return acc;
  };
  auto loss_at = [&](const std::vector<double>& tab, const SpatialMesh::Stencil& xs, const VStencil& vs) {
    double acc = 0.0;
    for (int q = 0; q < xs.count; ++q) {
      const std::size_t base = static_cast<std::size_t>(xs.node[q]) * nv;
      double a = 0.0;
      for (int r = 0; r < 8; ++r) a += vs.w[r] * tab[base + vs.idx[r]];
      acc += xs.w[q] * a;
    }
    return acc;
  };

  const std::size_t m = path.size();
  std::vector<double> nu_eff(m), src(m);
  for (std::size_t i = 0; i < m; ++i) {
    const TrajectoryState& p = path[i];
    const double th = std::clamp((p.s - t0) / T, 0.0, 1.0);
    const SpatialMesh::Stencil xs = mesh_->stencil(p.x);
    const VStencil vs = vstencil(p.v);
    double nu = 0.0;
    for (int r = 0; r < 8; ++r) nu += vs.w[r] * nu_[vs.idx[r]];
    double s_ratio = 0.0, lf = 0.0;
    if (kernel_) {
      s_ratio = (1.0 - th) * ratio(st.start.source, xs, vs) + th * ratio(st.current.source, xs, vs);
      if (gamma_) lf = (1.0 - th) * loss_at(st.start.loss, xs, vs) + th * loss_at(st.current.loss, xs, vs);
    }
    const Vec3 g = field.is_zero() ? Vec3::Zero() : field.grad_phi(p.s, p.x);
    const double vg = p.v.dot(g);
    const double sm = sqrt_mu_of(p.v);
    const double w = std::exp(cfg_.theta * p.v.squaredNorm());
    nu_eff[i] = nu + lf + iota * vg * drift;
    src[i] = w * sm * (s_ratio - iota * vg);
  }

  const TrajectoryState& e = path.back();
  double H;
  const double we = std::exp(cfg_.theta * e.v.squaredNorm());
  if (hit) {
    const std::size_t j = nearest_sample(e.x);
    const double th = std::clamp((e.s - t0) / T, 0.0, 1.0);
    const int s = index_of(sp);
    const double z = (1.0 - th) * st.start.trace[2 * j + s] + th * st.current.trace[2 * j + s];
    H = we * c_mu * sqrt_mu_of(e.v) * z;
  } else {
    H = we * sqrt_mu_of(e.v) * ratio(st.start.f_ratio, mesh_->stencil(e.x), vstencil(e.v));
  }
  for (std::size_t i = m - 1; i-- > 0;) {
    const double d = path[i].s - path[i + 1].s;
    double a, b, decay;
    expo_weights(0.5 * (nu_eff[i] + nu_eff[i + 1]) * d, d, a, b, decay);
    H = H * decay + a * src[i + 1] + b * src[i];
  }
  return H / wt_[k];
}

void Solver::picard_sweep(IterationState& st) const {
  const std::size_t ns = mesh_->size(), nv = grid_.size(), na = mesh_->active_count();
  const FieldHandle field = segment_field(st);
  DistributionPair next(ns, nv);
  for (int s = 0; s < 2; ++s) {
    const Species sp = species_at(s);
    for (std::size_t i = 0; i < na; ++i) {
      double* row = next.row(sp, i);
      for (std::size_t k = 0; k < nv; ++k) {
        try {
          row[k] = phase_value(st, field, i, k, sp);
        } catch (const Error& err) {
          throw Error("picard_sweep: characteristic failed at " + where(mesh_->point(i), grid_.node(k), sp) + ": " +
                      err.what());
        }
      }
    }
  }
  if (!next.finite()) throw ConvergenceError("picard_sweep: non-finite iterate");
  const double t1 = st.current.t;
  LevelData lv = make_level(t1, std::move(next));
  st.increments.push_back(increment_norm(lv.f, st.current.f));
  st.current = std::move(lv);
  ++st.iterate;
}

void Solver::advance_segment(IterationState& st) const {
  st.start = st.current;
  st.current.t = st.start.t + cfg_.horizon;
  st.iterate = 0;
  st.increments.clear();
}

double Solver::increment_norm(const DistributionPair& a, const DistributionPair& b) const {
  const double p = 1.0 + cfg_.delta, dv = grid_.cell_volume();
  double acc = 0.0;
  for (int s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < mesh_->size(); ++i) {
      const double* ra = a.row(species_at(s), i);
      const double* rb = b.row(species_at(s), i);
      double r = 0.0;
      for (std::size_t k = 0; k < grid_.size(); ++k) r += std::pow(std::abs(ra[k] - rb[k]), p);
      acc += mesh_->weight(i) * dv * r;
    }
  return std::pow(acc, 1.0 / p);
}

DiagnosticsRecord Solver::diagnose(const LevelData& lv) const {
  DiagnosticsRecord d;
  d.t = lv.t;
  const std::size_t nv = grid_.size(), na = mesh_->active_count();
  const double dv = grid_.cell_volume();
  double l2 = 0.0, charge = 0.0;
  d.min_F = kInf;
  d.max_F = -kInf;
  for (int s = 0; s < 2; ++s) {
    const Species sp = species_at(s);
    double mass = 0.0;
    for (std::size_t i = 0; i < mesh_->size(); ++i) {
      const double* r = lv.f.row(sp, i);
      const double wx = mesh_->weight(i) * dv;
      for (std::size_t k = 0; k < nv; ++k) {
        const double F = mu_[k] + smu_[k] * r[k];
        mass += wx * F;
        charge += charge_sign(sp) * wx * smu_[k] * r[k];
        l2 += wx * r[k] * r[k];
        if (i >= na) continue;
        d.linf_wf = std::max(d.linf_wf, wt_[k] * std::abs(r[k]));
        d.min_F = std::min(d.min_F, F);
        d.max_F = std::max(d.max_F, F);
      }
    }
    (sp == Species::plus ? d.mass_plus : d.mass_minus) = mass;
  }
  for (int s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < na; ++i) {
      const double* r = lv.f.row(species_at(s), i);
      for (std::size_t k = 0; k < nv; ++k)
        if (mu_[k] + smu_[k] * r[k] < -1e-6 * d.max_F) ++d.negative_count;
    }
  d.neutrality = charge;
  d.l2_f = std::sqrt(l2);
  if (lv.phi)
    for (std::size_t i = 0; i < na; ++i) d.linf_E = std::max(d.linf_E, lv.phi->grad[i].norm());

  double out2 = 0.0, in2 = 0.0;
  for (std::size_t j = 0; j < bq_.points.size(); ++j) {
    const Vec3& n = bq_.normals[j];
    const PairValues tr = trace_at(lv.f, bq_.points[j]);
    for (int s = 0; s < 2; ++s) {
      const Species sp = species_at(s);
      const double z = lv.trace[2 * j + s];
      double flux = 0.0;
      for (std::size_t k = 0; k < nv; ++k) {
        const double fin = c_mu * smu_[k] * z;
        flux += w_out_[j][k] * (smu_[k] + tr[sp][k]) - w_in_[j][k] * (smu_[k] + fin);
        const double vn = n.dot(grid_.node(k));
        if (vn > 0.0)
          out2 += bq_.area[j] * dv * vn * tr[sp][k] * tr[sp][k];
        else
          in2 -= bq_.area[j] * dv * vn * fin * fin;
      }
      d.null_flux_max = std::max(d.null_flux_max, std::abs(flux));
    }
  }
  d.boundary_out = std::sqrt(out2);
  d.boundary_in = std::sqrt(in2);
  return d;
}

double Solver::green_identity_residual(const LevelData& a, const LevelData& b, double p) const {
  if (!(p >= 1.0)) throw PreconditionError("green_identity_residual: p must be at least 1");
  const std::size_t nv = grid_.size();
  const double dv = grid_.cell_volume();
  const double T = b.t - a.t;
  struct Terms {
    double norm = 0.0, bulk = 0.0, out = 0.0, in = 0.0;
  };
  auto terms = [&](const LevelData& lv) {
    Terms r;
    for (int s = 0; s < 2; ++s) {
      const Species sp = species_at(s);
      const double iota = charge_sign(sp);
      for (std::size_t i = 0; i < mesh_->size(); ++i) {
        const double* f = lv.f.row(sp, i);
        const double* src = lv.source.row(sp, i);
        const Vec3 g = lv.phi ? lv.phi->gradient(mesh_->point(i)) : Vec3::Zero();
        const double wx = mesh_->weight(i) * dv;
        for (std::size_t k = 0; k < nv; ++k) {
          const double vg = grid_.node(k).dot(g);
          const double G = -(nu_[k] + lv.loss[i * nv + k] + 0.5 * iota * vg) * f[k] + smu_[k] * (src[k] - iota * vg);
          const double af = std::abs(f[k]);
          r.norm += wx * std::pow(af, p);
          r.bulk += wx * p * std::copysign(std::pow(af, p - 1.0), f[k]) * G;
        }
      }
    }
    for (std::size_t j = 0; j < bq_.points.size(); ++j) {
      if (bq_.area[j] == 0.0) continue;
      const Vec3& n = bq_.normals[j];
      const PairValues tr = trace_at(lv.f, bq_.points[j]);
      for (int s = 0; s < 2; ++s) {
        const Species sp = species_at(s);
        const double z = lv.trace[2 * j + s];
        for (std::size_t k = 0; k < nv; ++k) {
          const double vn = n.dot(grid_.node(k));
          if (vn > 0.0)
            r.out += bq_.area[j] * dv * vn * std::pow(std::abs(tr[sp][k]), p);
          else
            r.in -= bq_.area[j] * dv * vn * std::pow(std::abs(c_mu * smu_[k] * z), p);
        }
      }
    }
    return r;
  };
  const Terms ta = terms(a), tb = terms(b);
  return std::abs(tb.norm - ta.norm + 0.5 * T * (ta.out + tb.out) - 0.5 * T * (ta.in + tb.in) -
                  0.5 * T * (ta.bulk + tb.bulk));
}

TimeMarchResult Solver::time_march() const { return time_march(initial_profile()); }

TimeMarchResult Solver::time_march(const InitialProfile& f0) const {
  TimeMarchResult res;
  IterationState st = initialize(f0);
  res.compatibility_residual = st.compatibility_residual;
  res.series.push_back(st.history.front());
  for (int seg = 0; seg < cfg_.segments; ++seg) {
    if (seg > 0) advance_segment(st);
    int growth = 0;
    for (int l = 0; l < cfg_.picard_max; ++l) {
      picard_sweep(st);
      const auto& inc = st.increments;
      if (inc.size() >= 2 && inc.back() > inc[inc.size() - 2]) {
        if (++growth >= 3) {
          std::ostringstream os;
          os << "Picard divergence at t=" << st.current.t << ": increments grew for 3 consecutive sweeps";
          res.aborted = true;
          res.abort_reason = os.str();
          break;
        }
      } else {
        growth = 0;
      }
      if (inc.back() == 0.0) break;
      if (seg > 0 && inc.back() <= cfg_.picard_tol * increment_norm(st.current.f, DistributionPair(mesh_->size(), grid_.size())))
        break;
    }
    res.segment_increments.push_back(st.increments);
    DiagnosticsRecord rec = diagnose(st.current);
    rec.iterate = st.iterate;
    rec.picard_increment = st.increments.empty() ? 0.0 : st.increments.back();
    rec.green_imbalance = green_identity_residual(st.start, st.current, 2.0);
    res.series.push_back(rec);
    if (res.aborted) break;
  }

  std::vector<double> ts, ys;
  for (const auto& r : res.series) {
    ts.push_back(r.t);
    ys.push_back(r.linf_wf);
  }
  res.fit = fit_decay(ts, ys);
  const DiagnosticsRecord& r0 = res.series.front();
  double minF = kInf, maxF = -kInf;
  for (auto& r : res.series) {
    r.lambda = res.fit.lambda;
    res.max_mass_drift = std::max({res.max_mass_drift, std::abs(r.mass_plus - r0.mass_plus) / r0.mass_plus,
                                   std::abs(r.mass_minus - r0.mass_minus) / r0.mass_minus});
    res.max_neutrality = std::max(res.max_neutrality, std::abs(r.neutrality) / (r.mass_plus + r.mass_minus));
    res.max_null_flux = std::max(res.max_null_flux, r.null_flux_max);
    res.max_green = std::max(res.max_green, r.green_imbalance);
    res.negative_count += r.negative_count;
    minF = std::min(minF, r.min_F);
    maxF = std::max(maxF, r.max_F);
  }
  res.min_F_ratio = minF / maxF;
  res.final_f = st.current.f;
  return res;
}

void write_csv(std::ostream& os, const std::vector<DiagnosticsRecord>& series) {
  os << "t,mass_plus,mass_minus,neutrality,l2_f,linf_wf,linf_E,null_flux_max,picard_increment,min_F\n";
  os << std::setprecision(17);
  for (const auto& r : series)
    os << r.t << ',' << r.mass_plus << ',' << r.mass_minus << ',' << r.neutrality << ',' << r.l2_f << ','
       << r.linf_wf << ',' << r.linf_E << ',' << r.null_flux_max << ',' << r.picard_increment << ',' << r.min_F
       << '\n';
}

}  // namespace vpb
