#include "vpb/phase_grid.hpp"

#include "vpb/quadrature.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>

namespace vpb {

VelocityGrid::VelocityGrid(double v_max, int n) : v_max_(v_max), n_(n) {
  if (!(v_max > 0.0) || n < 2) throw PreconditionError("VelocityGrid: need v_max > 0 and N >= 2");
  h_ = 2.0 * v_max / n;
  nodes_.reserve(static_cast<std::size_t>(n) * n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) nodes_.emplace_back(coord(i), coord(j), coord(k));
  const double inside = std::erf(v_max / std::sqrt(2.0));
  eps_trunc_ = 1.0 - inside * inside * inside;
}

double VelocityGrid::interpolate(const std::vector<double>& g, const Vec3& v) const {
  double s[3];
  int i0[3];
  for (int d = 0; d < 3; ++d) {
    const double q = (v[d] + v_max_) / h_ - 0.5;
    if (q < 0.0 || q > n_ - 1) return 0.0;
    i0[d] = std::min(static_cast<int>(q), n_ - 2);
    s[d] = q - i0[d];
  }
  double acc = 0.0;
  for (int a = 0; a < 2; ++a) {
    const double wa = a ? s[0] : 1.0 - s[0];
    for (int b = 0; b < 2; ++b) {
      const double wb = wa * (b ? s[1] : 1.0 - s[1]);
      const std::size_t base = flat(i0[0] + a, i0[1] + b, i0[2]);
      acc += wb * ((1.0 - s[2]) * g[base] + s[2] * g[base + 1]);
    }
  }
  return acc;
}

void WeightParams::validate() const {
  if (!(0.0 < theta_tilde && theta_tilde < theta && theta < 0.25))
    throw PreconditionError("weight exponents must satisfy 0 < theta_tilde < theta < 1/4");
}

MaxwellianValues maxwellian(const Vec3& v, double theta) {
  const double v2 = v.squaredNorm();
  return {std::exp(-0.5 * v2) / std::pow(2.0 * kPi, 1.5), std::exp(-0.25 * v2) / std::pow(2.0 * kPi, 0.75),
          std::exp(theta * v2)};
}

double moment_weight(Moment m, const Vec3& v) {
  switch (m) {
    case Moment::one:
      return 1.0;
    case Moment::v1:
      return v[0];
    case Moment::v2:
      return v[1];
    case Moment::v3:
      return v[2];
    case Moment::v1_sq:
      return v[0] * v[0];
    case Moment::v_sq:
      return v.squaredNorm();
    case Moment::v_fourth: {
      const double s = v.squaredNorm();
      return s * s;
    }
  }
  return 0.0;
}

double integrate_velocity(const VelocityGrid& grid, const std::vector<double>& g, Moment m) {
  double acc = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) acc += g[k] * moment_weight(m, grid.node(k));
  return acc * grid.cell_volume();
}

double integrate_velocity(const VelocityGrid& grid, const std::vector<double>& g,
                          const std::function<double(const Vec3&)>& moment) {
  double acc = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) acc += g[k] * moment(grid.node(k));
  return acc * grid.cell_volume();
}

std::vector<double> tabulate(const VelocityGrid& grid, const std::function<double(const Vec3&)>& fn) {
  std::vector<double> out(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) out[k] = fn(grid.node(k));
  return out;
}

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gauss_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
double gauss_cdf_diff(double a, double b) {
  const double r = 1.0 / std::sqrt(2.0);
  if (a > 0.0) return 0.5 * (std::erfc(a * r) - std::erfc(b * r));
  if (b < 0.0) return 0.5 * (std::erfc(-b * r) - std::erfc(-a * r));
  return 0.5 * (std::erf(b * r) - std::erf(a * r));
}

// Integral over [a, b] of (c x + s)_+ phi(x) with c != 0 or s arbitrary.
double positive_linear_gauss(double a, double b, double c, double s) {
  if (c == 0.0) return s > 0.0 ? s * gauss_cdf_diff(a, b) : 0.0;
  const double root = -s / c;
  if (c > 0.0) a = std::max(a, root);
  else b = std::min(b, root);
  if (b <= a) return 0.0;
  return c * (gauss_pdf(a) - gauss_pdf(b)) + s * gauss_cdf_diff(a, b);
}

}  // namespace

double box_flux_integral(const Vec3& lo, const Vec3& hi, const Vec3& n) {
  double smin = 0.0, smax = 0.0;
  for (int i = 0; i < 3; ++i) {
    smin += std::min(n[i] * lo[i], n[i] * hi[i]);
    smax += std::max(n[i] * lo[i], n[i] * hi[i]);
  }
  if (smax <= 0.0) return 0.0;
  double I0[3], I1[3];
  for (int i = 0; i < 3; ++i) {
    I0[i] = gauss_cdf_diff(lo[i], hi[i]);
    I1[i] = gauss_pdf(lo[i]) - gauss_pdf(hi[i]);
  }
  if (smin >= 0.0) return n[0] * I1[0] * I0[1] * I0[2] + n[1] * I0[0] * I1[1] * I0[2] + n[2] * I0[0] * I0[1] * I1[2];
  // Cut box: exact along the dominant axis, composite Gauss-Legendre (panels of width <= 1) across the other two.
  int j = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(n[i]) > std::abs(n[j])) j = i;
  const int a = (j + 1) % 3, b = (j + 2) % 3;
  static const GaussRule gl = gauss_legendre(10);
  auto rule = [&](int axis) {
    const int panels = std::max(1, static_cast<int>(std::ceil(hi[axis] - lo[axis] - 1e-12)));
    const double w = (hi[axis] - lo[axis]) / panels;
    std::vector<std::pair<double, double>> nodes;
    for (int k = 0; k < panels; ++k) {
      const double c = lo[axis] + (k + 0.5) * w;
      for (std::size_t p = 0; p < gl.nodes.size(); ++p) {
        const double u = c + 0.5 * w * gl.nodes[p];
        nodes.emplace_back(u, 0.5 * w * gl.weights[p] * gauss_pdf(u));
      }
    }
    return nodes;
  };
  const auto ra = rule(a), rb = rule(b);
  double acc = 0.0;
  for (const auto& [ua, wa] : ra)
    for (const auto& [ub, wb] : rb) acc += wa * wb * positive_linear_gauss(lo[j], hi[j], n[j], n[a] * ua + n[b] * ub);
  return acc;
}

std::vector<double> halfspace_weights(const VelocityGrid& grid, const Vec3& n, int sign) {
  if (std::abs(n.norm() - 1.0) > 1e-10) throw PreconditionError("halfspace_weights: normal must be a unit vector");
  const Vec3 nn = sign >= 0 ? n : Vec3(-n);
  const double hh = 0.5 * grid.spacing();
  std::vector<double> w(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Vec3& u = grid.node(k);
    const Vec3 d = Vec3::Constant(hh);
    const double I = box_flux_integral(u - d, u + d, nn);
    w[k] = I > 0.0 ? I / sqrt_mu_of(u) : 0.0;
  }
  return w;
}

double halfspace_flux(const VelocityGrid& grid, const std::vector<double>& g, const Vec3& n) {
  const std::vector<double> w = halfspace_weights(grid, n, +1);
  double acc = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) acc += w[k] * g[k];
  return acc;
}

SpatialMesh::SpatialMesh(const ConvexDomain& domain, double h) : domain_(domain), h_(h) {
  if (!(h > 0.0)) throw PreconditionError("SpatialMesh: spacing must be positive");
  const double B = domain.bounding_radius();
  const int m = static_cast<int>(std::ceil(B / h)) + 2;
  dims_ = {2 * m + 1, 2 * m + 1, 2 * m + 1};
  origin_ = Vec3::Constant(-m * h);
  const std::size_t total = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  lattice_.assign(total, -1);
  auto lat = [&](int i, int j, int k) { return (static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k; };
  const double tol = domain.boundary_tolerance();

  std::vector<std::array<int, 3>> active, ghost;
  for (int i = 0; i < dims_[0]; ++i)
    for (int j = 0; j < dims_[1]; ++j)
      for (int k = 0; k < dims_[2]; ++k) {
        const Vec3 x = lattice_point(i, j, k);
        if (domain.xi(x) <= tol) {
          active.push_back({i, j, k});
        } else {
          const double dist = (domain.nearest_boundary(x).point - x).norm();
          if (dist <= std::sqrt(3.0) * h * (1.0 + 1e-12)) ghost.push_back({i, j, k});
        }
      }
  n_active_ = active.size();
  for (const auto& a : active) {
    lattice_[lat(a[0], a[1], a[2])] = static_cast<int>(points_.size());
    points_.push_back(lattice_point(a[0], a[1], a[2]));
  }
  for (const auto& g : ghost) {
    lattice_[lat(g[0], g[1], g[2])] = static_cast<int>(points_.size());
    points_.push_back(lattice_point(g[0], g[1], g[2]));
  }

  // Hat-function weights by sub-cell midpoint sampling of cells meeting the domain.
  weights_.assign(points_.size(), 0.0);
  const int s = 6;
  const double sub = h / s, dvol = sub * sub * sub;
  for (int i = 0; i + 1 < dims_[0]; ++i)
    for (int j = 0; j + 1 < dims_[1]; ++j)
      for (int k = 0; k + 1 < dims_[2]; ++k) {
        bool any = false;
        for (int c = 0; c < 8 && !any; ++c) any = index(i + (c >> 2 & 1), j + (c >> 1 & 1), k + (c & 1)) >= 0;
        if (!any) continue;
        const Vec3 base = lattice_point(i, j, k);
        for (int a = 0; a < s; ++a)
          for (int b = 0; b < s; ++b)
            for (int c = 0; c < s; ++c) {
              const Vec3 fr((a + 0.5) / s, (b + 0.5) / s, (c + 0.5) / s);
              if (domain.xi(base + h * fr) >= 0.0) continue;
              double wsum = 0.0;
              std::array<std::pair<int, double>, 8> parts;
              int np = 0;
              for (int q = 0; q < 8; ++q) {
                const int dx = q >> 2 & 1, dy = q >> 1 & 1, dz = q & 1;
                const double w = (dx ? fr[0] : 1 - fr[0]) * (dy ? fr[1] : 1 - fr[1]) * (dz ? fr[2] : 1 - fr[2]);
                const int id = index(i + dx, j + dy, k + dz);
                if (id < 0) continue;
                parts[np++] = {id, w};
                wsum += w;
              }
              for (int q = 0; q < np; ++q) weights_[parts[q].first] += dvol * parts[q].second / wsum;
            }
      }

  // Ghost extrapolation stencils.
  ghost_stencils_.resize(points_.size() - n_active_);
  for (std::size_t g = n_active_; g < points_.size(); ++g) {
    const Vec3 xg = points_[g];
    const auto& gl = ghost[g - n_active_];
    for (int radius = 2; radius <= 4; ++radius) {
      std::vector<int> ids;
      for (int a = -radius; a <= radius; ++a)
        for (int b = -radius; b <= radius; ++b)
          for (int c = -radius; c <= radius; ++c) {
            const int id = index(gl[0] + a, gl[1] + b, gl[2] + c);
            if (id >= 0 && static_cast<std::size_t>(id) < n_active_ &&
                (points_[id] - xg).norm() <= radius * h * (1 + 1e-12))
              ids.push_back(id);
          }
      if (ids.size() < 4) continue;
      Eigen::MatrixXd A(ids.size(), 4);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        A(r, 0) = 1.0;
        A.block<1, 3>(r, 1) = ((points_[ids[r]] - xg) / h).transpose();
      }
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
      if (cod.rank() < 4) continue;
      const Eigen::MatrixXd pinv = cod.pseudoInverse();
      auto& st = ghost_stencils_[g - n_active_];
      for (std::size_t r = 0; r < ids.size(); ++r) st.emplace_back(ids[r], pinv(0, r));
      break;
    }
    if (ghost_stencils_[g - n_active_].empty()) throw DegenerateGeometryError("SpatialMesh: ghost node without support");
  }
}

Vec3 SpatialMesh::lattice_point(int i, int j, int k) const { return origin_ + h_ * Vec3(i, j, k); }

int SpatialMesh::index(int i, int j, int k) const {
  if (i < 0 || j < 0 || k < 0 || i >= dims_[0] || j >= dims_[1] || k >= dims_[2]) return -1;
  return lattice_[(static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k];
}

SpatialMesh::Stencil SpatialMesh::stencil(const Vec3& x) const {
  Stencil st;
  int i0[3];
  double fr[3];
  for (int d = 0; d < 3; ++d) {
    const double q = (x[d] - origin_[d]) / h_;
    i0[d] = std::clamp(static_cast<int>(std::floor(q)), 0, dims_[d] - 2);
    fr[d] = std::clamp(q - i0[d], 0.0, 1.0);
  }
  double wsum = 0.0;
  for (int q = 0; q < 8; ++q) {
    const int dx = q >> 2 & 1, dy = q >> 1 & 1, dz = q & 1;
    const double w = (dx ? fr[0] : 1 - fr[0]) * (dy ? fr[1] : 1 - fr[1]) * (dz ? fr[2] : 1 - fr[2]);
    const int id = index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
    if (id < 0 || w == 0.0) continue;
    st.node[st.count] = id;
    st.w[st.count] = w;
    ++st.count;
    wsum += w;
  }
  if (st.count == 0) throw PreconditionError("SpatialMesh::stencil: point outside the mesh collar");
  for (int q = 0; q < st.count; ++q) st.w[q] /= wsum;
  return st;
}

double SpatialMesh::interpolate(const std::vector<double>& data, const Vec3& x, std::size_t stride,
                                std::size_t offset) const {
  const Stencil st = stencil(x);
  double acc = 0.0;
  for (int q = 0; q < st.count; ++q) acc += st.w[q] * data[st.node[q] * stride + offset];
  return acc;
}

void SpatialMesh::fill_ghosts(std::vector<double>& data, std::size_t stride) const {
  for (std::size_t g = n_active_; g < points_.size(); ++g) {
    const auto& st = ghost_stencils_[g - n_active_];
    for (std::size_t c = 0; c < stride; ++c) {
      double acc = 0.0;
      for (const auto& [id, w] : st) acc += w * data[id * stride + c];
      data[g * stride + c] = acc;
    }
  }
}

double SpatialMesh::integrate(const std::vector<double>& values) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < points_.size(); ++i) acc += weights_[i] * values[i];
  return acc;
}

DistributionPair::DistributionPair(std::size_t n_space, std::size_t n_vel)
    : n_space_(n_space), n_vel_(n_vel), data_(2 * n_space * n_vel, 0.0) {}

bool DistributionPair::finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

DistributionPair DistributionPair::swapped() const {
  DistributionPair out(n_space_, n_vel_);
  const std::size_t half = n_space_ * n_vel_;
  std::copy(data_.begin() + half, data_.end(), out.data_.begin());
  std::copy(data_.begin(), data_.begin() + half, out.data_.begin() + half);
  return out;
}

double dot(const PairValues& a, const PairValues& b, double dv) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a.plus[k] * b.plus[k] + a.minus[k] * b.minus[k];
  return acc * dv;
}

double norm(const PairValues& a, double dv) { return std::sqrt(dot(a, a, dv)); }

}  // namespace vpb
