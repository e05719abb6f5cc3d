#include "vpb/collision.hpp"

#include "vpb/quadrature.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace vpb {

SphereQuadrature::SphereQuadrature(int n_theta, int n_phi) : nt_(n_theta), np_(n_phi) {
  if (n_theta < 1 || n_phi < 1) throw PreconditionError("SphereQuadrature: empty rule");
  const GaussRule gl = gauss_legendre(n_theta);
  const double dphi = 2.0 * kPi / n_phi;
  for (int i = 0; i < n_theta; ++i) {
    const double ct = gl.nodes[i], st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    for (int j = 0; j < n_phi; ++j) {
      const double phi = (j + 0.5) * dphi;
      dirs_.emplace_back(st * std::cos(phi), st * std::sin(phi), ct);
      w_.push_back(gl.weights[i] * dphi);
    }
  }
}

SphereQuadrature SphereQuadrature::upper_half() const {
  SphereQuadrature h(*this);
  h.dirs_.clear();
  h.w_.clear();
  for (std::size_t i = 0; i < dirs_.size(); ++i) {
    if (dirs_[i][2] > 0.0) {
      h.dirs_.push_back(dirs_[i]);
      h.w_.push_back(2.0 * w_[i]);
    } else if (dirs_[i][2] == 0.0) {
      h.dirs_.push_back(dirs_[i]);
      h.w_.push_back(w_[i]);
    }
  }
  return h;
}

double kernel_k1(const Vec3& v, const Vec3& u, double c1) {
  return c1 * (v - u).norm() * std::exp(-0.25 * (v.squaredNorm() + u.squaredNorm()));
}

double kernel_k2(const Vec3& v, const Vec3& u, double c2) {
  const double r2 = (v - u).squaredNorm();
  if (r2 == 0.0) return kInf;
  const double s = v.squaredNorm() - u.squaredNorm();
  return c2 / std::sqrt(r2) * std::exp(-0.125 * r2 - 0.125 * s * s / r2);
}

double kernel_k_rho(const Vec3& v, const Vec3& u, double rho) {
  const double r2 = (v - u).squaredNorm();
  if (r2 == 0.0) return kInf;
  const double s = v.squaredNorm() - u.squaredNorm();
  return std::exp(-rho * r2 - rho * s * s / r2) / std::sqrt(r2);
}

double singular_cell_average(const std::function<double(const Vec3&)>& f_times_r, double h, int order) {
  const GaussRule gs = gauss_legendre(order, 0.0, 1.0);
  const GaussRule gf = gauss_legendre(order, -0.5 * h, 0.5 * h);
  double acc = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    const int a = (axis + 1) % 3, b = (axis + 2) % 3;
    for (int sign = -1; sign <= 1; sign += 2) {
      for (int i = 0; i < order; ++i)
        for (int j = 0; j < order; ++j) {
          Vec3 p;
          p[axis] = sign * 0.5 * h;
          p[a] = gf.nodes[i];
          p[b] = gf.nodes[j];
          const double pn = p.norm();
          const double wf = gf.weights[i] * gf.weights[j];
          for (int q = 0; q < order; ++q) {
            const double s = gs.nodes[q];
            // dV = s^2 (h/2) ds dA and the integrand is f_times_r / (s |p|).
            acc += wf * gs.weights[q] * s * 0.5 * h * f_times_r(s * p) / pn;
          }
        }
    }
  }
  return acc / (h * h * h);
}

KernelValues kernels(const Vec3& v, const Vec3& u, double rho, double cell) {
  KernelValues kv;
  const KernelConstants lit = KernelConstants::literal();
  kv.k1 = kernel_k1(v, u, lit.c1);
  if ((v - u).squaredNorm() > 0.0) {
    kv.k2 = kernel_k2(v, u, lit.c2);
    kv.k_rho = kernel_k_rho(v, u, rho);
    return kv;
  }
  kv.regularized = true;
  kv.k2 = singular_cell_average([&](const Vec3& d) { return (d.norm() > 0 ? d.norm() : 1.0) * kernel_k2(v, v + d, lit.c2); },
                                cell);
  kv.k_rho = singular_cell_average([&](const Vec3& d) { return (d.norm() > 0 ? d.norm() : 1.0) * kernel_k_rho(v, v + d, rho); },
                                   cell);
  return kv;
}

double collision_frequency(const Vec3& v) {
  const double a = v.norm();
  auto radial = [a](double r) {
    const double inner = (a * r > 0.0) ? (std::pow(a + r, 3) - std::pow(std::abs(a - r), 3)) / (3.0 * a * r) : 2.0 * std::max(a, r);
    return r * r * std::exp(-0.5 * r * r) / std::pow(2.0 * kPi, 1.5) * 2.0 * kPi * inner;
  };
  double acc = 0.0;
  auto integrate = [&](double lo, double hi) {
    if (hi <= lo) return;
    const GaussRule g = gauss_legendre(40, lo, hi);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) acc += g.weights[i] * radial(g.nodes[i]);
  };
  const double top = 14.0;
  if (a > 0.0 && a < top) {
    integrate(0.0, a);
    integrate(a, top);
  } else {
    integrate(0.0, top);
  }
  return 4.0 * kPi * acc;
}

// ---------------------------------------------------------------------------------------------
// KernelTables

double k1_maxwellian_moment(const Vec3& v, double c1) {
  // |v-u| e^{-|u|^2/2} integrates to (2 pi)^{3/2} nu(v) / (4 pi).
  return c1 * std::pow(2.0 * kPi, 1.5) * collision_frequency(v) / (4.0 * kPi);
}

double k2_maxwellian_moment(const Vec3& v, double c2) {
  // With u = v + r w and c = cos(w, v), the integrand reduces to c2 r exp(-(r + |v| c)^2 / 2).
  const double a = v.norm();
  const GaussRule g = gauss_legendre(48, -1.0, 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const double b = a * g.nodes[i];
    acc += g.weights[i] * (std::exp(-0.5 * b * b) - b * std::sqrt(0.5 * kPi) * std::erfc(b / std::sqrt(2.0)));
  }
  return c2 * 2.0 * kPi * acc;
}

InvariantMoments k1_invariant_moments(const Vec3& v, double c1) {
  // Spherical coordinates about the origin: rho = |u|, t = cos(u, v). The t integrals of R = |v - u| and
  // t R are polynomial in R after substituting t = (s^2 + rho^2 - R^2) / (2 s rho).
  const double s = v.norm();
  double m = 0.0, a = 0.0, e = 0.0;
  auto add = [&](double lo, double hi) {
    const GaussRule g = gauss_legendre(48, lo, hi);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      const double rho = g.nodes[i], w = g.weights[i] * std::exp(-0.5 * rho * rho) * rho * rho;
      double i0, i1;
      if (s < 1e-12) {
        i0 = 2.0 * rho;
        i1 = 0.0;
      } else {
        const double hi_r = s + rho, lo_r = std::abs(s - rho), q = s * s + rho * rho;
        auto p3 = [](double x) { return x * x * x; };
        i0 = (p3(hi_r) - p3(lo_r)) / (3.0 * s * rho);
        i1 = (q * (p3(hi_r) - p3(lo_r)) / 3.0 - (std::pow(hi_r, 5) - std::pow(lo_r, 5)) / 5.0) /
             (2.0 * s * s * rho * rho);
      }
      m += w * i0;
      a += w * rho * i1;
      e += w * rho * rho * i0;
    }
  };
  const double top = s + 14.0;
  if (s > 0.0) add(0.0, s);
  add(s, top);
  InvariantMoments out;
  out.mass = 2.0 * kPi * c1 * m;
  out.energy = 2.0 * kPi * c1 * e;
  if (s > 0.0) out.momentum = (2.0 * kPi * c1 * a / s) * v;
  return out;
}

InvariantMoments k2_invariant_moments(const Vec3& v, double c2) {
  // Spherical coordinates about v: u = v + r w, c = cos(w, v). The weighted kernel is c2 r e^{-(r + s c)^2 / 2}
  // times r^2 dr dc dphi / r^2; the c integrals are closed form in y = r + s c.
  const double s = v.norm();
  double m = 0.0, a = 0.0, e = 0.0;
  auto add = [&](double lo, double hi) {
    const GaussRule g = gauss_legendre(48, lo, hi);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      const double r = g.nodes[i], w = g.weights[i] * r;
      double C0, C1;
      if (s < 1e-3) {
        const double er = std::exp(-0.5 * r * r);
        C0 = 2.0 * er;
        C1 = -2.0 / 3.0 * r * s * er;
      } else {
        const double G0 = std::sqrt(0.5 * kPi) * (std::erf((r + s) / std::sqrt(2.0)) - std::erf((r - s) / std::sqrt(2.0)));
        const double G1 = std::exp(-0.5 * (r - s) * (r - s)) - std::exp(-0.5 * (r + s) * (r + s));
        C0 = G0 / s;
        C1 = (G1 - r * G0) / (s * s);
      }
      m += w * C0;
      a += w * (s * C0 + r * C1);
      e += w * ((s * s + r * r) * C0 + 2.0 * s * r * C1);
    }
  };
  if (s > 0.0) add(0.0, s);
  add(s, s + 14.0);
  InvariantMoments out;
  out.mass = 2.0 * kPi * c2 * m;
  out.energy = 2.0 * kPi * c2 * e;
  if (s > 0.0) out.momentum = (2.0 * kPi * c2 * a / s) * v;
  return out;
}

// ---------------------------------------------------------------------------------------------
// KernelTables

KernelTables::KernelTables(const VelocityGrid& grid, KernelOptions opts) : grid_(grid), opts_(opts) {
  if (!(opts_.theta > 0.0 && opts_.theta < 0.25)) throw PreconditionError("KernelTables: theta outside (0, 1/4)");
  if (!(opts_.rho > 0.5 * opts_.theta && opts_.rho < 0.125))
    throw PreconditionError("KernelTables: need theta/2 < rho < 1/8");
  rho_tilde_ = opts_.rho_tilde > 0.0 ? opts_.rho_tilde : 0.5 * (opts_.rho - 0.5 * opts_.theta);
  if (!(rho_tilde_ < opts_.rho - 0.5 * opts_.theta))
    throw PreconditionError("KernelTables: rho_tilde must satisfy rho_tilde < rho - theta/2");
  const std::size_t n = grid_.size();
  nu_.resize(n);
  sq_.resize(n);
  e4_.resize(n);
  nu0_ = kInf;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3& v = grid_.node(k);
    nu_[k] = collision_frequency(v);
    sq_[k] = v.squaredNorm();
    e4_[k] = std::exp(-0.25 * sq_[k]);
    nu0_ = std::min(nu0_, nu_[k] / std::sqrt(1.0 + sq_[k]));
  }
  build_corrections();
  if (n <= opts_.dense_limit) build_dense();
}

double KernelTables::k1_mid(std::size_t a, std::size_t b) const {
  const double r = (grid_.node(a) - grid_.node(b)).norm();
  return opts_.constants.c1 * r * (e4_[a] * e4_[b]) * grid_.cell_volume();
}

double KernelTables::k2_mid(std::size_t a, std::size_t b) const {
  if (a == b) return 0.0;
  const double r2 = (grid_.node(a) - grid_.node(b)).squaredNorm();
  const double s = sq_[a] - sq_[b];
  return opts_.constants.c2 / std::sqrt(r2) * std::exp(-0.125 * r2 - 0.125 * s * s / r2) * grid_.cell_volume();
}

void KernelTables::build_corrections() {
  const double kMaxFaceShare = 1.0;
  const std::size_t n = grid_.size();
  const double dv = grid_.cell_volume(), h = grid_.spacing();
  const double c1 = opts_.constants.c1, c2 = opts_.constants.c2;
  const int N = grid_.n();
  // Midpoint sums of w_ab sqrt(mu_b)/sqrt(mu_a) p(v_b) over b != a, p in {1, u, |u|^2}.
  // The ratio is e^{(|v_a|^2 - |v_b|^2)/4}.
  using Row = std::array<double, 5>;
  std::vector<Row> t1(n), t2(n);
  for (std::size_t a = 0; a < n; ++a) {
    const Vec3& va = grid_.node(a);
    Row r1{}, r2{};
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      const Vec3& vb = grid_.node(b);
      const double r2v = (va - vb).squaredNorm();
      const double r = std::sqrt(r2v);
      // Completing the square: -r^2/8 - s^2/(8 r^2) + s/4 = -(s - r^2)^2 / (8 r^2).
      const double q = sq_[a] - sq_[b] - r2v;
      const double w1 = c1 * r * std::exp(-0.5 * sq_[b]);
      const double w2 = c2 / r * std::exp(-q * q / (8.0 * r2v));
      const double p[5] = {1.0, vb[0], vb[1], vb[2], sq_[b]};
      for (int j = 0; j < 5; ++j) {
        r1[j] += w1 * p[j];
        r2[j] += w2 * p[j];
      }
    }
    for (int j = 0; j < 5; ++j) {
      t1[a][j] = r1[j] * dv;
      t2[a][j] = r2[j] * dv;
    }
  }

  // Local defects in the basis 1, (u - v_a)/h, |u - v_a|^2/h^2.
  auto local_defect = [&](const InvariantMoments& m, const Row& t, const Vec3& va, double sa) {
    const double g[5] = {m.mass - t[0], m.momentum[0] - t[1], m.momentum[1] - t[2], m.momentum[2] - t[3],
                         m.energy - t[4]};
    Row d;
    d[0] = g[0];
    for (int i = 0; i < 3; ++i) d[1 + i] = (g[1 + i] - va[i] * g[0]) / h;
    d[4] = (g[4] - 2.0 * (va[0] * g[1] + va[1] * g[2] + va[2] * g[3]) + sa * g[0]) / (h * h);
    return d;
  };
  auto neighbour = [&](std::size_t a, int axis, int dir) -> std::ptrdiff_t {
    const int idx[3] = {static_cast<int>(a / (N * N)), static_cast<int>((a / N) % N), static_cast<int>(a % N)};
    const int j = idx[axis] + dir;
    if (j < 0 || j >= N) return -1;
    int m[3] = {idx[0], idx[1], idx[2]};
    m[axis] = j;
    return static_cast<std::ptrdiff_t>(grid_.flat(m[0], m[1], m[2]));
  };

  // Per-node minimum-norm fit of the defects on the centre and its face neighbours, as raw weights.
  face1_.assign(6 * n, 0.0);
  face2_.assign(6 * n, 0.0);
  diag1_.resize(n);
  diag2_.resize(n);
  for (std::size_t a = 0; a < n; ++a) {
    const Vec3& va = grid_.node(a);
    const InvariantMoments im1 = k1_invariant_moments(va, c1), im2 = k2_invariant_moments(va, c2);
    const double m1 = im1.mass, m2 = im2.mass;
    const Row d1 = local_defect(im1, t1[a], va, sq_[a]);
    const Row d2 = local_defect(im2, t2[a], va, sq_[a]);
    std::vector<std::ptrdiff_t> pts{static_cast<std::ptrdiff_t>(a)};
    std::vector<int> face_of{-1};
    for (int f = 0; f < 6; ++f) {
      const std::ptrdiff_t b = neighbour(a, f / 2, f % 2 ? +1 : -1);
      if (b < 0) continue;
      pts.push_back(b);
      face_of.push_back(f);
    }
    // Corner nodes cannot carry the second moment.
    const int rows = pts.size() >= 5 ? 5 : 4;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(pts.size()));
    for (std::size_t c = 0; c < pts.size(); ++c) {
      A(0, c) = 1.0;
      if (face_of[c] < 0) continue;
      A(1 + face_of[c] / 2, c) = face_of[c] % 2 ? 1.0 : -1.0;
      if (rows == 5) A(4, c) = 1.0;
    }
    const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    for (int k = 0; k < 2; ++k) {
      const Row& d = k == 0 ? d1 : d2;
      Eigen::VectorXd rhs(rows);
      for (int j = 0; j < rows; ++j) rhs[j] = d[j];
      const Eigen::VectorXd y = cod.solve(rhs);
      auto& face = k == 0 ? face1_ : face2_;
      const double mass = (k == 0 ? m1 : m2);
      // Where the defect is mostly box truncation the fit degenerates into large cancelling weights;
      // those nodes keep only the diagonal mass correction.
      if (y.tail(y.size() - 1).lpNorm<1>() > kMaxFaceShare * mass) {
        (k == 0 ? diag1_ : diag2_)[a] = d[0] / dv;
        continue;
      }
      (k == 0 ? diag1_ : diag2_)[a] = y[0] / dv;
      for (std::size_t c = 1; c < pts.size(); ++c)
        face[6 * a + face_of[c]] = y[static_cast<Eigen::Index>(c)] * std::exp(0.25 * (sq_[pts[c]] - sq_[a]));
    }
  }
}

double KernelTables::face_correction(const std::vector<double>& face, std::size_t a, std::size_t b) const {
  const std::size_t N = grid_.n();
  const std::size_t d = a > b ? a - b : b - a;
  int axis = -1;
  if (d == N * N) axis = 0;
  else if (d == N && (std::min(a, b) / N) % N + 1 < N) axis = 1;
  else if (d == 1 && std::min(a, b) % N + 1 < N) axis = 2;
  return axis < 0 ? 0.0 : face[6 * a + 2 * axis + (b > a ? 1 : 0)];
}

double KernelTables::k1_weight(std::size_t a, std::size_t b) const {
  return a == b ? diag1_[a] * grid_.cell_volume() : k1_mid(a, b) + face_correction(face1_, a, b);
}

double KernelTables::k2_weight(std::size_t a, std::size_t b) const {
  return a == b ? diag2_[a] * grid_.cell_volume() : k2_mid(a, b) + face_correction(face2_, a, b);
}

void KernelTables::build_dense() {
  const std::size_t n = grid_.size();
  dense1_.assign(n * n, 0.0);
  dense2_.assign(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      dense1_[a * n + b] = k1_weight(a, b);
      dense2_[a * n + b] = k2_weight(a, b);
    }
}

void KernelTables::apply_scalar(const std::vector<std::vector<double>>& g, std::vector<std::vector<double>>& a1,
                                std::vector<std::vector<double>>& a2) const {
  const std::size_t n = grid_.size(), M = g.size();
  for (const auto& gi : g)
    if (gi.size() != n) throw PreconditionError("apply_scalar: input size does not match the grid");
  a1.assign(M, std::vector<double>(n, 0.0));
  a2.assign(M, std::vector<double>(n, 0.0));
  if (M == 0) return;
  if (dense()) {
    for (std::size_t a = 0; a < n; ++a) {
      const double* r1 = dense1_.data() + a * n;
      const double* r2 = dense2_.data() + a * n;
      for (std::size_t m = 0; m < M; ++m) {
        const double* gm = g[m].data();
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          s1 += r1[b] * gm[b];
          s2 += r2[b] * gm[b];
        }
        a1[m][a] = s1;
        a2[m][a] = s2;
      }
    }
    return;
  }
  // Interleaved copies: node-major, batch index fastest.
  std::vector<double> G(n * M), O1(n * M, 0.0), O2(n * M, 0.0);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t a = 0; a < n; ++a) G[a * M + m] = g[m][a];
  const double c1 = opts_.constants.c1 * grid_.cell_volume();
  const double c2 = opts_.constants.c2 * grid_.cell_volume();
  const auto& nodes = grid_.nodes();
  for (std::size_t a = 0; a < n; ++a) {
    const Vec3 va = nodes[a];
    const double sa = sq_[a], ea = e4_[a];
    double* oa1 = O1.data() + a * M;
    double* oa2 = O2.data() + a * M;
    const double* ga = G.data() + a * M;
    for (std::size_t b = a + 1; b < n; ++b) {
      const Vec3 d = va - nodes[b];
      const double r2 = d.squaredNorm();
      const double r = std::sqrt(r2);
      const double s = sa - sq_[b];
      const double expo = -0.125 * r2 - 0.125 * s * s / r2;
      const double w2 = expo > -700.0 ? c2 / r * std::exp(expo) : 0.0;
      const double w1 = c1 * r * ea * e4_[b];
      const double* gb = G.data() + b * M;
      double* ob1 = O1.data() + b * M;
      double* ob2 = O2.data() + b * M;
      for (std::size_t m = 0; m < M; ++m) {
        oa1[m] += w1 * gb[m];
        oa2[m] += w2 * gb[m];
        ob1[m] += w1 * ga[m];
        ob2[m] += w2 * ga[m];
      }
    }
  }
  const double dv = grid_.cell_volume();
  const std::size_t N = grid_.n(), stride[3] = {N * N, N, 1};
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t m = 0; m < M; ++m) {
      O1[a * M + m] += diag1_[a] * dv * G[a * M + m];
      O2[a * M + m] += diag2_[a] * dv * G[a * M + m];
    }
    for (int f = 0; f < 6; ++f) {
      const double e1 = face1_[6 * a + f], e2 = face2_[6 * a + f];
      if (e1 == 0.0 && e2 == 0.0) continue;
      const std::size_t b = f % 2 ? a + stride[f / 2] : a - stride[f / 2];
      for (std::size_t m = 0; m < M; ++m) {
        O1[a * M + m] += e1 * G[b * M + m];
        O2[a * M + m] += e2 * G[b * M + m];
      }
    }
  }
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t a = 0; a < n; ++a) {
      a1[m][a] = O1[a * M + m];
      a2[m][a] = O2[a * M + m];
    }
}

PairValues KernelTables::combine(const std::vector<double>& a1p, const std::vector<double>& a2p,
                                 const std::vector<double>& a1m, const std::vector<double>& a2m) {
  PairValues out(a1p.size());
  for (std::size_t k = 0; k < a1p.size(); ++k) {
    const double loss = a1p[k] + a1m[k];
    out.plus[k] = 3.0 * a2p[k] + a2m[k] - loss;
    out.minus[k] = 3.0 * a2m[k] + a2p[k] - loss;
  }
  return out;
}

std::vector<PairValues> KernelTables::apply_K(const std::vector<PairValues>& g) const {
  std::vector<std::vector<double>> in;
  in.reserve(2 * g.size());
  for (const auto& p : g) {
    in.push_back(p.plus);
    in.push_back(p.minus);
  }
  std::vector<std::vector<double>> a1, a2;
  apply_scalar(in, a1, a2);
  std::vector<PairValues> out;
  out.reserve(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out.push_back(combine(a1[2 * i], a2[2 * i], a1[2 * i + 1], a2[2 * i + 1]));
  return out;
}

PairValues KernelTables::apply_K(const PairValues& g) const { return apply_K(std::vector<PairValues>{g}).front(); }

PairValues KernelTables::apply_L(const PairValues& g) const {
  PairValues out = apply_K(g);
  for (std::size_t k = 0; k < g.size(); ++k) {
    out.plus[k] = nu_[k] * g.plus[k] - out.plus[k];
    out.minus[k] = nu_[k] * g.minus[k] - out.minus[k];
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// GammaOperator

GammaOperator::GammaOperator(const VelocityGrid& grid, const SphereQuadrature& sphere)
    : grid_(grid), half_(sphere.upper_half()) {
  smu_ = tabulate(grid_, sqrt_mu_of);
}

namespace {

struct Padded {
  int n, np;
  std::vector<double> data;
  Padded(const std::vector<double>& src, int n_) : n(n_), np(n_ + 2), data(static_cast<std::size_t>(np) * np * np, 0.0) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) data[at(i, j, k)] = src[(static_cast<std::size_t>(i) * n + j) * n + k];
  }
  // Index of unpadded lattice coordinates (may be -1 or n).
  std::size_t at(int i, int j, int k) const { return (static_cast<std::size_t>(i + 1) * np + (j + 1)) * np + (k + 1); }
};

}  // namespace

void GammaOperator::run(const PairValues& g, const PairValues& h, int mode, PairValues* gain, PairValues* loss,
                        std::vector<double>* loss_freq) const {
  const int N = grid_.n();
  const std::size_t n = grid_.size();
  const double hv = grid_.spacing(), dv = grid_.cell_volume();
  std::vector<double> H(n);
  for (std::size_t k = 0; k < n; ++k) H[k] = h.plus[k] + h.minus[k];
  // Interpolate ratios to sqrt(mu); sqrt(mu)(v + u_par) sqrt(mu)(v + u_perp) = sqrt(mu)(v) sqrt(mu)(v + u) restores them exactly.
  std::vector<double> rh(n), rp(n), rm(n);
  for (std::size_t k = 0; k < n; ++k) {
    rh[k] = H[k] / smu_[k];
    rp[k] = g.plus[k] / smu_[k];
    rm[k] = g.minus[k] / smu_[k];
  }
  const Padded Hp(rh, N), Gp(rp, N), Gm(rm, N);
  const bool want_gain = (mode & kGain) || mode == kCombined;
  const bool want_loss = (mode & kLoss) || mode == kCombined;
  std::vector<double> gp(n, 0.0), gm(n, 0.0), lf(n, 0.0);
  // H(w) sqrt(mu)(w) feeds the loss frequency.
  std::vector<double> Hs(n);
  for (std::size_t k = 0; k < n; ++k) Hs[k] = H[k] * smu_[k];
  const std::size_t np = static_cast<std::size_t>(N + 2);
  const std::size_t sI = np * np, sJ = np;

  for (int di = -(N - 1); di <= N - 1; ++di)
    for (int dj = -(N - 1); dj <= N - 1; ++dj)
      for (int dk = -(N - 1); dk <= N - 1; ++dk) {
        if (di == 0 && dj == 0 && dk == 0) continue;
        const Vec3 dvec(di, dj, dk);
        const Vec3 u = hv * dvec;
        // w = v + d must stay on the grid.
        const int wlo[3] = {std::max(0, -di), std::max(0, -dj), std::max(0, -dk)};
        const int whi[3] = {std::min(N - 1, N - 1 - di), std::min(N - 1, N - 1 - dj), std::min(N - 1, N - 1 - dk)};
        double loss_weight = 0.0;
        for (std::size_t q = 0; q < half_.size(); ++q) {
          const Vec3& om = half_.direction(q);
          const double s = u.dot(om);
          const double W = std::abs(s) * half_.weight(q) * dv;
          if (W == 0.0) continue;
          loss_weight += W;
          if (!want_gain) continue;
          const Vec3 xp = (s / hv) * om;  // u_par in grid units
          const Vec3 xq = dvec - xp;      // u_perp in grid units
          int op[3], oq[3];
          double fp[3], fq[3];
          for (int c = 0; c < 3; ++c) {
            op[c] = static_cast<int>(std::floor(xp[c]));
            fp[c] = xp[c] - op[c];
            oq[c] = static_cast<int>(std::floor(xq[c]));
            fq[c] = xq[c] - oq[c];
          }
          // Base corners must land in [-1, N-1] so the padded stencil is addressable.
          int lo[3], hi[3];
          bool empty = false;
          for (int c = 0; c < 3; ++c) {
            lo[c] = std::max({wlo[c], -1 - op[c], -1 - oq[c]});
            hi[c] = std::min({whi[c], N - 1 - op[c], N - 1 - oq[c]});
            if (lo[c] > hi[c]) empty = true;
          }
          if (empty) continue;
          double cp[8], cq[8];
          long offp[8], offq[8];
          for (int c = 0; c < 8; ++c) {
            const int a = c >> 2 & 1, b = c >> 1 & 1, e = c & 1;
            cp[c] = (a ? fp[0] : 1 - fp[0]) * (b ? fp[1] : 1 - fp[1]) * (e ? fp[2] : 1 - fp[2]);
            cq[c] = (a ? fq[0] : 1 - fq[0]) * (b ? fq[1] : 1 - fq[1]) * (e ? fq[2] : 1 - fq[2]);
            offp[c] = static_cast<long>((op[0] + a) * sI + (op[1] + b) * sJ + (op[2] + e));
            offq[c] = static_cast<long>((oq[0] + a) * sI + (oq[1] + b) * sJ + (oq[2] + e));
          }
          for (int i = lo[0]; i <= hi[0]; ++i)
            for (int j = lo[1]; j <= hi[1]; ++j) {
              const std::size_t base = Hp.at(i, j, lo[2]);
              const std::size_t out = (static_cast<std::size_t>(i) * N + j) * N + lo[2];
              const int len = hi[2] - lo[2] + 1;
              const long dflat = static_cast<long>((di * N + dj) * N + dk);
              for (int k = 0; k < len; ++k) {
                const std::size_t b0 = base + k;
                double hq = 0.0, g1 = 0.0, g2 = 0.0;
                for (int c = 0; c < 8; ++c) {
                  hq += cq[c] * Hp.data[b0 + offq[c]];
                  g1 += cp[c] * Gp.data[b0 + offp[c]];
                  g2 += cp[c] * Gm.data[b0 + offp[c]];
                }
                const double smw = smu_[out + k + dflat];
                const double f = W * smu_[out + k] * smw * smw * hq;
                gp[out + k] += f * g1;
                gm[out + k] += f * g2;
              }
            }
        }
        if (want_loss && loss_weight > 0.0) {
          for (int i = wlo[0]; i <= whi[0]; ++i)
            for (int j = wlo[1]; j <= whi[1]; ++j)
              for (int k = wlo[2]; k <= whi[2]; ++k) {
                const std::size_t v = (static_cast<std::size_t>(i) * N + j) * N + k;
                lf[v] += loss_weight * Hs[v + static_cast<std::size_t>((di * N + dj) * N + dk)];
              }
        }
      }
  if (mode == kCombined) {
    for (std::size_t k = 0; k < n; ++k) {
      gp[k] -= g.plus[k] * lf[k];
      gm[k] -= g.minus[k] * lf[k];
    }
    gain->plus = std::move(gp);
    gain->minus = std::move(gm);
    return;
  }
  if (gain) {
    gain->plus = std::move(gp);
    gain->minus = std::move(gm);
  }
  if (loss) {
    loss->plus.resize(n);
    loss->minus.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      loss->plus[k] = g.plus[k] * lf[k];
      loss->minus[k] = g.minus[k] * lf[k];
    }
  }
  if (loss_freq) *loss_freq = std::move(lf);
}

GammaOperator::Split GammaOperator::apply_split(const PairValues& g, const PairValues& h) const {
  Split s;
  run(g, h, kBoth, &s.gain, &s.loss, nullptr);
  return s;
}

PairValues GammaOperator::apply(const PairValues& g, const PairValues& h) const {
  PairValues out;
  run(g, h, kCombined, &out, nullptr, nullptr);
  return out;
}

PairValues GammaOperator::gain(const PairValues& g, const PairValues& h) const {
  PairValues out;
  run(g, h, kGain, &out, nullptr, nullptr);
  return out;
}

std::vector<double> GammaOperator::loss_frequency(const PairValues& h) const {
  std::vector<double> lf;
  PairValues zero(grid_.size());
  run(zero, h, kLoss, nullptr, nullptr, &lf);
  return lf;
}

// ---------------------------------------------------------------------------------------------
// Full bilinear Q with analytic input

QValue collision_Q(const std::function<double(const Vec3&)>& G, const Vec3& v, const InvarianceOptions& opt) {
  static thread_local int cached_key[5] = {-1, -1, -1, -1, -1};
  static thread_local double cached_reach = -1.0;
  static thread_local GaussRule line, plane_r;
  static thread_local SphereQuadrature half, full;
  if (cached_key[0] != opt.n_sphere_theta || cached_key[1] != opt.n_sphere_phi || cached_key[2] != opt.n_line ||
      cached_key[3] != opt.n_plane_r || cached_key[4] != opt.n_plane_phi || cached_reach != opt.reach) {
    line = gauss_legendre(opt.n_line, 0.0, opt.reach);
    plane_r = gauss_legendre(opt.n_plane_r, 0.0, opt.reach);
    full = SphereQuadrature(opt.n_sphere_theta, opt.n_sphere_phi);
    half = full.upper_half();
    cached_key[0] = opt.n_sphere_theta;
    cached_key[1] = opt.n_sphere_phi;
    cached_key[2] = opt.n_line;
    cached_key[3] = opt.n_plane_r;
    cached_key[4] = opt.n_plane_phi;
    cached_reach = opt.reach;
  }
  // Gain: int_{S^2} [int_R |s| G(v + s w) ds] [int_{w-perp} G(v + z) dz] dw (the u-integral factorizes).
  double gain = 0.0;
  const double dth = 2.0 * kPi / opt.n_plane_phi;
  for (std::size_t q = 0; q < half.size(); ++q) {
    const Vec3& om = half.direction(q);
    double L = 0.0;
    for (std::size_t i = 0; i < line.nodes.size(); ++i) {
      const double s = line.nodes[i];
      L += line.weights[i] * s * (G(v + s * om) + G(v - s * om));
    }
    Vec3 e1 = std::abs(om[0]) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    e1 = (e1 - e1.dot(om) * om).normalized();
    const Vec3 e2 = om.cross(e1);
    double P = 0.0;
    for (std::size_t i = 0; i < plane_r.nodes.size(); ++i) {
      const double r = plane_r.nodes[i];
      double ring = 0.0;
      for (int j = 0; j < opt.n_plane_phi; ++j) {
        const double th = (j + 0.5) * dth;
        ring += G(v + r * (std::cos(th) * e1 + std::sin(th) * e2));
      }
      P += plane_r.weights[i] * r * ring * dth;
    }
    gain += half.weight(q) * L * P;
  }
  // Loss: G(v) * 2 pi int |u| G(v + u) du in spherical coordinates about v.
  double rad = 0.0;
  for (std::size_t i = 0; i < line.nodes.size(); ++i) {
    const double r = line.nodes[i];
    double shell = 0.0;
    for (std::size_t q = 0; q < full.size(); ++q) shell += full.weight(q) * G(v + r * full.direction(q));
    rad += line.weights[i] * r * r * r * shell;
  }
  return {gain, G(v) * 2.0 * kPi * rad};
}

double InvarianceResidual::max_relative() const {
  double m = mass_scale > 0 ? std::abs(mass) / mass_scale : 0.0;
  if (momentum_scale > 0) m = std::max(m, momentum.cwiseAbs().maxCoeff() / momentum_scale);
  if (energy_scale > 0) m = std::max(m, std::abs(energy) / energy_scale);
  return m;
}

InvarianceResidual invariance_residual(const std::function<double(const Vec3&)>& G, const InvarianceOptions& opt) {
  const VelocityGrid grid(opt.v_max, opt.n_grid);
  InvarianceResidual r;
  const double dv = grid.cell_volume();
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Vec3& v = grid.node(k);
    const QValue q = collision_Q(G, v, opt);
    const double Q = q.gain - q.loss, mag = q.gain + q.loss;
    const double e = 0.5 * (v.squaredNorm() - 3.0);
    r.mass += Q * dv;
    r.momentum += Q * dv * v;
    r.energy += Q * e * dv;
    r.mass_scale += mag * dv;
    r.momentum_scale += mag * v.cwiseAbs().maxCoeff() * dv;
    r.energy_scale += mag * std::abs(e) * dv;
    r.q_l1 += std::abs(Q) * dv;
  }
  return r;
}

// ---------------------------------------------------------------------------------------------
// Kernel inequalities

KernelComparison kernel_comparison(double rho, double rho_tilde, double theta, std::size_t samples,
                                   unsigned long long seed, double v_range) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-v_range, v_range);
  KernelComparison out;
  double best = -kInf;
  for (std::size_t s = 0; s < samples; ++s) {
    const Vec3 v(U(rng), U(rng), U(rng)), u(U(rng), U(rng), U(rng));
    const double r2 = (v - u).squaredNorm();
    if (r2 == 0.0) continue;
    const double q = v.squaredNorm() - u.squaredNorm();
    // log of k_rho e^{theta|v|^2 - theta|u|^2} / k_rho_tilde; the 1/|v-u| factors cancel.
    const double lg = -(rho - rho_tilde) * (r2 + q * q / r2) + theta * q;
    best = std::max(best, lg);
    ++out.samples;
  }
  out.max_ratio = std::exp(best);
  return out;
}

GradEstimate grad_estimate(const VelocityGrid& grid, double rho, double theta) {
  GradEstimate out;
  const double dv = grid.cell_volume(), h = grid.spacing();
  for (std::size_t a = 0; a < grid.size(); ++a) {
    const Vec3& v = grid.node(a);
    const double v2 = v.squaredNorm();
    double acc = 0.0;
    for (std::size_t b = 0; b < grid.size(); ++b) {
      if (a == b) continue;
      const Vec3& u = grid.node(b);
      acc += kernel_k_rho(v, u, rho) * std::exp(theta * (v2 - u.squaredNorm())) * dv;
    }
    acc += dv * singular_cell_average(
                    [&](const Vec3& d) {
                      const Vec3 u = v + d;
                      const double r2 = d.squaredNorm();
                      const double q = v2 - u.squaredNorm();
                      return std::exp(-rho * r2 - rho * q * q / r2 + theta * q);
                    },
                    h);
    const double weighted = std::sqrt(1.0 + v2) * acc;
    if (weighted > out.max_weighted) {
      out.max_weighted = weighted;
      out.argmax_speed = std::sqrt(v2);
    }
  }
  return out;
}

}  // namespace vpb
