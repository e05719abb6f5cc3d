#pragma once

#include "vpb/geometry.hpp"
#include "vpb/types.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <vector>

namespace vpb {

/// Uniform midpoint grid on [-v_max, v_max]^3, flattened with index (i*N + j)*N + k.
class VelocityGrid {
 public:
  VelocityGrid(double v_max, int n);

  double v_max() const { return v_max_; }
  int n() const { return n_; }
  std::size_t size() const { return nodes_.size(); }
  double spacing() const { return h_; }
  double cell_volume() const { return h_ * h_ * h_; }
  double coord(int i) const { return -v_max_ + (i + 0.5) * h_; }
  const Vec3& node(std::size_t k) const { return nodes_[k]; }
  const std::vector<Vec3>& nodes() const { return nodes_; }
  std::size_t flat(int i, int j, int k) const { return (static_cast<std::size_t>(i) * n_ + j) * n_ + k; }

  /// Maxwellian mass outside the box (exact), reported at construction.
  double truncation_mass() const { return eps_trunc_; }

  /// Trilinear interpolation of a grid function; zero outside the node hull.
  double interpolate(const std::vector<double>& g, const Vec3& v) const;

 private:
  double v_max_;
  int n_;
  double h_;
  double eps_trunc_;
  std::vector<Vec3> nodes_;
};

struct MaxwellianValues {
  double mu;
  double sqrt_mu;
  double w;
};

/// Gaussian weight exponents with 0 < theta_tilde < theta < 1/4.
struct WeightParams {
  double theta = 0.1;
  double theta_tilde = 0.05;
  void validate() const;
};

MaxwellianValues maxwellian(const Vec3& v, double theta = 0.1);
inline double mu_of(const Vec3& v) { return std::exp(-0.5 * v.squaredNorm()) / std::pow(2.0 * kPi, 1.5); }
inline double sqrt_mu_of(const Vec3& v) { return std::exp(-0.25 * v.squaredNorm()) / std::pow(2.0 * kPi, 0.75); }

/// Diffuse-reflection normalization constant.
inline const double c_mu = std::sqrt(2.0 * kPi);

enum class Moment { one, v1, v2, v3, v1_sq, v_sq, v_fourth };

double moment_weight(Moment m, const Vec3& v);

/// Midpoint quadrature of g * moment(v).
double integrate_velocity(const VelocityGrid& grid, const std::vector<double>& g, Moment m = Moment::one);
double integrate_velocity(const VelocityGrid& grid, const std::vector<double>& g,
                          const std::function<double(const Vec3&)>& moment);

/// Tabulate a function of v on the grid.
std::vector<double> tabulate(const VelocityGrid& grid, const std::function<double(const Vec3&)>& fn);

/// Integral of mu(u) (n.u)_+ over an axis-aligned box [lo, hi].
double box_flux_integral(const Vec3& lo, const Vec3& hi, const Vec3& n);

/// Per-node weights W_k = (1/sqrt(mu_k)) * integral over cell k of mu (s n.u)_+, s = sign.
/// halfspace_flux(g, n) = sum_k W_k g_k, i.e. g/sqrt(mu) is taken cellwise constant.
std::vector<double> halfspace_weights(const VelocityGrid& grid, const Vec3& n, int sign = +1);

/// Integral over {n.u > 0} of g sqrt(mu) (n.u).
double halfspace_flux(const VelocityGrid& grid, const std::vector<double>& g, const Vec3& n);

enum class NodeType { active, ghost };

/// Cartesian lattice over the bounding box of a domain, keeping active (closure) nodes and one ghost collar.
class SpatialMesh {
 public:
  SpatialMesh(const ConvexDomain& domain, double h);

  const ConvexDomain& domain() const { return domain_; }
  double spacing() const { return h_; }
  std::size_t size() const { return points_.size(); }
  std::size_t active_count() const { return n_active_; }
  const Vec3& point(std::size_t i) const { return points_[i]; }
  const std::vector<Vec3>& points() const { return points_; }
  NodeType type(std::size_t i) const { return i < n_active_ ? NodeType::active : NodeType::ghost; }
  /// Integral over the domain of the node's trilinear hat function.
  double weight(std::size_t i) const { return weights_[i]; }
  const std::vector<double>& weights() const { return weights_; }
  const std::array<int, 3>& dims() const { return dims_; }
  Vec3 lattice_point(int i, int j, int k) const;
  /// Node index of lattice site or -1.
  int index(int i, int j, int k) const;

  struct Stencil {
    std::array<int, 8> node{};
    std::array<double, 8> w{};
    int count = 0;
  };
  /// Trilinear interpolation stencil; missing corners are dropped and the rest renormalized.
  Stencil stencil(const Vec3& x) const;

  /// Interpolate a strided nodal field: value of node i is data[i*stride + offset].
  double interpolate(const std::vector<double>& data, const Vec3& x, std::size_t stride = 1,
                     std::size_t offset = 0) const;

  /// Fill ghost values by a least-squares linear extrapolation from nearby active nodes.
  void fill_ghosts(std::vector<double>& data, std::size_t stride = 1) const;

  double integrate(const std::vector<double>& values) const;

 private:
  ConvexDomain domain_;
  double h_;
  Vec3 origin_;
  std::array<int, 3> dims_{};
  std::vector<int> lattice_;
  std::vector<Vec3> points_;
  std::vector<double> weights_;
  std::size_t n_active_ = 0;
  std::vector<std::vector<std::pair<int, double>>> ghost_stencils_;
};

/// Two-species perturbation table over (spatial node, velocity node).
class DistributionPair {
 public:
  DistributionPair() = default;
  DistributionPair(std::size_t n_space, std::size_t n_vel);

  std::size_t n_space() const { return n_space_; }
  std::size_t n_vel() const { return n_vel_; }
  double& at(Species s, std::size_t x, std::size_t v) { return data_[offset(s, x) + v]; }
  double at(Species s, std::size_t x, std::size_t v) const { return data_[offset(s, x) + v]; }
  double* row(Species s, std::size_t x) { return data_.data() + offset(s, x); }
  const double* row(Species s, std::size_t x) const { return data_.data() + offset(s, x); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool finite() const;
  /// Swap the species tables.
  DistributionPair swapped() const;

 private:
  std::size_t n_space_ = 0, n_vel_ = 0;
  std::vector<double> data_;
  std::size_t offset(Species s, std::size_t x) const {
    return (static_cast<std::size_t>(index_of(s)) * n_space_ + x) * n_vel_;
  }
};

/// Species values at a single spatial point.
struct PairValues {
  std::vector<double> plus;
  std::vector<double> minus;
  PairValues() = default;
  explicit PairValues(std::size_t n) : plus(n, 0.0), minus(n, 0.0) {}
  std::vector<double>& operator[](Species s) { return s == Species::plus ? plus : minus; }
  const std::vector<double>& operator[](Species s) const { return s == Species::plus ? plus : minus; }
  std::size_t size() const { return plus.size(); }
  PairValues swapped() const {
    PairValues p;
    p.plus = minus;
    p.minus = plus;
    return p;
  }
};

/// Grid L2 inner product of two pairs, cell volume dv.
double dot(const PairValues& a, const PairValues& b, double dv);
double norm(const PairValues& a, double dv);

}  // namespace vpb
