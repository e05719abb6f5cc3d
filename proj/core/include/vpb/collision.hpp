#pragma once

#include "vpb/phase_grid.hpp"
#include "vpb/types.hpp"

#include <functional>
#include <vector>

namespace vpb {

/// Product rule on S^2: Gauss-Legendre in cos(theta) times uniform azimuth.
class SphereQuadrature {
 public:
  explicit SphereQuadrature(int n_theta = 8, int n_phi = 16);
  std::size_t size() const { return dirs_.size(); }
  const Vec3& direction(std::size_t i) const { return dirs_[i]; }
  double weight(std::size_t i) const { return w_[i]; }
  /// Directions with cos(theta) > 0; weights doubled so that even integrands keep their full-sphere value.
  SphereQuadrature upper_half() const;
  int n_theta() const { return nt_; }
  int n_phi() const { return np_; }

 private:
  int nt_ = 0, np_ = 0;
  std::vector<Vec3> dirs_;
  std::vector<double> w_;
};

/// Prefactors of k1 and k2.
struct KernelConstants {
  double c1;
  double c2;
  /// Literal pi prefactors of the hard-sphere kernel formulas.
  static KernelConstants literal() { return {kPi, kPi}; }
  /// Prefactors implied by the collision operator with the normalized Maxwellian.
  static KernelConstants exact() { return {1.0 / std::sqrt(2.0 * kPi), 2.0 / std::sqrt(2.0 * kPi)}; }
};

struct KernelValues {
  double k1 = 0.0;
  double k2 = 0.0;
  double k_rho = 0.0;
  bool regularized = false;
};

double kernel_k1(const Vec3& v, const Vec3& u, double c1);
double kernel_k2(const Vec3& v, const Vec3& u, double c2);
double kernel_k_rho(const Vec3& v, const Vec3& u, double rho);

/// Kernel probe with the literal prefactors. For v == u the singular values are replaced by
/// their unit-cell averages (cell side `cell`) and flagged.
KernelValues kernels(const Vec3& v, const Vec3& u, double rho = 1.0 / 16.0, double cell = 0.375);

/// Collision frequency 4 pi int |v-u| mu(u) du by radial quadrature.
double collision_frequency(const Vec3& v);

/// int k_i(v, u) sqrt(mu(u)) / sqrt(mu(v)) du over R^3 for the given prefactor.
double k1_maxwellian_moment(const Vec3& v, double c1);
double k2_maxwellian_moment(const Vec3& v, double c2);

/// int k_i(v, u) p(u) sqrt(mu(u)) / sqrt(mu(v)) du for p = 1, u, |u|^2.
struct InvariantMoments {
  double mass = 0.0;
  Vec3 momentum = Vec3::Zero();
  double energy = 0.0;
};
InvariantMoments k1_invariant_moments(const Vec3& v, double c1);
InvariantMoments k2_invariant_moments(const Vec3& v, double c2);

/// Average of |d|^{-1} f(d) over the cube [-h/2, h/2]^3, splitting the cube into six face pyramids.
double singular_cell_average(const std::function<double(const Vec3&)>& f_times_r, double h, int order = 6);

struct KernelOptions {
  double rho = 1.0 / 16.0;
  double rho_tilde = -1.0;  ///< negative: (rho - theta/2)/2
  double theta = 0.1;
  KernelConstants constants = KernelConstants::exact();
  std::size_t dense_limit = 2000;  ///< cache dense matrices up to this many nodes
};

/// Discretized k1, k2 and nu on a velocity grid. Immutable after construction.
class KernelTables {
 public:
  KernelTables(const VelocityGrid& grid, KernelOptions opts = {});

  const VelocityGrid& grid() const { return grid_; }
  const KernelOptions& options() const { return opts_; }
  double rho() const { return opts_.rho; }
  double rho_tilde() const { return rho_tilde_; }
  const std::vector<double>& nu() const { return nu_; }
  /// min over nodes of nu(v)/<v>.
  double nu0() const { return nu0_; }
  /// Regularized diagonal weights (divided by the cell volume). Together with the face-neighbour
  /// corrections they make the discrete A1, A2 integrate sqrt(mu) {1, u, |u|^2} exactly at every node.
  const std::vector<double>& k1_diagonal() const { return diag1_; }
  const std::vector<double>& k2_diagonal() const { return diag2_; }
  /// Weight corrections from node a to its face neighbours, index 6a + 2 axis + (0 for -, 1 for +).
  /// Not symmetric in (a, b); zero where the neighbour is missing.
  const std::vector<double>& k1_face_correction() const { return face1_; }
  const std::vector<double>& k2_face_correction() const { return face2_; }
  bool dense() const { return !dense1_.empty(); }

  /// Quadrature weights (kernel value times cell volume) of the discrete operators.
  double k1_weight(std::size_t a, std::size_t b) const;
  double k2_weight(std::size_t a, std::size_t b) const;

  /// Batched scalar kernel application: a1[m] = A1 g[m], a2[m] = A2 g[m].
  void apply_scalar(const std::vector<std::vector<double>>& g, std::vector<std::vector<double>>& a1,
                    std::vector<std::vector<double>>& a2) const;

  PairValues apply_K(const PairValues& g) const;
  PairValues apply_L(const PairValues& g) const;
  std::vector<PairValues> apply_K(const std::vector<PairValues>& g) const;

  /// Species combination of precomputed scalar images: K g = A2 (3 g_i + g_-i) - A1 (g_+ + g_-).
  static PairValues combine(const std::vector<double>& a1p, const std::vector<double>& a2p,
                            const std::vector<double>& a1m, const std::vector<double>& a2m);

 private:
  VelocityGrid grid_;
  KernelOptions opts_;
  double rho_tilde_;
  std::vector<double> nu_;
  double nu0_ = 0.0;
  std::vector<double> sq_;      // |v|^2 per node
  std::vector<double> e4_;      // exp(-|v|^2/4) per node
  std::vector<double> diag1_, diag2_;
  std::vector<double> face1_, face2_;
  std::vector<double> dense1_, dense2_;

  double k2_mid(std::size_t a, std::size_t b) const;
  double k1_mid(std::size_t a, std::size_t b) const;
  void build_corrections();
  double face_correction(const std::vector<double>& face, std::size_t a, std::size_t b) const;
  void build_dense();
};

/// Nonlinear operator via the shifted (Carleman-type) representation on the grid.
class GammaOperator {
 public:
  GammaOperator(const VelocityGrid& grid, const SphereQuadrature& sphere = SphereQuadrature());

  struct Split {
    PairValues gain;
    PairValues loss;
  };

  Split apply_split(const PairValues& g, const PairValues& h) const;
  /// Gain minus loss accumulated in a single pass.
  PairValues apply(const PairValues& g, const PairValues& h) const;
  PairValues gain(const PairValues& g, const PairValues& h) const;
  /// nu_Gamma[h](v) with Gamma_loss(g, h) = g * nu_Gamma[h].
  std::vector<double> loss_frequency(const PairValues& h) const;

  const VelocityGrid& grid() const { return grid_; }

 private:
  VelocityGrid grid_;
  SphereQuadrature half_;
  std::vector<double> smu_;

  enum Mode { kGain = 1, kLoss = 2, kBoth = 3, kCombined = 4 };
  void run(const PairValues& g, const PairValues& h, int mode, PairValues* gain, PairValues* loss,
           std::vector<double>* loss_freq) const;
};

struct InvarianceResidual {
  double mass = 0.0;
  Vec3 momentum = Vec3::Zero();
  double energy = 0.0;
  /// Scales: moment of |phi| against gain + loss.
  double mass_scale = 0.0;
  double momentum_scale = 0.0;
  double energy_scale = 0.0;
  double q_l1 = 0.0;
  double max_relative() const;
};

struct InvarianceOptions {
  int n_grid = 20;        ///< velocity nodes per axis for the outer moment sum
  double v_max = 6.5;
  int n_sphere_theta = 6;  ///< collision-direction rule on the upper hemisphere
  int n_sphere_phi = 12;
  int n_line = 16;        ///< Gauss nodes for the line integral along omega
  int n_plane_r = 16;     ///< polar Gauss nodes on the plane orthogonal to omega
  int n_plane_phi = 16;
  double reach = 9.0;     ///< truncation radius of the inner integrals
};

/// Full bilinear Q(G, G)(v) for an analytic G, via the factorized gain in Carleman variables.
struct QValue {
  double gain;
  double loss;
};
QValue collision_Q(const std::function<double(const Vec3&)>& G, const Vec3& v, const InvarianceOptions& opt = {});

/// Moments of Q(G, G) against 1, v, (|v|^2 - 3)/2.
InvarianceResidual invariance_residual(const std::function<double(const Vec3&)>& G,
                                       const InvarianceOptions& opt = {});

/// Kernel inequality diagnostics.
struct KernelComparison {
  double max_ratio = 0.0;  ///< sup of k_rho e^{theta|v|^2 - theta|u|^2} / k_rho_tilde
  std::size_t samples = 0;
};
KernelComparison kernel_comparison(double rho, double rho_tilde, double theta, std::size_t samples,
                                   unsigned long long seed, double v_range = 8.0);

struct GradEstimate {
  double max_weighted = 0.0;  ///< sup over grid of <v> int k_rho e^{theta|v|^2-theta|u|^2} du
  double argmax_speed = 0.0;
};
GradEstimate grad_estimate(const VelocityGrid& grid, double rho, double theta);

}  // namespace vpb
