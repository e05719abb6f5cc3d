#pragma once

#include "vpb/characteristics.hpp"
#include "vpb/collision.hpp"
#include "vpb/field.hpp"
#include "vpb/phase_grid.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vpb {

enum class InitialKind { zero, isotropic, dipole, custom };

struct SolverConfig {
  DomainKind domain = DomainKind::ball;
  Vec3 axes = Vec3::Ones();  ///< semi-axes for the ellipsoid
  double mesh_h = 0.5;
  double v_max = 5.0;
  int n_v = 10;
  int sphere_theta = 4;  ///< Gamma angular quadrature
  int sphere_phi = 8;
  int boundary_theta = 8;  ///< boundary samples for traces and diagnostics
  int boundary_phi = 16;
  int poisson_degree = 3;
  double eps = 0.1;
  double theta = 0.1;
  double theta_tilde = 0.05;
  InitialKind initial = InitialKind::dipole;
  double amplitude = 0.01;  ///< M
  int picard_max = 7;       ///< L_max
  double picard_tol = 1e-2; ///< relative increment stop after the first segment
  double horizon = 0.05;    ///< T**
  int segments = 10;
  int substeps = 4;         ///< RK4 steps per horizon along each characteristic
  bool collisions = true;
  bool nonlinear = true;
  bool field = true;
  double delta = 0.1;       ///< L^{1+delta} increment norm
  double neutrality_tol = 1e-8;
  unsigned long long seed = 1;
  std::string csv_path;
  std::string json_path;

  void validate() const;
  ConvexDomain make_domain() const;
};

/// f0(x, v, species), in perturbation form F = mu + sqrt(mu) f.
using InitialProfile = std::function<double(const Vec3&, const Vec3&, Species)>;

/// Everything the Duhamel step needs from one time level.
struct LevelData {
  double t = 0.0;
  DistributionPair f;      ///< all mesh nodes, ghosts filled
  DistributionPair f_ratio;  ///< f / sqrt(mu)
  DistributionPair source;   ///< (K f + Gamma_gain(f, f)) / sqrt(mu)
  std::vector<double> loss;  ///< Gamma loss frequency per (node, velocity)
  std::vector<double> trace; ///< outgoing flux z per (boundary sample, species)
  std::shared_ptr<const PoissonSolution> phi;
};

struct DiagnosticsRecord {
  double t = 0.0;
  int iterate = 0;
  double mass_plus = 0.0;
  double mass_minus = 0.0;
  double neutrality = 0.0;  ///< int int (F+ - F-)
  double l2_f = 0.0;
  double linf_wf = 0.0;
  double linf_E = 0.0;
  double null_flux_max = 0.0;
  double boundary_out = 0.0;  ///< |f|_{2,+}
  double boundary_in = 0.0;   ///< |f|_{2,-}
  double green_imbalance = 0.0;
  double picard_increment = 0.0;
  double lambda = 0.0;
  double min_F = 0.0;
  double max_F = 0.0;
  std::size_t negative_count = 0;  ///< points with F < -1e-6 max F
};

struct IterationState {
  LevelData start;            ///< fixed level at the segment start
  LevelData current;          ///< f^l at the segment end
  int iterate = 0;
  std::vector<double> increments;  ///< ||f^{l+1} - f^l||_{1+delta} per sweep
  std::vector<DiagnosticsRecord> history;
  double compatibility_residual = 0.0;
  double neutrality_residual = 0.0;
};

struct DecayFit {
  double lambda = 0.0;
  double intercept = 0.0;
  bool degenerate = true;
};

struct TimeMarchResult {
  std::vector<DiagnosticsRecord> series;
  std::vector<std::vector<double>> segment_increments;
  DecayFit fit;
  double max_mass_drift = 0.0;        ///< relative, max over species and times
  double max_neutrality = 0.0;        ///< relative to total mass
  double max_null_flux = 0.0;
  double max_green = 0.0;
  double compatibility_residual = 0.0;
  std::size_t negative_count = 0;
  double min_F_ratio = 0.0;           ///< min F / max F over the run
  bool aborted = false;
  std::string abort_reason;
  DistributionPair final_f;
};

/// Incoming values c_mu sqrt(mu(v)) * halfspace_flux(trace_iota, n), per species, on the whole grid.
PairValues apply_diffuse_bc(const VelocityGrid& grid, const PairValues& outgoing, const Vec3& n);
/// int F (n.v) dv with F = mu + sqrt(mu) f, outgoing half from the trace and incoming half from the BC; max over species.
double null_flux_residual(const VelocityGrid& grid, const PairValues& outgoing, const Vec3& n);

/// Least squares fit log y = c - lambda t; degenerate when fewer than two positive samples or a flat series.
DecayFit fit_decay(const std::vector<double>& t, const std::vector<double>& y);

class Solver {
 public:
  explicit Solver(SolverConfig cfg);
  ~Solver();

  const SolverConfig& config() const { return cfg_; }
  const ConvexDomain& domain() const { return *domain_; }
  const SpatialMesh& mesh() const { return *mesh_; }
  const VelocityGrid& grid() const { return grid_; }
  const BoundaryQuadrature& boundary() const { return bq_; }

  /// Profile of the configured initial kind.
  InitialProfile initial_profile() const;

  IterationState initialize() const;
  IterationState initialize(const InitialProfile& f0) const;

  /// Replace the segment end by f^{l+1}; records the increment. The end time is start.t + horizon.
  void picard_sweep(IterationState& st) const;
  /// Start a new segment at the current end level with warm start f^0 = f(t0).
  void advance_segment(IterationState& st) const;

  DiagnosticsRecord diagnose(const LevelData& lv) const;
  /// p-Green identity imbalance between two levels, bulk and boundary terms by the trapezoid rule in time.
  double green_identity_residual(const LevelData& a, const LevelData& b, double p = 2.0) const;

  TimeMarchResult time_march() const;
  TimeMarchResult time_march(const InitialProfile& f0) const;

  /// Norm used for Picard increments.
  double increment_norm(const DistributionPair& a, const DistributionPair& b) const;
  /// Rebuild the level data for a given distribution (f on active nodes; ghosts are refilled).
  LevelData make_level(double t, DistributionPair f) const;

 private:
  SolverConfig cfg_;
  std::unique_ptr<ConvexDomain> domain_;
  std::shared_ptr<const SpatialMesh> mesh_;
  VelocityGrid grid_;
  std::unique_ptr<KernelTables> kernel_;
  std::unique_ptr<GammaOperator> gamma_;
  std::unique_ptr<PoissonSolver> poisson_;
  BoundaryQuadrature bq_;
  std::vector<std::vector<double>> w_out_;  ///< halfspace weights per boundary sample, sign +1
  std::vector<std::vector<double>> w_in_;   ///< sign -1
  std::vector<double> smu_, mu_, wt_, nu_;

  struct VStencil {
    std::array<std::size_t, 8> idx{};
    std::array<double, 8> w{};
  };
  VStencil vstencil(const Vec3& v) const;
  std::size_t nearest_sample(const Vec3& x) const;
  void fill_ghosts(DistributionPair& f) const;
  PairValues trace_at(const DistributionPair& f, const Vec3& x) const;
  double phase_value(const IterationState& st, const FieldHandle& field, std::size_t node, std::size_t k,
                     Species sp) const;
  FieldHandle segment_field(const IterationState& st) const;
};

void write_csv(std::ostream& os, const std::vector<DiagnosticsRecord>& series);

}  // namespace vpb
