#include "vpb/cli_io.hpp"

#include "vpb/characteristics.hpp"
#include "vpb/collision.hpp"
#include "vpb/field.hpp"
#include "vpb/kinetic_distance.hpp"
#include "vpb/spectral.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace vpb {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); }

// Reader over one JSON object that tracks consumed keys, so leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  bool has(const std::string& k) const { return j_.contains(k); }
  std::string path(const std::string& k) const { return path_ + "." + k; }

  const json* get(const std::string& k) {
    used_.insert(k);
    auto it = j_.find(k);
    return it == j_.end() ? nullptr : &*it;
  }
  const json& require(const std::string& k) {
    const json* p = get(k);
    if (!p) fail(path(k), "required key is missing");
    return *p;
  }
  void number(const std::string& k, double& out, double lo, double hi, bool open_lo = false) {
    const json* p = get(k);
    if (!p) return;
    if (!p->is_number()) fail(path(k), "expected a number");
    const double v = p->get<double>();
    if (!(open_lo ? v > lo : v >= lo) || !(v <= hi)) {
      std::ostringstream os;
      os << "value " << v << " outside " << (open_lo ? "(" : "[") << lo << ", " << hi << "]";
      fail(path(k), os.str());
    }
    out = v;
  }
  void integer(const std::string& k, int& out, int lo, int hi) {
    const json* p = get(k);
    if (!p) return;
    if (!p->is_number_integer()) fail(path(k), "expected an integer");
    const long long v = p->get<long long>();
    if (v < lo || v > hi) fail(path(k), "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                                            std::to_string(hi) + "]");
    out = static_cast<int>(v);
  }
  void boolean(const std::string& k, bool& out) {
    const json* p = get(k);
    if (!p) return;
    if (!p->is_boolean()) fail(path(k), "expected true or false");
    out = p->get<bool>();
  }
  void string(const std::string& k, std::string& out) {
    const json* p = get(k);
    if (!p) return;
    if (!p->is_string()) fail(path(k), "expected a string");
    out = p->get<std::string>();
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) fail(path(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

const char* domain_name(DomainKind k) { return k == DomainKind::ellipsoid ? "ellipsoid" : "ball"; }

const char* initial_name(InitialKind k) {
  switch (k) {
    case InitialKind::zero: return "zero";
    case InitialKind::isotropic: return "isotropic";
    case InitialKind::dipole: return "dipole";
    case InitialKind::custom: return "custom";
  }
  return "zero";
}

json config_json(const RunConfig& c) {
  const SolverConfig& s = c.solver;
  json j;
  j["schema_version"] = c.schema_version;
  j["domain"] = {{"kind", domain_name(s.domain)}, {"axes", {s.axes[0], s.axes[1], s.axes[2]}}};
  j["grids"] = {{"mesh_h", s.mesh_h},
                {"v_max", s.v_max},
                {"n_v", s.n_v},
                {"sphere_theta", s.sphere_theta},
                {"sphere_phi", s.sphere_phi},
                {"boundary_theta", s.boundary_theta},
                {"boundary_phi", s.boundary_phi},
                {"poisson_degree", s.poisson_degree}};
  j["physics"] = {{"eps", s.eps},
                  {"theta", s.theta},
                  {"theta_tilde", s.theta_tilde},
                  {"collisions", s.collisions},
                  {"nonlinear", s.nonlinear},
                  {"field", s.field}};
  j["initial"] = {{"kind", initial_name(s.initial)}, {"amplitude", s.amplitude}};
  j["solver"] = {{"picard_max", s.picard_max},     {"picard_tol", s.picard_tol}, {"horizon", s.horizon},
                 {"segments", s.segments},         {"substeps", s.substeps},     {"delta", s.delta},
                 {"neutrality_tol", s.neutrality_tol}};
  j["seed"] = s.seed;
  j["output"] = {{"dir", c.output_dir}, {"csv", c.csv_name}, {"summary", c.summary_name}};
  return j;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail("$", std::string("malformed JSON: ") + e.what());
  }
  RunConfig c;
  SolverConfig& s = c.solver;
  Section top(root, "$");
  const json& ver = top.require("schema_version");
  if (!ver.is_number_integer() || ver.get<long long>() != kConfigSchemaVersion)
    fail("$.schema_version", "unsupported schema version (expected " + std::to_string(kConfigSchemaVersion) + ")");

  {
    Section d(top.require("domain"), "$.domain");
    const json& kind = d.require("kind");
    if (kind == "ball")
      s.domain = DomainKind::ball;
    else if (kind == "ellipsoid")
      s.domain = DomainKind::ellipsoid;
    else
      fail("$.domain.kind", "expected \"ball\" or \"ellipsoid\"");
    if (const json* a = d.get("axes")) {
      if (!a->is_array() || a->size() != 3) fail("$.domain.axes", "expected an array of three numbers");
      for (int i = 0; i < 3; ++i) {
        if (!(*a)[i].is_number()) fail("$.domain.axes[" + std::to_string(i) + "]", "expected a number");
        s.axes[i] = (*a)[i].get<double>();
        if (!(s.axes[i] > 0.0)) fail("$.domain.axes[" + std::to_string(i) + "]", "must be positive");
      }
    }
    d.finish();
  }
  if (const json* g = top.get("grids")) {
    Section d(*g, "$.grids");
    d.number("mesh_h", s.mesh_h, 0.0, 1.0, true);
    d.number("v_max", s.v_max, 0.0, 20.0, true);
    d.integer("n_v", s.n_v, 4, 64);
    d.integer("sphere_theta", s.sphere_theta, 2, 64);
    d.integer("sphere_phi", s.sphere_phi, 4, 128);
    d.integer("boundary_theta", s.boundary_theta, 2, 256);
    d.integer("boundary_phi", s.boundary_phi, 4, 512);
    d.integer("poisson_degree", s.poisson_degree, 1, 12);
    d.finish();
  }
  if (const json* p = top.get("physics")) {
    Section d(*p, "$.physics");
    d.number("eps", s.eps, 0.0, 1.0, true);
    d.number("theta", s.theta, 0.0, 0.25, true);
    d.number("theta_tilde", s.theta_tilde, 0.0, 0.25, true);
    d.boolean("collisions", s.collisions);
    d.boolean("nonlinear", s.nonlinear);
    d.boolean("field", s.field);
    d.finish();
    if (!(s.theta_tilde < s.theta)) fail("$.physics.theta_tilde", "must be smaller than theta");
  }
  if (const json* p = top.get("initial")) {
    Section d(*p, "$.initial");
    std::string kind = initial_name(s.initial);
    d.string("kind", kind);
    if (kind == "zero")
      s.initial = InitialKind::zero;
    else if (kind == "isotropic")
      s.initial = InitialKind::isotropic;
    else if (kind == "dipole")
      s.initial = InitialKind::dipole;
    else
      fail("$.initial.kind", "expected \"zero\", \"isotropic\" or \"dipole\"");
    d.number("amplitude", s.amplitude, 0.0, 1.0);
    d.finish();
  }
  if (const json* p = top.get("solver")) {
    Section d(*p, "$.solver");
    d.integer("picard_max", s.picard_max, 1, 100);
    d.number("picard_tol", s.picard_tol, 0.0, 1.0);
    d.number("horizon", s.horizon, 0.0, 1.0, true);
    d.integer("segments", s.segments, 1, 100000);
    d.integer("substeps", s.substeps, 1, 1000);
    d.number("delta", s.delta, 0.0, 1.0, true);
    d.number("neutrality_tol", s.neutrality_tol, 0.0, 1.0, true);
    d.finish();
  }
  if (const json* p = top.get("seed")) {
    if (!p->is_number_unsigned()) fail("$.seed", "expected a nonnegative integer");
    s.seed = p->get<unsigned long long>();
  }
  if (const json* p = top.get("output")) {
    Section d(*p, "$.output");
    d.string("dir", c.output_dir);
    d.string("csv", c.csv_name);
    d.string("summary", c.summary_name);
    d.finish();
    if (c.csv_name.empty()) fail("$.output.csv", "must not be empty");
    if (c.summary_name.empty()) fail("$.output.summary", "must not be empty");
  }
  top.finish();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    fail("$", e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& c, int indent) { return config_json(c).dump(indent); }

bool operator==(const RunConfig& a, const RunConfig& b) { return config_json(a) == config_json(b); }

std::string resolve_output_dir(const RunConfig& c) {
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* env = std::getenv("VPB_OUTPUT_DIR"); env && *env) return env;
  return ".";
}

std::string run_summary_json(const RunConfig& c, const TimeMarchResult& r, double wall_seconds) {
  json j;
  j["fit"] = {{"lambda", r.fit.lambda}, {"intercept", r.fit.intercept}, {"degenerate", r.fit.degenerate}};
  j["maxima"] = {{"mass_drift", r.max_mass_drift},
                 {"neutrality", r.max_neutrality},
                 {"null_flux", r.max_null_flux},
                 {"green_imbalance", r.max_green},
                 {"compatibility", r.compatibility_residual}};
  j["positivity"] = {{"negative_count", r.negative_count}, {"min_F_over_max_F", r.min_F_ratio}};
  j["picard_increments"] = r.segment_increments;
  j["aborted"] = r.aborted;
  if (r.aborted) j["abort_reason"] = r.abort_reason;
  j["records"] = r.series.size();
  j["wall_seconds"] = wall_seconds;
  j["seed"] = c.solver.seed;
  j["config"] = config_json(c);
  return j.dump(2);
}

std::string simulate(const RunConfig& c, TimeMarchResult* result) {
  namespace fs = std::filesystem;
  const std::string dir = resolve_output_dir(c);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir + ": " + ec.message());
  const auto t0 = std::chrono::steady_clock::now();
  const Solver solver(c.solver);
  TimeMarchResult r = solver.time_march();
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path csv = fs::path(dir) / c.csv_name, sum = fs::path(dir) / c.summary_name;
  {
    std::ofstream out(csv);
    if (!out) throw Error("cannot write " + csv.string());
    write_csv(out, r.series);
  }
  {
    std::ofstream out(sum);
    if (!out) throw Error("cannot write " + sum.string());
    out << run_summary_json(c, r, wall) << '\n';
  }
  if (result) *result = std::move(r);
  return dir;
}

bool VerifyReport::passed() const {
  for (const auto& c : checks)
    if (c.required && c.status == CheckStatus::fail) return false;
  return true;
}

std::string VerifyReport::to_json(int indent) const {
  json j;
  j["overall"] = passed() ? "pass" : "fail";
  j["checks"] = json::array();
  for (const auto& c : checks) {
    json e;
    e["suite"] = c.suite;
    e["name"] = c.name;
    e["status"] = c.status == CheckStatus::pass ? "pass" : c.status == CheckStatus::fail ? "fail" : "measured";
    e["required"] = c.required;
    e["measured"] = c.measured;
    e["tolerance"] = c.tolerance;
    e["wall_time"] = c.wall_time;
    j["checks"].push_back(e);
  }
  return j.dump(indent);
}

const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names{"geometry", "kernels", "spectral", "field",
                                              "characteristics", "alpha", "solver"};
  return names;
}

namespace {

class Recorder {
 public:
  Recorder(VerifyReport& r, std::string suite) : r_(r), suite_(std::move(suite)) {}

  /// Times fn, which fills `measured` and returns whether the check holds.
  template <class Fn>
  void check(const std::string& name, double tol, Fn fn, bool required = true) {
    CheckResult c;
    c.suite = suite_;
    c.name = name;
    c.tolerance = tol;
    c.required = required;
    const auto t0 = std::chrono::steady_clock::now();
    const bool ok = fn(c.measured);
    c.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.status = required ? (ok ? CheckStatus::pass : CheckStatus::fail) : CheckStatus::measured;
    r_.checks.push_back(std::move(c));
  }

 private:
  VerifyReport& r_;
  std::string suite_;
};

using Measured = std::map<std::string, double>;

void suite_geometry(VerifyReport& rep) {
  Recorder r(rep, "geometry");
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  r.check("ray_exit_center", 1e-12, [&](Measured& m) {
    const RayHit h = ball.ray_exit(Vec3::Zero(), Vec3(-2.0, 0.0, 0.0));
    m["t"] = h.t;
    m["x_b0"] = h.x[0];
    return std::abs(h.t - 0.5) <= 1e-12 && std::abs(h.x[0] + 1.0) <= 1e-12;
  });
  r.check("boundary_area", 1e-3, [&](Measured& m) {
    const double a = ball.boundary_quadrature(24, 48).total_area();
    m["area"] = a;
    return std::abs(a / (4.0 * kPi) - 1.0) <= 1e-3;
  });
}

void suite_kernels(VerifyReport& rep) {
  Recorder r(rep, "kernels");
  r.check("c_mu_normalization", 1e-4, [&](Measured& m) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Vec3 n = Vec3(nd(rng), nd(rng), nd(rng)).normalized();
      const double flux = box_flux_integral(Vec3::Constant(-10.0), Vec3::Constant(10.0), n);
      worst = std::max(worst, std::abs(c_mu * flux - 1.0));
    }
    m["max_deviation"] = worst;
    return worst <= 1e-4;
  });
  r.check("collision_invariance", 1e-3, [&](Measured& m) {
    InvarianceOptions opt;
    opt.n_grid = 12;
    const auto res = invariance_residual([](const Vec3& v) { return mu_of(v) * (1.0 + 0.1 * v[0] * v[0]); }, opt);
    m["max_relative"] = res.max_relative();
    return res.max_relative() <= 1e-3;
  });
  r.check("kernel_comparison", 1.0, [&](Measured& m) {
    const auto c = kernel_comparison(1.0 / 16, 0.00625, 0.1, 100000, 7);
    m["max_ratio"] = c.max_ratio;
    return c.max_ratio <= 1.0;
  });
  r.check("grad_estimate", 0.0, [&](Measured& m) {
    const auto g = grad_estimate(VelocityGrid(6.0, 12), 1.0 / 16, 0.1);
    m["max_weighted"] = g.max_weighted;
    m["argmax_speed"] = g.argmax_speed;
    return std::isfinite(g.max_weighted);
  });
}

void suite_spectral(VerifyReport& rep) {
  Recorder r(rep, "spectral");
  const VelocityGrid g(6.0, 32);
  r.check("beta_residual(a,10)", 1e-4, [&](Measured& m) {
    const double v = beta_residual(g, BetaKind::a, 10.0, 0);
    m["value"] = v;
    return std::abs(v) <= 1e-4;
  });
  r.check("beta_residual(b,1)", 1e-4, [&](Measured& m) {
    const double v = beta_residual(g, BetaKind::b, 1.0, 0);
    m["value"] = v;
    return std::abs(v) <= 1e-4;
  });
  r.check("beta_residual(c,5)", 1e-4, [&](Measured& m) {
    const double v = beta_residual(g, BetaKind::c, 5.0, 0);
    m["value"] = v;
    return std::abs(v) <= 1e-4;
  });
  r.check("beta_residual(a,9)", 1e-2, [&](Measured& m) {
    const double v = beta_residual(g, BetaKind::a, 9.0, 0);
    m["value"] = v;
    return std::abs(v * std::sqrt(2.0) - 1.0) <= 1e-2;
  });
  r.check("coercivity", 0.0, [&](Measured& m) {
    const VelocityGrid gs(5.5, 12);
    const KernelTables kt(gs);
    const SpectralStudy st = spectral_study(kt, build_null_basis(gs), 50, 1);
    m["min_gap"] = st.min_gap;
    m["max_null_residual"] = st.max_null_residual;
    return st.min_gap > 0.0;
  });
}

void suite_field(VerifyReport& rep) {
  Recorder r(rep, "field");
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  auto mesh = std::make_shared<const SpatialMesh>(ball, 0.1);
  PoissonOptions o;
  o.method = PoissonMethod::polynomial;
  const PoissonSolver S(mesh, o);
  auto rel_error = [&](const PoissonSolution& s, auto exact) {
    double e = 0.0, n = 0.0;
    for (std::size_t i = 0; i < mesh->active_count(); ++i) {
      e = std::max(e, std::abs(s.phi[i] - exact(mesh->point(i))));
      n = std::max(n, std::abs(exact(mesh->point(i))));
    }
    return e / n;
  };
  r.check("neumann_x1", 1e-2, [&](Measured& m) {
    std::vector<double> rho(mesh->size());
    for (std::size_t i = 0; i < rho.size(); ++i) rho[i] = mesh->point(i)[0];
    const auto s = S.solve(rho, BoundaryCondition::neumann);
    const double e = rel_error(s, [](const Vec3& x) { return x[0] * (3.0 - x.squaredNorm()) / 10.0; });
    m["relative_error"] = e;
    return e <= 1e-2;
  });
  r.check("dirichlet_one", 1e-2, [&](Measured& m) {
    const auto s = S.solve(std::vector<double>(mesh->size(), 1.0), BoundaryCondition::dirichlet);
    const double e = rel_error(s, [](const Vec3& x) { return (1.0 - x.squaredNorm()) / 6.0; });
    m["relative_error"] = e;
    return e <= 1e-2;
  });
}

void suite_characteristics(VerifyReport& rep) {
  Recorder r(rep, "characteristics");
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  r.check("non_grazing_tangential_field", 0.0, [&](Measured& m) {
    const FieldHandle f = FieldHandle::rotational(Vec3(0.0, 0.0, 1.0));
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> nd;
    double worst = -kInf;
    int n = 0;
    while (n < 1000) {
      const Vec3 x(u(rng), u(rng), u(rng));
      if (x.norm() >= 0.95) continue;
      const Vec3 v(nd(rng), nd(rng), nd(rng));
      const ExitRecord e = backward_exit(ball, 1e3, x, v, Species::plus, f);
      if (e.infinite()) continue;
      worst = std::max(worst, e.margin);
      ++n;
    }
    m["max_margin"] = worst;
    return worst < 0.0;
  });
  r.check("jacobian_free", 1e-10, [&](Measured& m) {
    const JacobianResult j =
        jacobian_dX_dv(ball, 0.5, 1.0, Vec3::Zero(), Vec3(0.3, 0.1, 0.0), Species::plus, FieldHandle::zero());
    m["det"] = j.det;
    return std::abs(std::abs(j.det) - 0.125) <= 1e-10;
  });
}

void suite_alpha(VerifyReport& rep) {
  Recorder r(rep, "alpha");
  const ConvexDomain ball = ConvexDomain::ball(1.0);
  r.check("transport_invariance_free", 1e-12, [&](Measured& m) {
    const double res = transport_residual(ball, 0.9, Vec3(0.1, 0.2, 0), Vec3(0.5, 0.3, -0.2), Species::plus,
                                          FieldHandle::zero(), {}, 0.05, 0.4);
    m["residual"] = res;
    return res <= 1e-12;
  });
  r.check("inverse_moment_center", 2e-2, [&](Measured& m) {
    AlphaParams p;
    p.eps = 0.01;
    const double v = alpha_inverse_moment(ball, 0.9, 1.0, 1e3, Vec3::Zero(), Species::plus, FieldHandle::zero(), p);
    m["value"] = v;
    m["reference"] = 4.0 * kPi / 2.1;
    return std::abs(v / (4.0 * kPi / 2.1) - 1.0) <= 2e-2;
  });
}

void suite_solver(VerifyReport& rep) {
  Recorder r(rep, "solver");
  SolverConfig c;
  c.n_v = 6;
  c.v_max = 4.0;
  c.nonlinear = false;
  c.segments = 2;
  c.picard_max = 4;
  TimeMarchResult res;
  r.check("small_run", 5e-3, [&](Measured& m) {
    const Solver s(c);
    // Null flux is bounded by the Maxwellian half-flux defect of the grid itself.
    const std::vector<double> smu = tabulate(s.grid(), [](const Vec3& v) { return sqrt_mu_of(v); });
    double flux_tol = 0.0;
    for (const Vec3& n : s.boundary().normals)
      flux_tol = std::max(flux_tol, std::abs(c_mu * halfspace_flux(s.grid(), smu, n) - 1.0));
    res = s.time_march();
    m["mass_drift"] = res.max_mass_drift;
    m["neutrality"] = res.max_neutrality;
    m["null_flux"] = res.max_null_flux;
    m["null_flux_tolerance"] = flux_tol;
    m["lambda"] = res.fit.lambda;
    return !res.aborted && res.max_mass_drift <= 5e-3 && res.max_neutrality <= 1e-8 && res.max_null_flux <= flux_tol;
  });
  r.check("picard_contraction", 0.7, [&](Measured& m) {
    const auto& inc = res.segment_increments.front();
    double worst = 0.0;
    for (std::size_t i = 1; i < inc.size(); ++i) worst = std::max(worst, inc[i] / inc[i - 1]);
    m["max_ratio"] = worst;
    return worst <= 0.7;
  });
}

}  // namespace

VerifyReport run_verify(const std::vector<std::string>& suites) {
  const auto& all = verify_suite_names();
  for (const auto& s : suites)
    if (std::find(all.begin(), all.end(), s) == all.end()) throw ConfigError("--suite: unknown suite \"" + s + "\"");
  auto selected = [&](const std::string& s) {
    return suites.empty() || std::find(suites.begin(), suites.end(), s) != suites.end();
  };
  VerifyReport rep;
  if (selected("geometry")) suite_geometry(rep);
  if (selected("kernels")) suite_kernels(rep);
  if (selected("spectral")) suite_spectral(rep);
  if (selected("field")) suite_field(rep);
  if (selected("characteristics")) suite_characteristics(rep);
  if (selected("alpha")) suite_alpha(rep);
  if (selected("solver")) suite_solver(rep);
  return rep;
}

}  // namespace vpb
