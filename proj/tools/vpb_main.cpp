#include "vpb/cli_io.hpp"
#include "vpb/characteristics.hpp"
#include "vpb/collision.hpp"
#include "vpb/field.hpp"
#include "vpb/kinetic_distance.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace vpb;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kCheckFailure = 1, kConfigError = 2, kRuntimeError = 3 };

struct DomainArgs {
  std::string kind = "ball";
  std::vector<double> axes{1.0, 1.0, 1.0};
  ConvexDomain make() const {
    if (kind == "ball") return ConvexDomain::ball(1.0);
    if (kind == "ellipsoid") return ConvexDomain::ellipsoid(axes[0], axes[1], axes[2]);
    throw ConfigError("--domain: expected ball or ellipsoid");
  }
};

void add_domain(CLI::App* app, DomainArgs& d) {
  app->add_option("--domain", d.kind, "ball or ellipsoid")->check(CLI::IsMember({"ball", "ellipsoid"}));
  app->add_option("--axes", d.axes, "ellipsoid semi-axes a,b,c")->delimiter(',')->expected(3);
}

CLI::Option* add_vec(CLI::App* app, const std::string& name, std::vector<double>& v, const std::string& help) {
  return app->add_option(name, v, help)->delimiter(',')->expected(3);
}

Vec3 vec(const std::vector<double>& v) { return Vec3(v[0], v[1], v[2]); }
json arr(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

Species species_of(const std::string& s) {
  if (s == "+" || s == "plus") return Species::plus;
  if (s == "-" || s == "minus") return Species::minus;
  throw ConfigError("--species: expected + or -");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-species Vlasov-Poisson-Boltzmann toolkit"};
  app.require_subcommand(1);

  // verify
  auto* verify = app.add_subcommand("verify", "Run verification suites and write a report");
  std::vector<std::string> suites;
  std::string report_path;
  verify->add_option("--suite", suites, "suite to run (repeatable); all when omitted")
      ->check(CLI::IsMember(verify_suite_names()));
  verify->add_option("--report", report_path, "report file (default <output dir>/verify_report.json)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Time-march a configuration and write CSV and JSON outputs");
  std::string config_path, sim_out;
  sim->add_option("config", config_path, "JSON run configuration")->required();
  sim->add_option("--output", sim_out, "output directory (overrides the config and VPB_OUTPUT_DIR)");

  // probe
  auto* probe = app.add_subcommand("probe", "Single evaluations");
  probe->require_subcommand(1);
  DomainArgs dom;
  std::vector<double> px{0.0, 0.0, 0.0}, pv{1.0, 0.0, 0.0}, pu{0.0, 0.0, 0.0};
  double pt = 1e3, peps = 0.1;
  std::string psp = "+";

  auto* p_exit = probe->add_subcommand("exit", "Backward exit time and point");
  add_domain(p_exit, dom);
  add_vec(p_exit, "--x", px, "position")->required();
  add_vec(p_exit, "--v", pv, "velocity")->required();
  p_exit->add_option("--t", pt, "current time (traces no further back than t)");
  p_exit->add_option("--species", psp, "+ or -");

  auto* p_alpha = probe->add_subcommand("alpha", "Kinetic distance");
  add_domain(p_alpha, dom);
  add_vec(p_alpha, "--x", px, "position")->required();
  add_vec(p_alpha, "--v", pv, "velocity")->required();
  p_alpha->add_option("--t", pt, "current time");
  p_alpha->add_option("--eps", peps, "cutoff width");
  p_alpha->add_option("--species", psp, "+ or -");

  auto* p_kernel = probe->add_subcommand("kernel", "Kernel values k1, k2, k_rho");
  add_vec(p_kernel, "--v", pv, "velocity v")->required();
  add_vec(p_kernel, "--u", pu, "velocity u")->required();
  double rho = 1.0 / 16.0;
  p_kernel->add_option("--rho", rho, "exponent of k_rho");

  auto* p_poisson = probe->add_subcommand("poisson", "Manufactured Poisson solve on the unit ball");
  std::string prho = "x1", pbc = "neumann";
  double ph = 0.1;
  p_poisson->add_option("--rho", prho, "x1 or one")->check(CLI::IsMember({"x1", "one"}));
  p_poisson->add_option("--bc", pbc, "neumann or dirichlet")->check(CLI::IsMember({"neumann", "dirichlet"}));
  p_poisson->add_option("--spacing", ph, "mesh spacing");
  add_vec(p_poisson, "--x", px, "evaluation point");

  // bench
  auto* bench = app.add_subcommand("bench", "Kernel assembly and sweep throughput");
  int bench_n = 12;
  bench->add_option("--n", bench_n, "velocity nodes per axis for kernel assembly");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*verify) {
      const VerifyReport rep = run_verify(suites);
      for (const auto& c : rep.checks) {
        const char* s = c.status == CheckStatus::pass ? "PASS" : c.status == CheckStatus::fail ? "FAIL" : "MEAS";
        std::cout << s << "  " << c.suite << "/" << c.name;
        for (const auto& [k, v] : c.measured) std::cout << "  " << k << "=" << v;
        std::cout << '\n';
      }
      if (report_path.empty()) {
        RunConfig none;
        const std::string dir = resolve_output_dir(none);
        std::filesystem::create_directories(dir);
        report_path = (std::filesystem::path(dir) / "verify_report.json").string();
      }
      std::ofstream out(report_path);
      if (!out) throw Error("cannot write " + report_path);
      out << rep.to_json() << '\n';
      std::cout << (rep.passed() ? "overall: pass" : "overall: fail") << "  report: " << report_path << '\n';
      return rep.passed() ? kOk : kCheckFailure;
    }
    if (*sim) {
      RunConfig cfg = load_run_config(config_path);
      if (!sim_out.empty()) cfg.output_dir = sim_out;
      TimeMarchResult r;
      const std::string dir = simulate(cfg, &r);
      std::cout << "wrote " << dir << "/" << cfg.csv_name << " and " << dir << "/" << cfg.summary_name
                << "  lambda=" << r.fit.lambda << (r.aborted ? "  ABORTED: " + r.abort_reason : "") << '\n';
      return r.aborted ? kRuntimeError : kOk;
    }
    if (*p_exit) {
      const ConvexDomain d = dom.make();
      const ExitRecord e = backward_exit(d, pt, vec(px), vec(pv), species_of(psp), FieldHandle::zero());
      json j;
      j["infinite"] = e.infinite();
      if (!e.infinite()) j.update({{"t_b", e.t_b}, {"x_b", arr(e.x_b)}, {"v_b", arr(e.v_b)}, {"margin", e.margin}});
      std::cout << j.dump(2) << '\n';
      return kOk;
    }
    if (*p_alpha) {
      const ConvexDomain d = dom.make();
      AlphaParams p;
      p.eps = peps;
      const AlphaValue a = alpha(d, pt, vec(px), vec(pv), species_of(psp), FieldHandle::zero(), p);
      json j{{"alpha", a.alpha}, {"chi", a.chi}, {"margin", a.margin}};
      j["t_b"] = std::isfinite(a.t_b) ? json(a.t_b) : json("inf");
      std::cout << j.dump(2) << '\n';
      return kOk;
    }
    if (*p_kernel) {
      const KernelValues k = kernels(vec(pv), vec(pu), rho);
      std::cout << json{{"k1", k.k1}, {"k2", k.k2}, {"k_rho", k.k_rho}, {"regularized", k.regularized}}.dump(2)
                << '\n';
      return kOk;
    }
    if (*p_poisson) {
      auto mesh = std::make_shared<const SpatialMesh>(ConvexDomain::ball(1.0), ph);
      PoissonOptions o;
      o.method = PoissonMethod::polynomial;
      const PoissonSolver S(mesh, o);
      std::vector<double> r(mesh->size());
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = prho == "x1" ? mesh->point(i)[0] : 1.0;
      const PoissonSolution s =
          S.solve(r, pbc == "neumann" ? BoundaryCondition::neumann : BoundaryCondition::dirichlet);
      const Vec3 x = vec(px);
      std::cout << json{{"phi", s.potential(x)},
                        {"grad_phi", arr(s.gradient(x))},
                        {"boundary_residual", s.boundary_residual},
                        {"gauge_applied", s.gauge_applied}}
                       .dump(2)
                << '\n';
      return kOk;
    }
    if (*bench) {
      json j;
      auto t0 = std::chrono::steady_clock::now();
      const VelocityGrid g(6.0, bench_n);
      const KernelTables kt(g);
      j["kernel_assembly_seconds"] = seconds_since(t0);
      j["kernel_nodes"] = g.size();
      SolverConfig c;
      c.n_v = 8;
      c.nonlinear = false;
      const Solver s(c);
      IterationState st = s.initialize();
      t0 = std::chrono::steady_clock::now();
      s.picard_sweep(st);
      const double sw = seconds_since(t0);
      const double points = 2.0 * s.mesh().active_count() * s.grid().size();
      j["sweep_seconds"] = sw;
      j["sweep_phase_points_per_second"] = points / sw;
      std::cout << j.dump(2) << '\n';
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
