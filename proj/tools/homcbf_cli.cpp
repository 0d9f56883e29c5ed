// Command-line front end: closed-loop scenario runs, safe-set grids,
// relative-degree certification on boundary states, and filter timing.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 safety violation
// (or a failed relative-degree certificate), 3 solver failure.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <homcbf/homcbf.hpp>

namespace {

using namespace homcbf;

PsiChain chain_from_config(const SimConfig& cfg) {
  ChainSpec spec;
  spec.r = 2;
  spec.interior_gains = {cfg.c1};
  spec.terminal_alpha = ClassK::linear(cfg.terminal_gain);
  return build_chain(micbf_field(cfg.barrier), micbf_chain_supplier(cfg.barrier), double_integrator(2), spec,
                     {cfg.x0});
}

void position_box(const BeaconArray& beacons, double pad, Vec& lo, Vec& hi) {
  lo = {beacons.positions[0][0], beacons.positions[0][1]};
  hi = lo;
  for (const auto& b : beacons.positions) {
    lo[0] = std::min(lo[0], b[0]);
    lo[1] = std::min(lo[1], b[1]);
    hi[0] = std::max(hi[0], b[0]);
    hi[1] = std::max(hi[1], b[1]);
  }
  lo[0] -= pad;
  lo[1] -= pad;
  hi[0] += pad;
  hi[1] += pad;
}

int run_simulate(const std::string& config, const std::string& out_dir, const std::string& format,
                 std::uint64_t seed, double perturb) {
  SimConfig cfg = load_sim_config(config);
  if (perturb > 0.0) cfg = with_perturbed_x0(cfg, seed, perturb);

  const ScenarioResult res = run_scenario(cfg);

  std::filesystem::create_directories(out_dir);
  const std::string path = out_dir + "/" + cfg.scenario + (format == "json" ? ".json" : ".csv");
  emit(res, format, path);

  std::printf("scenario %s: steps=%zu min_lmin_psi1=%.6g min_lmin_psi2=%.6g\n", cfg.scenario.c_str(),
              res.records.size(), res.min_lmin_psi1, res.min_lmin_psi2);
  std::printf("  infeasible_steps=%d reldeg=%d/%d wall=%.2fs filter=%.2fs\n", res.infeasible_steps,
              res.reldeg_holds, res.reldeg_checked, res.wall_seconds, res.filter_seconds);
  std::printf("wrote %s\n", path.c_str());
  if (res.halted) {
    std::fprintf(stderr, "halted: %s\n", res.halt_reason.c_str());
    return res.safety_violated ? 2 : 3;
  }
  if (res.safety_violated) {
    std::fprintf(stderr, "safety violated: min lambda_min(Psi_1) = %.6g below -%.6g\n", res.min_lmin_psi1,
                 cfg.output.violation_tol);
    return 2;
  }
  return 0;
}

int run_safe_set(const std::string& config, const std::vector<double>& bounds, int res, const std::string& out) {
  const SimConfig cfg = load_sim_config(config);
  const std::array<double, 4> b = {bounds[0], bounds[1], bounds[2], bounds[3]};
  const SafeSetGrid grid = grid_safe_set(cfg, b, res);
  emit_safe_set_csv(grid, out);
  std::size_t missing = 0;
  for (double v : grid.lmin)
    if (!(v == v)) ++missing;
  std::printf("wrote %s (%d x %d cells, %zu singular)\n", out.c_str(), res, res, missing);
  return 0;
}

int run_check_reldeg(const std::string& config, double shell_tol, int samples) {
  const SimConfig cfg = load_sim_config(config);
  const PsiChain chain = chain_from_config(cfg);
  Vec lo, hi;
  position_box(cfg.barrier.beacons, 3.0, lo, hi);
  const auto shell = sample_boundary_shell(chain, lo, hi, samples, shell_tol, 0x5eedULL);
  if (shell.empty()) {
    std::fprintf(stderr, "no boundary-shell states found; widen --shell-tol or check the scenario\n");
    return 2;
  }
  int holds = 0;
  for (std::size_t i = 0; i < shell.size(); ++i) {
    const RelDegReport rep = check_reldeg_lmi(chain, shell[i]);
    holds += rep.holds ? 1 : 0;
    std::printf("state %2zu: pos=(%+.4f, %+.4f) vel=(%+.4f, %+.4f) q=%d margin=%.3e %s\n", i, shell[i][0],
                shell[i][1], shell[i][2], shell[i][3], rep.eigenspace_dim_q, rep.margin,
                rep.holds ? "holds" : "FAILS");
  }
  std::printf("relative degree holds at %d/%zu sampled boundary states\n", holds, shell.size());
  return holds == static_cast<int>(shell.size()) ? 0 : 2;
}

int run_filter_bench(const std::string& config, int trials) {
  const SimConfig cfg = load_sim_config(config);
  const PsiChain chain = chain_from_config(cfg);
  Vec lo, hi;
  position_box(cfg.barrier.beacons, 3.0, lo, hi);
  const auto shell = sample_boundary_shell(chain, lo, hi, std::min(trials, 64), cfg.output.shell_tol, 0x5eedULL);
  if (shell.empty()) {
    std::fprintf(stderr, "no boundary-shell states found for benchmarking\n");
    return 2;
  }

  Mat a(4, 4), b(4, 2);
  a(0, 2) = a(1, 3) = 1.0;
  b(2, 0) = b(3, 1) = 1.0;
  const Mat kgain = lqr_gain(a, b, cfg.lqr.Q, cfg.lqr.R);

  std::vector<double> micros;
  micros.reserve(static_cast<std::size_t>(trials));
  int optimal = 0, infeasible = 0, maxiter = 0;
  for (int t = 0; t < trials; ++t) {
    const Vec& x = shell[static_cast<std::size_t>(t) % shell.size()];
    Vec unom = kgain.mul(sub(x, cfg.lqr.target));
    for (double& v : unom) v = -v;
    const auto t0 = std::chrono::steady_clock::now();
    const FilterSolution sol = cfg.mode == FilterMode::plain
                                   ? solve_homcbf_filter(chain, x, unom, cfg.solver)
                                   : solve_od_filter(chain, x, unom, cfg.theta_d, cfg.penalty, cfg.solver);
    micros.push_back(std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count());
    switch (sol.status) {
      case SolveStatus::optimal: ++optimal; break;
      case SolveStatus::infeasible: ++infeasible; break;
      default: ++maxiter; break;
    }
  }
  std::sort(micros.begin(), micros.end());
  const auto pct = [&micros](double q) {
    const std::size_t i = static_cast<std::size_t>(q * static_cast<double>(micros.size() - 1));
    return micros[i];
  };
  double total = 0.0;
  for (double v : micros) total += v;
  std::printf("%d solves over %zu boundary states: optimal=%d infeasible=%d max_iter=%d\n", trials, shell.size(),
              optimal, infeasible, maxiter);
  std::printf("per-solve wall: min=%.1fus p50=%.1fus p95=%.1fus max=%.1fus mean=%.1fus\n", micros.front(),
              pct(0.50), pct(0.95), micros.back(), total / static_cast<double>(micros.size()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"High-order matrix control barrier functions: simulation and certification tools"};
  app.require_subcommand(1);

  std::string config, out_dir, out_file, format = "csv";
  std::uint64_t seed = 0;
  double perturb = 0.0, shell_tol = 0.05;
  std::vector<double> bounds;
  int res = 101, samples = 16, trials = 100;

  auto* sim = app.add_subcommand("simulate", "Run a closed-loop scenario and write the trajectory");
  sim->add_option("--config", config, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out_dir, "Output directory")->required();
  sim->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  sim->add_option("--seed", seed, "Seed for the x0 perturbation draw");
  sim->add_option("--perturb-x0", perturb, "Radius of a safe random x0 perturbation (0 = off)");

  auto* ss = app.add_subcommand("safe-set", "Grid lambda_min of the information barrier over position");
  ss->add_option("--config", config, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
  ss->add_option("--bounds", bounds, "x_lo,x_hi,y_lo,y_hi")->required()->delimiter(',')->expected(4);
  ss->add_option("--res", res, "Grid resolution per axis")->check(CLI::PositiveNumber);
  ss->add_option("--out", out_file, "Output CSV path")->required();

  auto* rd = app.add_subcommand("check-reldeg", "Certify matrix relative degree on sampled boundary states");
  rd->add_option("--config", config, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
  rd->add_option("--shell-tol", shell_tol, "Half-width of the |lambda_min(Psi_2)| shell");
  rd->add_option("--samples", samples, "Boundary states to sample")->check(CLI::PositiveNumber);

  auto* fb = app.add_subcommand("filter-bench", "Time the safety filter on boundary states");
  fb->add_option("--config", config, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
  fb->add_option("--trials", trials, "Number of solves")->check(CLI::PositiveNumber);

  int rc = 0;
  sim->callback([&]() { rc = run_simulate(config, out_dir, format, seed, perturb); });
  ss->callback([&]() { rc = run_safe_set(config, bounds, res, out_file); });
  rd->callback([&]() { rc = run_check_reldeg(config, shell_tol, samples); });
  fb->callback([&]() { rc = run_filter_bench(config, trials); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int r = app.exit(e);
    return r == 0 ? 0 : 1;
  } catch (const homcbf::SolverError& e) {
    std::fprintf(stderr, "solver error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
