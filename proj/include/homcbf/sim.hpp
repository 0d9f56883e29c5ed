#pragma once

// Closed-loop simulation harness: continuous-time LQR nominal control
// (Kleinman-Newton Riccati iteration), RK4 integration, the per-step
// measure -> estimate -> filter loop, safe-set grid scans, boundary-shell
// sampling for relative-degree probes, and CSV/JSON trajectory emission.

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "chain.hpp"
#include "json.hpp"
#include "localization.hpp"

namespace homcbf {

struct LqrSpec {
  SymMat Q;
  SymMat R;
  Vec target;
  LqrSpec(SymMat q, SymMat r, Vec t) : Q(std::move(q)), R(std::move(r)), target(std::move(t)) {
    if (static_cast<int>(target.size()) != Q.dim()) throw std::invalid_argument("LqrSpec: target dimension mismatch");
  }
};

namespace detail {

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      for (int k = 0; k < b.rows(); ++k)
        for (int l = 0; l < b.cols(); ++l) out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
  return out;
}

/// Solves acl^T P + P acl = -s via the Kronecker form (column-major vec).
inline Mat lyap_solve(const Mat& acl, const Mat& s) {
  const int n = acl.rows();
  const Mat at = acl.transpose();
  const Mat id = Mat::identity(n);
  const Mat sys = kron(id, at) + kron(at, id);
  Vec rhs(static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) rhs[static_cast<std::size_t>(j) * n + i] = -s(i, j);
  const Vec v = solve_linear(sys, rhs);
  Mat p(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) p(i, j) = v[static_cast<std::size_t>(j) * n + i];
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double m = 0.5 * (p(i, j) + p(j, i));
      p(i, j) = p(j, i) = m;
    }
  return p;
}

/// Lyapunov test: acl is Hurwitz iff acl^T P + P acl = -I has a PD solution.
inline bool is_hurwitz(const Mat& acl) {
  const int n = acl.rows();
  Mat p(n, n);
  try {
    p = lyap_solve(acl, Mat::identity(n));
  } catch (const SolverError&) {
    return false;
  }
  const Mat res = acl.transpose() * p + p * acl + Mat::identity(n);
  if (res.max_abs() > 1e-8 * (1.0 + p.max_abs())) return false;
  Mat l(1, 1);
  return cholesky(SymMat::from_full(p), l);
}

}  // namespace detail

/// Continuous-time LQR gain K = R^{-1} B^T P by Kleinman-Newton iteration
/// from a stabilizing initial gain. The returned gain satisfies the CARE
/// residual bound ||A^T P + P A - P B R^{-1} B^T P + Q||_max <= 1e-8.
inline Mat lqr_gain(const Mat& a, const Mat& b, const SymMat& q, const SymMat& r) {
  const int n = a.rows();
  const int m = b.cols();
  if (a.cols() != n || b.rows() != n) throw std::invalid_argument("lqr_gain: dimension mismatch");
  if (q.dim() != n || r.dim() != m) throw std::invalid_argument("lqr_gain: weight dimension mismatch");
  Mat rl(1, 1);
  if (!cholesky(r, rl)) throw std::invalid_argument("lqr_gain: R must be positive definite");
  const Mat qf = q.to_full();
  const Mat rf = r.to_full();

  std::vector<Mat> candidates;
  candidates.push_back(Mat(m, n));
  candidates.push_back(b.transpose());
  if (n == 2 * m) {
    Mat k(m, n);
    for (int j = 0; j < m; ++j) {
      k(j, j) = 1.0;
      k(j, m + j) = 1.0;
    }
    candidates.push_back(k);
  }
  Mat k(m, n);
  bool found = false;
  for (const Mat& cand : candidates) {
    if (detail::is_hurwitz(a - b * cand)) {
      k = cand;
      found = true;
      break;
    }
  }
  if (!found) throw SolverError("lqr_gain: no stabilizing initial gain found (system may be uncontrollable)");

  Mat p(n, n);
  for (int iter = 0; iter < 100; ++iter) {
    const Mat acl = a - b * k;
    const Mat s = qf + k.transpose() * (rf * k);
    p = detail::lyap_solve(acl, s);
    const Mat btp = b.transpose() * p;
    Mat knext(m, n);
    for (int j = 0; j < n; ++j) {
      Vec col(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) col[static_cast<std::size_t>(i)] = btp(i, j);
      const Vec x = chol_solve(rl, col);
      for (int i = 0; i < m; ++i) knext(i, j) = x[static_cast<std::size_t>(i)];
    }
    const double dk = (knext - k).max_abs();
    k = knext;
    if (dk <= 1e-13 * (1.0 + k.max_abs())) break;
  }
  const Mat res = a.transpose() * p + p * a - p * (b * k) + qf;
  if (res.max_abs() > 1e-8) throw SolverError("lqr_gain: Riccati iteration did not converge");
  return k;
}

/// Classical RK4 step of x' = f(x) + G(x) u with u held over the step.
inline Vec rk4_step(const ControlAffine& sys, const Vec& x, const Vec& u, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  if (static_cast<int>(x.size()) != sys.n || static_cast<int>(u.size()) != sys.m)
    throw std::invalid_argument("rk4_step: dimension mismatch");
  auto xdot = [&](const Vec& s) {
    Vec d = sys.drift(s);
    const Mat g = sys.input_columns(s);
    for (int i = 0; i < sys.n; ++i)
      for (int j = 0; j < sys.m; ++j) d[static_cast<std::size_t>(i)] += g(i, j) * u[static_cast<std::size_t>(j)];
    return d;
  };
  const Vec k1 = xdot(x);
  const Vec k2 = xdot(axpy(x, 0.5 * dt, k1));
  const Vec k3 = xdot(axpy(x, 0.5 * dt, k2));
  const Vec k4 = xdot(axpy(x, dt, k3));
  Vec out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (!std::isfinite(out[i])) throw SolverError("rk4_step: non-finite state");
  }
  return out;
}

enum class FilterMode { plain, optimal_decay };
enum class InfeasiblePolicy { hold, halt };

struct OutputOptions {
  double violation_tol = 1e-3;
  InfeasiblePolicy infeasible_policy = InfeasiblePolicy::hold;
  int reldeg_probes = 16;    // boundary-shell states checked before a run (0 disables)
  double shell_tol = 0.05;   // |lambda_min(Psi_2)| band defining the shell
};

struct SimConfig {
  std::string scenario = "unnamed";
  int dimension = 2;
  InfoBarrierSpec barrier;
  double c1 = 1.0;
  double terminal_gain = 1.0;
  FilterMode mode = FilterMode::optimal_decay;
  double theta_d = 1.0;
  double penalty = 10.0;
  LqrSpec lqr{SymMat::identity(4), SymMat::identity(2), Vec(4, 0.0)};
  double dt = 1e-3;
  double horizon = 30.0;
  Vec x0 = Vec(4, 0.0);
  NlsConfig nls;
  SolverConfig solver;
  OutputOptions output;
};

inline void validate_sim_config(const SimConfig& cfg) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (cfg.dimension != 2) fail("only planar dynamics (dimension 2) are supported");
  if (!(cfg.dt > 0.0) || !std::isfinite(cfg.dt)) fail("dt must be positive");
  if (!(cfg.horizon >= 0.0) || !std::isfinite(cfg.horizon)) fail("horizon must be nonnegative");
  if (cfg.x0.size() != 4) fail("x0 must have four components");
  for (double v : cfg.x0)
    if (!std::isfinite(v)) fail("x0 must be finite");
  if (!(cfg.barrier.lambda_s > 0.0)) fail("lambda_s must be positive");
  if (!(cfg.c1 > 0.0)) fail("chain gain c1 must be positive");
  if (!(cfg.terminal_gain > 0.0)) fail("terminal gain must be positive");
  if (cfg.mode == FilterMode::optimal_decay) {
    if (!(cfg.theta_d >= 0.0)) fail("theta_d must be nonnegative");
    if (!(cfg.penalty > 0.0)) fail("penalty must be positive");
  }
  if (cfg.lqr.Q.dim() != 4 || cfg.lqr.R.dim() != 2 || cfg.lqr.target.size() != 4)
    fail("lqr weights must be 4-state / 2-input with a 4-component target");
  if (!(cfg.nls.step_size > 0.0)) fail("nls step_size must be positive");
  if (!(cfg.output.violation_tol >= 0.0)) fail("violation_tol must be nonnegative");
  if (cfg.output.reldeg_probes < 0) fail("reldeg_probes must be nonnegative");
  if (!(cfg.output.shell_tol > 0.0)) fail("shell_tol must be positive");
  detail::check_beacons(cfg.barrier.beacons);
}

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        ok = true;
        break;
      }
    if (!ok) throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
  }
}

inline const nlohmann::json& member(const nlohmann::json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) throw std::invalid_argument("config: missing key '" + std::string(key) + "' in " + where);
  return *it;
}

inline double as_num(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number()) throw std::invalid_argument("config: " + what + " must be a number");
  return v.get<double>();
}

inline int as_int(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number_integer()) throw std::invalid_argument("config: " + what + " must be an integer");
  return v.get<int>();
}

inline std::string as_str(const nlohmann::json& v, const std::string& what) {
  if (!v.is_string()) throw std::invalid_argument("config: " + what + " must be a string");
  return v.get<std::string>();
}

inline Vec as_vec(const nlohmann::json& v, const std::string& what) {
  if (!v.is_array()) throw std::invalid_argument("config: " + what + " must be an array");
  Vec out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(as_num(e, what + " entry"));
  return out;
}

inline double num_or(const nlohmann::json& j, const char* key, const std::string& where, double def) {
  const auto it = j.find(key);
  return it == j.end() ? def : as_num(*it, where + "." + key);
}

inline int int_or(const nlohmann::json& j, const char* key, const std::string& where, int def) {
  const auto it = j.find(key);
  return it == j.end() ? def : as_int(*it, where + "." + key);
}

}  // namespace detail

inline SimConfig parse_sim_config(const nlohmann::json& j) {
  using detail::as_int;
  using detail::as_num;
  using detail::as_str;
  using detail::as_vec;
  using detail::member;
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  detail::check_keys(j, "top level",
                     {"scenario", "dimension", "beacons", "model", "weights", "lambda_s", "sign_convention", "chain",
                      "filter", "lqr", "dt", "horizon", "x0", "nls", "solver", "output"});
  SimConfig cfg;
  cfg.scenario = as_str(member(j, "scenario", "top level"), "scenario");
  cfg.dimension = detail::int_or(j, "dimension", "top level", 2);

  const auto& jb = member(j, "beacons", "top level");
  if (!jb.is_array() || jb.empty()) throw std::invalid_argument("config: beacons must be a nonempty array");
  for (const auto& e : jb) {
    const Vec b = as_vec(e, "beacon");
    if (b.size() != 2) throw std::invalid_argument("config: each beacon must be an [x, y] pair");
    cfg.barrier.beacons.positions.push_back({b[0], b[1]});
  }

  const std::string model = as_str(member(j, "model", "top level"), "model");
  if (model == "range")
    cfg.barrier.model = MeasModel::range;
  else if (model == "bearing")
    cfg.barrier.model = MeasModel::bearing;
  else
    throw std::invalid_argument("config: model must be 'range' or 'bearing'");

  if (j.contains("weights")) {
    const auto& jw = j["weights"];
    detail::check_keys(jw, "weights", {"kind", "dropout_offset"});
    const std::string kind = as_str(member(jw, "kind", "weights"), "weights.kind");
    if (kind == "identity")
      cfg.barrier.weights.kind = WeightKind::identity;
    else if (kind == "dropout")
      cfg.barrier.weights.kind = WeightKind::dropout;
    else
      throw std::invalid_argument("config: weights.kind must be 'identity' or 'dropout'");
    cfg.barrier.weights.dropout_offset = detail::num_or(jw, "dropout_offset", "weights", 10.0);
  }

  cfg.barrier.lambda_s = as_num(member(j, "lambda_s", "top level"), "lambda_s");

  if (j.contains("sign_convention")) {
    const std::string sc = as_str(j["sign_convention"], "sign_convention");
    if (sc == "minus")
      cfg.barrier.sign = SignConvention::minus;
    else if (sc == "plus")
      cfg.barrier.sign = SignConvention::plus;
    else
      throw std::invalid_argument("config: sign_convention must be 'minus' or 'plus'");
  }

  if (j.contains("chain")) {
    const auto& jc = j["chain"];
    detail::check_keys(jc, "chain", {"c1", "terminal_gain"});
    cfg.c1 = detail::num_or(jc, "c1", "chain", 1.0);
    cfg.terminal_gain = detail::num_or(jc, "terminal_gain", "chain", 1.0);
  }

  if (j.contains("filter")) {
    const auto& jf = j["filter"];
    detail::check_keys(jf, "filter", {"mode", "theta_d", "penalty"});
    if (jf.contains("mode")) {
      const std::string mode = as_str(jf["mode"], "filter.mode");
      if (mode == "plain")
        cfg.mode = FilterMode::plain;
      else if (mode == "optimal-decay")
        cfg.mode = FilterMode::optimal_decay;
      else
        throw std::invalid_argument("config: filter.mode must be 'plain' or 'optimal-decay'");
    }
    cfg.theta_d = detail::num_or(jf, "theta_d", "filter", cfg.theta_d);
    cfg.penalty = detail::num_or(jf, "penalty", "filter", cfg.penalty);
  }

  {
    const auto& jl = member(j, "lqr", "top level");
    detail::check_keys(jl, "lqr", {"q_diag", "r_diag", "target"});
    Vec qd = jl.contains("q_diag") ? as_vec(jl["q_diag"], "lqr.q_diag") : Vec(4, 1.0);
    Vec rd = jl.contains("r_diag") ? as_vec(jl["r_diag"], "lqr.r_diag") : Vec(2, 1.0);
    Vec target = as_vec(member(jl, "target", "lqr"), "lqr.target");
    if (qd.size() != 4 || rd.size() != 2 || target.size() != 4)
      throw std::invalid_argument("config: lqr needs q_diag[4], r_diag[2], target[4]");
    cfg.lqr = LqrSpec(SymMat::diag(qd), SymMat::diag(rd), target);
  }

  cfg.dt = detail::num_or(j, "dt", "top level", 1e-3);
  cfg.horizon = detail::num_or(j, "horizon", "top level", 30.0);
  cfg.x0 = as_vec(member(j, "x0", "top level"), "x0");

  if (j.contains("nls")) {
    const auto& jn = j["nls"];
    detail::check_keys(jn, "nls", {"step_size", "max_iters", "grad_tol"});
    cfg.nls.step_size = detail::num_or(jn, "step_size", "nls", cfg.nls.step_size);
    cfg.nls.max_iters = detail::int_or(jn, "max_iters", "nls", cfg.nls.max_iters);
    cfg.nls.grad_tol = detail::num_or(jn, "grad_tol", "nls", cfg.nls.grad_tol);
  }

  if (j.contains("solver")) {
    const auto& js = j["solver"];
    detail::check_keys(js, "solver",
                       {"barrier_t0", "barrier_mu", "newton_tol", "gap_tol", "max_outer", "max_newton",
                        "feasibility_tol"});
    cfg.solver.barrier_t0 = detail::num_or(js, "barrier_t0", "solver", cfg.solver.barrier_t0);
    cfg.solver.barrier_mu = detail::num_or(js, "barrier_mu", "solver", cfg.solver.barrier_mu);
    cfg.solver.newton_tol = detail::num_or(js, "newton_tol", "solver", cfg.solver.newton_tol);
    cfg.solver.gap_tol = detail::num_or(js, "gap_tol", "solver", cfg.solver.gap_tol);
    cfg.solver.max_outer = detail::int_or(js, "max_outer", "solver", cfg.solver.max_outer);
    cfg.solver.max_newton = detail::int_or(js, "max_newton", "solver", cfg.solver.max_newton);
    cfg.solver.feasibility_tol = detail::num_or(js, "feasibility_tol", "solver", cfg.solver.feasibility_tol);
  }

  if (j.contains("output")) {
    const auto& jo = j["output"];
    detail::check_keys(jo, "output", {"violation_tol", "infeasible_policy", "reldeg_probes", "shell_tol"});
    cfg.output.violation_tol = detail::num_or(jo, "violation_tol", "output", cfg.output.violation_tol);
    if (jo.contains("infeasible_policy")) {
      const std::string pol = as_str(jo["infeasible_policy"], "output.infeasible_policy");
      if (pol == "hold")
        cfg.output.infeasible_policy = InfeasiblePolicy::hold;
      else if (pol == "halt")
        cfg.output.infeasible_policy = InfeasiblePolicy::halt;
      else
        throw std::invalid_argument("config: output.infeasible_policy must be 'hold' or 'halt'");
    }
    cfg.output.reldeg_probes = detail::int_or(jo, "reldeg_probes", "output", cfg.output.reldeg_probes);
    cfg.output.shell_tol = detail::num_or(jo, "shell_tol", "output", cfg.output.shell_tol);
  }

  validate_sim_config(cfg);
  return cfg;
}

inline SimConfig load_sim_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config: " + std::string(e.what()));
  }
  return parse_sim_config(j);
}

struct TrajectoryRecord {
  double t = 0.0;
  Vec x;
  Vec xhat;
  Vec u_nom;
  Vec u;
  double omega = 0.0;
  double lmin_psi1 = 0.0;
  double lmin_psi2 = 0.0;
  SolveStatus status = SolveStatus::optimal;
  int nls_iters = 0;
  double est_err = 0.0;
  bool operator==(const TrajectoryRecord&) const = default;
};

struct ScenarioResult {
  std::vector<TrajectoryRecord> records;
  double min_lmin_psi1 = std::numeric_limits<double>::infinity();
  double min_lmin_psi2 = std::numeric_limits<double>::infinity();
  bool safety_violated = false;
  bool halted = false;
  std::string halt_reason;
  int infeasible_steps = 0;
  int reldeg_checked = 0;
  int reldeg_holds = 0;
  double wall_seconds = 0.0;
  double filter_seconds = 0.0;
};

/// Draws states on the shell |lambda_min(Psi_2)| <= shell_tol: positions are
/// rejection-sampled inside the safe set over [lo, hi], then the velocity
/// magnitude along a random direction is bisected to the shell (Psi_2 is
/// affine in velocity for the r = 2 information chain, so a sign change
/// always brackets the shell). Returns up to count states.
inline std::vector<Vec> sample_boundary_shell(const PsiChain& chain, const Vec& lo, const Vec& hi, int count,
                                              double shell_tol, std::uint64_t seed) {
  if (lo.size() != 2 || hi.size() != 2) throw std::invalid_argument("sample_boundary_shell: bounds must be planar");
  if (!(shell_tol > 0.0)) throw std::invalid_argument("sample_boundary_shell: shell_tol must be positive");
  std::vector<Vec> out;
  SplitMix64 rng(seed);
  const int max_attempts = 400 * std::max(count, 1);
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < count; ++attempt) {
    Vec x = {rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]), 0.0, 0.0};
    double l1 = 0.0;
    try {
      l1 = lambda_min(eval_psi(chain, 1, x));
    } catch (const std::domain_error&) {
      continue;
    }
    if (l1 < 1e-3) continue;
    const double ang = rng.uniform(0.0, 2.0 * detail::kPi);
    const double vx = std::cos(ang), vy = std::sin(ang);
    auto phi = [&](double s) {
      const Vec xs = {x[0], x[1], s * vx, s * vy};
      return lambda_min(eval_psi(chain, 2, xs));
    };
    double s_lo = 0.0, s_hi = 1.0;
    double f_hi = phi(s_hi);
    for (int d = 0; d < 16 && f_hi > -shell_tol; ++d) {
      s_hi *= 2.0;
      f_hi = phi(s_hi);
    }
    if (f_hi > -shell_tol) continue;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (s_lo + s_hi);
      const double fm = phi(mid);
      if (std::fabs(fm) <= 0.5 * shell_tol) {
        out.push_back({x[0], x[1], mid * vx, mid * vy});
        break;
      }
      (fm > 0.0 ? s_lo : s_hi) = mid;
    }
  }
  return out;
}

namespace detail {

inline void beacon_box(const BeaconArray& beacons, double pad, Vec& lo, Vec& hi) {
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

}  // namespace detail

/// Runs the closed loop: measure the true state, estimate by warm-started
/// NLS, filter the LQR input through the r = 2 information barrier chain at
/// the estimate, integrate the true state. Barrier traces are recorded at
/// the true state.
inline ScenarioResult run_scenario(const SimConfig& cfg) {
  validate_sim_config(cfg);
  const auto t_start = std::chrono::steady_clock::now();

  const ControlAffine sys = double_integrator(2);
  ChainSpec spec;
  spec.r = 2;
  spec.interior_gains = {cfg.c1};
  spec.terminal_alpha = ClassK::linear(cfg.terminal_gain);
  const PsiChain chain = build_chain(micbf_field(cfg.barrier), micbf_chain_supplier(cfg.barrier), sys, spec, {cfg.x0});

  if (!in_safe_intersection(chain, cfg.x0, 1e-9))
    throw std::invalid_argument("config: x0 is outside the safe intersection");

  ScenarioResult result;
  if (cfg.output.reldeg_probes > 0) {
    Vec lo, hi;
    detail::beacon_box(cfg.barrier.beacons, 3.0, lo, hi);
    const auto shell =
        sample_boundary_shell(chain, lo, hi, cfg.output.reldeg_probes, cfg.output.shell_tol, 0x5eedULL);
    for (const Vec& s : shell) {
      const RelDegReport rep = check_reldeg_lmi(chain, s);
      ++result.reldeg_checked;
      if (rep.holds) ++result.reldeg_holds;
    }
  }

  Mat a(4, 4), b(4, 2);
  a(0, 2) = a(1, 3) = 1.0;
  b(2, 0) = b(3, 1) = 1.0;
  const Mat kgain = lqr_gain(a, b, cfg.lqr.Q, cfg.lqr.R);

  const long steps = std::llround(cfg.horizon / cfg.dt);
  result.records.reserve(static_cast<std::size_t>(std::max(steps, 0L)));
  Vec x = cfg.x0;
  Vec warm = {x[0], x[1]};
  Vec last_u(2, 0.0);

  for (long k = 0; k < steps; ++k) {
    try {
      const Vec y = measure(cfg.barrier.model, cfg.barrier.beacons, {x[0], x[1]});
      const NlsResult est = nls_estimate(cfg.barrier, y, warm, cfg.nls);
      warm = est.estimate;
      const Vec xhat = {est.estimate[0], est.estimate[1], x[2], x[3]};

      Vec unom = kgain.mul(sub(xhat, cfg.lqr.target));
      for (double& v : unom) v = -v;

      const auto f_start = std::chrono::steady_clock::now();
      const FilterSolution sol = cfg.mode == FilterMode::plain
                                     ? solve_homcbf_filter(chain, xhat, unom, cfg.solver)
                                     : solve_od_filter(chain, xhat, unom, cfg.theta_d, cfg.penalty, cfg.solver);
      result.filter_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - f_start).count();

      Vec u = sol.u;
      if (sol.status != SolveStatus::optimal) {
        ++result.infeasible_steps;
        u = last_u;
        if (cfg.output.infeasible_policy == InfeasiblePolicy::halt) {
          result.halted = true;
          result.halt_reason =
              std::string("filter ") + to_string(sol.status) + " at t=" + std::to_string(k * cfg.dt);
        }
      }
      last_u = u;

      TrajectoryRecord rec;
      rec.t = static_cast<double>(k) * cfg.dt;
      rec.x = x;
      rec.xhat = xhat;
      rec.u_nom = unom;
      rec.u = u;
      rec.omega = sol.omega;
      rec.lmin_psi1 = lambda_min(eval_psi(chain, 1, x));
      rec.lmin_psi2 = lambda_min(eval_psi(chain, 2, x));
      rec.status = sol.status;
      rec.nls_iters = est.iterations;
      rec.est_err = std::hypot(est.estimate[0] - x[0], est.estimate[1] - x[1]);
      result.records.push_back(std::move(rec));

      if (result.halted) break;
      x = rk4_step(sys, x, u, cfg.dt);
    } catch (const SolverError& e) {
      result.halted = true;
      result.halt_reason = e.what();
      break;
    }
  }

  for (const TrajectoryRecord& rec : result.records) {
    result.min_lmin_psi1 = std::min(result.min_lmin_psi1, rec.lmin_psi1);
    result.min_lmin_psi2 = std::min(result.min_lmin_psi2, rec.lmin_psi2);
  }
  result.safety_violated = result.min_lmin_psi1 < -cfg.output.violation_tol;
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

/// Copy of cfg with the x0 position perturbed uniformly in a disk of the
/// given radius, redrawn until the perturbed state is safe.
inline SimConfig with_perturbed_x0(SimConfig cfg, std::uint64_t seed, double radius) {
  if (!(radius > 0.0)) return cfg;
  validate_sim_config(cfg);
  const ControlAffine sys = double_integrator(2);
  ChainSpec spec;
  spec.r = 2;
  spec.interior_gains = {cfg.c1};
  spec.terminal_alpha = ClassK::linear(cfg.terminal_gain);
  const PsiChain chain = build_chain(micbf_field(cfg.barrier), micbf_chain_supplier(cfg.barrier), sys, spec, {cfg.x0});
  SplitMix64 rng(seed);
  for (int tries = 0; tries < 200; ++tries) {
    const double ang = rng.uniform(0.0, 2.0 * detail::kPi);
    const double rad = radius * std::sqrt(rng.uniform());
    Vec x = cfg.x0;
    x[0] += rad * std::cos(ang);
    x[1] += rad * std::sin(ang);
    if (in_safe_intersection(chain, x, 1e-9)) {
      cfg.x0 = x;
      return cfg;
    }
  }
  throw std::invalid_argument("config: no safe perturbed x0 found within the requested radius");
}

struct SafeSetGrid {
  Vec xs, ys;
  std::vector<double> lmin;  // row-major over (iy, ix); NaN where singular
};

/// Dense grid of lambda_min of the information barrier over position.
inline SafeSetGrid grid_safe_set(const SimConfig& cfg, const std::array<double, 4>& bounds, int resolution) {
  validate_sim_config(cfg);
  if (resolution < 1) throw std::invalid_argument("grid_safe_set: resolution must be >= 1");
  for (double bv : bounds)
    if (!std::isfinite(bv)) throw std::invalid_argument("grid_safe_set: bounds must be finite");
  const MatrixFieldJet field = micbf_field(cfg.barrier);
  SafeSetGrid grid;
  auto axis = [resolution](double lo, double hi) {
    Vec v(static_cast<std::size_t>(resolution));
    for (int i = 0; i < resolution; ++i)
      v[static_cast<std::size_t>(i)] =
          resolution == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(resolution - 1);
    return v;
  };
  grid.xs = axis(bounds[0], bounds[1]);
  grid.ys = axis(bounds[2], bounds[3]);
  grid.lmin.reserve(grid.xs.size() * grid.ys.size());
  for (double y : grid.ys)
    for (double x : grid.xs) {
      double v;
      try {
        v = lambda_min(field.value({x, y}));
      } catch (const std::domain_error&) {
        v = std::numeric_limits<double>::quiet_NaN();
      }
      grid.lmin.push_back(v);
    }
  return grid;
}

namespace detail {

inline void fmt17(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit: cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("emit: write failed for " + path);
}

inline SolveStatus status_from_string(const std::string& s) {
  if (s == "optimal") return SolveStatus::optimal;
  if (s == "infeasible") return SolveStatus::infeasible;
  if (s == "max-iter") return SolveStatus::max_iter;
  throw std::invalid_argument("trajectory: unknown status '" + s + "'");
}

}  // namespace detail

inline const char* trajectory_csv_header() {
  return "t,x0,x1,x2,x3,xhat0,xhat1,xhat2,xhat3,unom0,unom1,u0,u1,omega,lmin_psi1,lmin_psi2,status,nls_iters,"
         "est_err";
}

inline std::string emit_csv_string(const ScenarioResult& result) {
  std::string out = trajectory_csv_header();
  out += '\n';
  for (const TrajectoryRecord& r : result.records) {
    detail::fmt17(out, r.t);
    for (double v : r.x) {
      out += ',';
      detail::fmt17(out, v);
    }
    for (double v : r.xhat) {
      out += ',';
      detail::fmt17(out, v);
    }
    for (double v : r.u_nom) {
      out += ',';
      detail::fmt17(out, v);
    }
    for (double v : r.u) {
      out += ',';
      detail::fmt17(out, v);
    }
    out += ',';
    detail::fmt17(out, r.omega);
    out += ',';
    detail::fmt17(out, r.lmin_psi1);
    out += ',';
    detail::fmt17(out, r.lmin_psi2);
    out += ',';
    out += to_string(r.status);
    out += ',';
    out += std::to_string(r.nls_iters);
    out += ',';
    detail::fmt17(out, r.est_err);
    out += '\n';
  }
  return out;
}

inline std::string emit_json_string(const ScenarioResult& result) {
  std::string out = "{\n  \"records\": [";
  auto num = [](std::string& s, double v) {
    if (std::isfinite(v))
      detail::fmt17(s, v);
    else
      s += "null";
  };
  auto vec = [&num](std::string& s, const Vec& v) {
    s += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      num(s, v[i]);
    }
    s += ']';
  };
  bool first = true;
  for (const TrajectoryRecord& r : result.records) {
    out += first ? "\n" : ",\n";
    first = false;
    out += "    {\"t\": ";
    num(out, r.t);
    out += ", \"x\": ";
    vec(out, r.x);
    out += ", \"xhat\": ";
    vec(out, r.xhat);
    out += ", \"u_nom\": ";
    vec(out, r.u_nom);
    out += ", \"u\": ";
    vec(out, r.u);
    out += ", \"omega\": ";
    num(out, r.omega);
    out += ", \"lmin_psi1\": ";
    num(out, r.lmin_psi1);
    out += ", \"lmin_psi2\": ";
    num(out, r.lmin_psi2);
    out += ", \"status\": \"";
    out += to_string(r.status);
    out += "\", \"nls_iters\": ";
    out += std::to_string(r.nls_iters);
    out += ", \"est_err\": ";
    num(out, r.est_err);
    out += '}';
  }
  out += result.records.empty() ? "]" : "\n  ]";
  out += ",\n  \"summary\": {\"min_lmin_psi1\": ";
  num(out, result.min_lmin_psi1);
  out += ", \"min_lmin_psi2\": ";
  num(out, result.min_lmin_psi2);
  out += ", \"safety_violated\": ";
  out += result.safety_violated ? "true" : "false";
  out += ", \"halted\": ";
  out += result.halted ? "true" : "false";
  out += ", \"halt_reason\": ";
  out += nlohmann::json(result.halt_reason).dump();
  out += ", \"infeasible_steps\": ";
  out += std::to_string(result.infeasible_steps);
  out += ", \"reldeg_checked\": ";
  out += std::to_string(result.reldeg_checked);
  out += ", \"reldeg_holds\": ";
  out += std::to_string(result.reldeg_holds);
  out += ", \"steps\": ";
  out += std::to_string(result.records.size());
  out += ", \"wall_seconds\": ";
  num(out, result.wall_seconds);
  out += ", \"filter_seconds\": ";
  num(out, result.filter_seconds);
  out += "}\n}\n";
  return out;
}

inline void emit(const ScenarioResult& result, const std::string& format, const std::string& path) {
  if (format == "csv")
    detail::write_file(path, emit_csv_string(result));
  else if (format == "json")
    detail::write_file(path, emit_json_string(result));
  else
    throw std::invalid_argument("emit: format must be 'csv' or 'json'");
}

inline void emit_safe_set_csv(const SafeSetGrid& grid, const std::string& path) {
  std::string out = "x,y,lambda_min\n";
  std::size_t idx = 0;
  for (double y : grid.ys)
    for (double x : grid.xs) {
      detail::fmt17(out, x);
      out += ',';
      detail::fmt17(out, y);
      out += ',';
      detail::fmt17(out, grid.lmin[idx++]);
      out += '\n';
    }
  detail::write_file(path, out);
}

/// Parses a trajectory CSV produced by emit back into records.
inline std::vector<TrajectoryRecord> load_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("trajectory: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trajectory: empty file " + path);
  if (line != trajectory_csv_header()) throw std::runtime_error("trajectory: unexpected header in " + path);
  std::vector<TrajectoryRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 19) throw std::runtime_error("trajectory: malformed row in " + path);
    auto fnum = [&fields](std::size_t i) { return std::strtod(fields[i].c_str(), nullptr); };
    TrajectoryRecord r;
    r.t = fnum(0);
    r.x = {fnum(1), fnum(2), fnum(3), fnum(4)};
    r.xhat = {fnum(5), fnum(6), fnum(7), fnum(8)};
    r.u_nom = {fnum(9), fnum(10)};
    r.u = {fnum(11), fnum(12)};
    r.omega = fnum(13);
    r.lmin_psi1 = fnum(14);
    r.lmin_psi2 = fnum(15);
    r.status = detail::status_from_string(fields[16]);
    r.nls_iters = static_cast<int>(std::strtol(fields[17].c_str(), nullptr, 10));
    r.est_err = fnum(18);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace homcbf
