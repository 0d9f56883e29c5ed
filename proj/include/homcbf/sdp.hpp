#pragma once

// Safety-filter solves: small convex programs with one linear matrix
// inequality constraint,
//
//   minimize    ||u - k_nom||^2  (+ penalty * (omega - theta_d)^2)
//   subject to  A0 + sum_j u_j A_j + omega * B  >= 0   (PSD)
//               omega >= theta_d                        (decay variant)
//
// with omega fixed to 1 for the plain filter. Problems here have a handful
// of variables and matrix blocks of dimension <= ~5, so the solver is a
// bespoke primal interior-point method on the log-det barrier:
//
//   phi_tau(z) = objective(z) + (1/tau) [ -log det F(z) - sum log(slacks) ]
//
// centered by damped Newton steps, with tau increased geometrically until
// the gap estimate nu/tau reaches gap_tol. Keeping phi on the objective's
// scale (barrier divided by tau, not objective multiplied) is what makes
// the Armijo comparisons meaningful at the final tau ~ 1e12. The line
// search backtracks until the candidate keeps F(z) positive definite
// (checked by Cholesky), so every iterate is strictly feasible. Phase I
// maximizes the smallest eigenvalue of F over a large ball (epigraph form);
// a nonpositive optimum certifies infeasibility.

#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "symmat.hpp"

namespace homcbf {

/// Data of the barrier constraint at a state: F(u, omega) = A0 + sum u_j Aj + omega B.
struct BarrierLMI {
  SymMat A0;
  std::vector<SymMat> Aj;
  SymMat B;
};

/// Optimal-decay extension: omega becomes a decision variable with
/// omega >= theta_d and an added penalty * (omega - theta_d)^2 cost.
struct OdSpec {
  double theta_d = 1.0;
  double penalty_p = 10.0;
};

enum class SolveStatus { optimal, infeasible, max_iter };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    default: return "max-iter";
  }
}

struct FilterProblem {
  int m = 0;
  Vec k_nom;
  BarrierLMI lmi;
  std::optional<OdSpec> od;
};

struct FilterSolution {
  Vec u;
  double omega = 1.0;
  SolveStatus status = SolveStatus::max_iter;
  double kkt_residual = std::numeric_limits<double>::infinity();
  double lmi_min_eig = 0.0;  // lambda_min of F at the returned point, recomputed independently
  double objective = std::numeric_limits<double>::quiet_NaN();
};

struct SolverConfig {
  double barrier_t0 = 1.0;
  double barrier_mu = 10.0;
  double newton_tol = 1e-12;  // on half the squared Newton decrement
  double gap_tol = 1e-11;     // target duality-gap estimate nu / tau
  int max_outer = 40;
  int max_newton = 60;
  double feasibility_tol = 1e-9;  // Phase-I margin below which "infeasible"
};

namespace detail {

// Region Phase I searches for a strictly feasible point. Infeasibility
// verdicts are relative to this ball around the nominal start.
inline constexpr double kPhase1Radius = 1e4;

/// minimize 0.5 z^T Q z + q^T z - (1/tau) [ log det F(z) + log(ball slack) + sum log(bound slacks) ]
/// F(z) = F0 + sum z_i Fi; optional ball ||z_head - center|| <= radius over
/// the first ball_dims variables; optional lower bounds z_i >= l_i.
struct BarrierTerms {
  Mat Q;
  Vec q;
  SymMat F0;
  std::vector<SymMat> Fi;
  int ball_dims = 0;  // 0 = no ball
  Vec ball_center;
  double ball_radius = 0.0;
  std::vector<std::pair<int, double>> lower_bounds;
  // Stop as soon as z[early_exit_index] >= early_exit_threshold. Used by
  // Phase I, where any iterate with a comfortably positive margin already
  // certifies feasibility and the exact optimum is not needed.
  int early_exit_index = -1;
  double early_exit_threshold = 0.0;
};

struct BarrierOutcome {
  Vec z;
  bool centered = false;
  double gap = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();  // ||grad phi||_inf at the end
};

inline SymMat assemble_lmi(const BarrierTerms& bt, const Vec& z) {
  SymMat f = bt.F0;
  for (std::size_t i = 0; i < bt.Fi.size(); ++i)
    if (z[i] != 0.0) f.add_scaled(z[i], bt.Fi[i]);
  return f;
}

/// Strict feasibility of all barrier terms; on success fills the Cholesky
/// factor of F(z) and the log-barrier value.
inline bool barrier_value(const BarrierTerms& bt, const Vec& z, Mat& l, double& log_barrier) {
  for (const auto& [i, lo] : bt.lower_bounds)
    if (!(z[i] > lo)) return false;
  double ball_slack = 0.0;
  if (bt.ball_dims > 0) {
    double s = 0.0;
    for (int i = 0; i < bt.ball_dims; ++i) {
      const double d = z[i] - bt.ball_center[i];
      s += d * d;
    }
    ball_slack = bt.ball_radius * bt.ball_radius - s;
    if (!(ball_slack > 0.0)) return false;
  }
  if (!cholesky(assemble_lmi(bt, z), l)) return false;
  double ld = 0.0;
  for (int i = 0; i < l.rows(); ++i) ld += std::log(l(i, i));
  log_barrier = -2.0 * ld;
  if (bt.ball_dims > 0) log_barrier -= std::log(ball_slack);
  for (const auto& [i, lo] : bt.lower_bounds) log_barrier -= std::log(z[i] - lo);
  return true;
}

inline double objective_value(const BarrierTerms& bt, const Vec& z) {
  const Vec qz = bt.Q.mul(z);
  return 0.5 * dot(z, qz) + dot(bt.q, z);
}

/// Damped-Newton central path. z must be strictly feasible on entry, and
/// stays strictly feasible throughout (the line search enforces it).
inline BarrierOutcome minimize_barrier(const BarrierTerms& bt, Vec z, const SolverConfig& cfg) {
  const int d = static_cast<int>(z.size());
  const int p = bt.F0.dim();
  const double nu = p + (bt.ball_dims > 0 ? 2.0 : 0.0) + static_cast<double>(bt.lower_bounds.size());

  Mat l;
  double logb = 0.0;
  if (!barrier_value(bt, z, l, logb))
    throw SolverError("minimize_barrier: start point is not strictly feasible");

  double tau = cfg.barrier_t0;
  bool centered = false;
  bool exited_early = false;
  Vec grad(d, 0.0);
  Vec last_step;

  const auto hit_early_exit = [&bt](const Vec& zz) {
    return bt.early_exit_index >= 0 && zz[bt.early_exit_index] >= bt.early_exit_threshold;
  };

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    centered = false;
    const double inv_tau = 1.0 / tau;
    const bool last_tau = nu / tau <= cfg.gap_tol;
    int polish = 0;
    for (int it = 0; it < cfg.max_newton; ++it) {
      barrier_value(bt, z, l, logb);  // refresh factor at current z

      // W_i = F^{-1} Fi, column by column through the Cholesky factor.
      std::vector<Mat> w(d);
      for (int i = 0; i < d; ++i) {
        w[i] = Mat(p, p);
        for (int c = 0; c < p; ++c) {
          Vec col(p);
          for (int r = 0; r < p; ++r) col[r] = bt.Fi[i].at(r, c);
          col = chol_solve(l, col);
          for (int r = 0; r < p; ++r) w[i](r, c) = col[r];
        }
      }

      Mat hess(d, d);
      const Vec qz = bt.Q.mul(z);
      for (int i = 0; i < d; ++i) {
        double tr = 0.0;
        for (int r = 0; r < p; ++r) tr += w[i](r, r);
        grad[i] = qz[i] + bt.q[i] - inv_tau * tr;
        for (int j = i; j < d; ++j) {
          double t2 = 0.0;
          for (int r = 0; r < p; ++r)
            for (int c = 0; c < p; ++c) t2 += w[i](r, c) * w[j](c, r);
          hess(i, j) = hess(j, i) = bt.Q(i, j) + inv_tau * t2;
        }
      }
      if (bt.ball_dims > 0) {
        double s = 0.0;
        for (int i = 0; i < bt.ball_dims; ++i) {
          const double dd = z[i] - bt.ball_center[i];
          s += dd * dd;
        }
        const double slack = bt.ball_radius * bt.ball_radius - s;
        for (int i = 0; i < bt.ball_dims; ++i) {
          const double di = z[i] - bt.ball_center[i];
          grad[i] += inv_tau * 2.0 * di / slack;
          for (int j = i; j < bt.ball_dims; ++j) {
            const double dj = z[j] - bt.ball_center[j];
            const double hij = inv_tau * (4.0 * di * dj / (slack * slack) + (i == j ? 2.0 / slack : 0.0));
            hess(i, j) += hij;
            if (i != j) hess(j, i) += hij;
          }
        }
      }
      for (const auto& [i, lo] : bt.lower_bounds) {
        const double slack = z[i] - lo;
        grad[i] -= inv_tau / slack;
        hess(i, i) += inv_tau / (slack * slack);
      }

      double hmax = hess.max_abs();
      for (int i = 0; i < d; ++i) hess(i, i) += 1e-13 * (1.0 + hmax);

      Vec step;
      try {
        step = solve_linear(hess, scaled(grad, -1.0));
      } catch (const SolverError&) {
        break;  // Hessian breakdown; report uncentered at this tau
      }
      last_step = step;
      const double dec2 = -dot(grad, step);
      if (dec2 * 0.5 <= cfg.newton_tol) {
        // On the final tau, drive the iterate all the way into the center
        // with a couple of pure Newton steps before accepting.
        if (last_tau && polish < 2 && dec2 > 0.0) {
          Mat lc;
          double logc = 0.0;
          const Vec cand = axpy(z, 1.0, step);
          if (barrier_value(bt, cand, lc, logc)) {
            z = cand;
            ++polish;
            continue;
          }
        }
        centered = true;
        break;
      }

      const double phi0 = objective_value(bt, z) + inv_tau * logb;
      double alpha = 1.0;
      bool moved = false;
      // Quadratic phase of the damped Newton method: the decrement of the
      // equivalent self-concordant barrier (tau-scaled) is below 1/4, so the
      // full step converges without a sufficient-decrease test, which could
      // not be resolved in floating point anyway once phi flattens out.
      if (tau * dec2 <= 0.0625) {
        Mat lc;
        double logc = 0.0;
        const Vec cand = axpy(z, 1.0, step);
        if (barrier_value(bt, cand, lc, logc) &&
            objective_value(bt, cand) + inv_tau * logc <= phi0 + 1e-12 * (1.0 + std::abs(phi0))) {
          z = cand;
          moved = true;
        }
      }
      while (!moved && alpha > 1e-14) {
        const Vec cand = axpy(z, alpha, step);
        Mat lc;
        double logc = 0.0;
        if (barrier_value(bt, cand, lc, logc)) {
          const double phic = objective_value(bt, cand) + inv_tau * logc;
          if (phic <= phi0 - 0.25 * alpha * dec2) {
            z = cand;
            moved = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      if (!moved) {
        // The step could not be validated within floating-point resolution
        // of phi; accept the point as centered when the decrement is small.
        centered = dec2 * 0.5 <= 1e3 * cfg.newton_tol;
        break;
      }
      if (hit_early_exit(z)) {
        exited_early = true;
        break;
      }
    }
    if (exited_early || hit_early_exit(z)) {
      centered = true;
      break;
    }
    if (nu / tau <= cfg.gap_tol) break;
    tau *= cfg.barrier_mu;
  }

  BarrierOutcome out;
  out.z = z;
  out.centered = centered;
  out.gap = nu / tau;
  // Stationarity residual of the Newton-corrected dual estimate
  // Z = (F^{-1} - F^{-1} dF F^{-1}) / tau, which telescopes to Q * step.
  out.dual_residual = last_step.empty() ? max_abs(grad) : max_abs(bt.Q.mul(last_step));
  return out;
}

inline double lmin_small(const SymMat& a) {
  if (a.dim() == 1) return a.at(0, 0);
  if (a.dim() == 2) {
    const double p = a.at(0, 0), r = a.at(1, 1), q = a.at(0, 1);
    const double h = 0.5 * (p - r);
    return 0.5 * (p + r) - std::sqrt(h * h + q * q);
  }
  return lambda_min(a);
}

}  // namespace detail

/// Direction of greatest guaranteed positive definiteness: maximizes
/// lambda_min(A0 + sum z_i M_i) over ||z||_2 <= radius, by solving the
/// epigraph program  max t  s.t.  A0 + sum z_i M_i - t I >= 0  with the
/// same barrier machinery. Always solvable (the start z = 0,
/// t = lambda_min(A0) - 1 is strictly feasible).
struct MinEigDirection {
  double t = 0.0;
  Vec z;
};

inline MinEigDirection max_mineig_affine(const SymMat& a0, const std::vector<SymMat>& mats, double radius,
                                         const SolverConfig& cfg = {}) {
  if (mats.empty()) throw std::invalid_argument("max_mineig_affine: need at least one matrix");
  const int p = a0.dim();
  for (const SymMat& m : mats)
    if (m.dim() != p) throw std::invalid_argument("max_mineig_affine: dimension mismatch");
  if (!(radius > 0.0)) throw std::invalid_argument("max_mineig_affine: radius must be positive");

  const int k = static_cast<int>(mats.size());
  detail::BarrierTerms bt;
  bt.Q = Mat(k + 1, k + 1);
  bt.q = Vec(k + 1, 0.0);
  bt.q[k] = -1.0;  // maximize t
  bt.F0 = a0;
  bt.Fi = mats;
  SymMat negi = -1.0 * SymMat::identity(p);
  bt.Fi.push_back(negi);
  bt.ball_dims = k;
  bt.ball_center = Vec(k, 0.0);
  bt.ball_radius = radius;

  Vec z0(k + 1, 0.0);
  z0[k] = lambda_min(a0) - 1.0;
  const detail::BarrierOutcome out = detail::minimize_barrier(bt, z0, cfg);

  MinEigDirection r;
  r.t = out.z[k];
  r.z = Vec(out.z.begin(), out.z.begin() + k);
  return r;
}

inline MinEigDirection max_mineig_direction(const std::vector<SymMat>& mats, const SolverConfig& cfg = {}) {
  if (mats.empty()) throw std::invalid_argument("max_mineig_direction: need at least one matrix");
  return max_mineig_affine(SymMat(mats.front().dim()), mats, 1.0, cfg);
}

namespace detail {

inline SymMat filter_lmi_at(const FilterProblem& prob, const Vec& u, double omega) {
  SymMat f = prob.lmi.A0;
  for (int j = 0; j < prob.m; ++j)
    if (u[j] != 0.0) f.add_scaled(u[j], prob.lmi.Aj[j]);
  f.add_scaled(omega, prob.lmi.B);
  return f;
}

inline void validate_problem(const FilterProblem& prob) {
  if (prob.m < 1) throw std::invalid_argument("FilterProblem: m must be >= 1");
  if (static_cast<int>(prob.k_nom.size()) != prob.m) throw std::invalid_argument("FilterProblem: k_nom size != m");
  if (static_cast<int>(prob.lmi.Aj.size()) != prob.m) throw std::invalid_argument("FilterProblem: Aj count != m");
  const int p = prob.lmi.A0.dim();
  for (const SymMat& a : prob.lmi.Aj)
    if (a.dim() != p) throw std::invalid_argument("FilterProblem: Aj dimension mismatch");
  if (prob.lmi.B.dim() != p) throw std::invalid_argument("FilterProblem: B dimension mismatch");
  if (prob.od && !(prob.od->penalty_p > 0.0)) throw std::invalid_argument("FilterProblem: penalty must be positive");
}

}  // namespace detail

/// Solves the filter program. Plain mode (no od): omega is fixed to 1 and
/// only u is free. Optimal-decay mode: (u, omega) are free with
/// omega >= theta_d and the quadratic decay penalty added.
///
/// If the unconstrained minimizer (k_nom, theta_d) already satisfies the
/// LMI it is returned exactly. Otherwise Phase I finds a strictly feasible
/// interior start (or certifies infeasibility when its optimum margin is
/// below feasibility_tol), and the central path is followed until the gap
/// estimate drops below gap_tol.
inline FilterSolution solve_qp_sdp(const FilterProblem& prob, const SolverConfig& cfg = {}) {
  detail::validate_problem(prob);
  const int m = prob.m;
  const int p = prob.lmi.A0.dim();
  const bool od = prob.od.has_value();
  const double theta = od ? prob.od->theta_d : 1.0;
  const double ppen = od ? prob.od->penalty_p : 0.0;

  double scale = std::max(prob.lmi.A0.max_abs(), prob.lmi.B.max_abs());
  for (const SymMat& a : prob.lmi.Aj) scale = std::max(scale, a.max_abs());

  FilterSolution sol;
  sol.u = prob.k_nom;
  sol.omega = theta;

  // Unconstrained optimum feasible: nothing to do.
  const double lmin_nom = lambda_min(detail::filter_lmi_at(prob, prob.k_nom, theta));
  if (lmin_nom >= 0.0) {
    sol.status = SolveStatus::optimal;
    sol.kkt_residual = 0.0;
    sol.lmi_min_eig = lmin_nom;
    sol.objective = 0.0;
    return sol;
  }

  const int nvar = od ? m + 1 : m;
  Vec start;
  bool have_start = false;

  if (od) {
    // A large omega alone is often enough to restore strict feasibility.
    for (double bump : {1.0, 10.0, 100.0, 1000.0}) {
      Vec cand = prob.k_nom;
      cand.push_back(theta + bump);
      if (lambda_min(detail::filter_lmi_at(prob, prob.k_nom, theta + bump)) > 1e-6 * (1.0 + scale)) {
        start = cand;
        have_start = true;
        break;
      }
    }
  }

  if (!have_start) {
    // Phase I: epigraph max of lambda_min over a ball around the nominal point.
    detail::BarrierTerms ph;
    const int pd = nvar + 1;  // + epigraph variable t
    ph.Q = Mat(pd, pd);
    ph.q = Vec(pd, 0.0);
    ph.q[pd - 1] = -1.0;
    ph.F0 = prob.lmi.A0;
    ph.Fi = prob.lmi.Aj;
    if (od) {
      ph.Fi.push_back(prob.lmi.B);
      ph.lower_bounds.push_back({m, theta});
    } else {
      ph.F0 += prob.lmi.B;  // omega == 1 folded into the affine term
    }
    ph.Fi.push_back(-1.0 * SymMat::identity(p));
    ph.ball_dims = nvar;
    ph.ball_center = prob.k_nom;
    if (od) ph.ball_center.push_back(theta + 1.0);
    ph.ball_radius = detail::kPhase1Radius;
    // Any iterate whose margin clears this is already a usable interior
    // start; no need to polish the Phase-I optimum in that case.
    ph.early_exit_index = pd - 1;
    ph.early_exit_threshold = 1e-6 * (1.0 + scale);

    Vec z0 = ph.ball_center;
    z0.push_back(0.0);  // t slot; contributes 0 * (-I) to the assembly below
    z0[pd - 1] = lambda_min(detail::assemble_lmi(ph, z0)) - 1.0;

    const detail::BarrierOutcome ph_out = detail::minimize_barrier(ph, z0, cfg);
    const double margin = ph_out.z[pd - 1];
    if (margin <= cfg.feasibility_tol * (1.0 + scale)) {
      sol.status = SolveStatus::infeasible;
      sol.kkt_residual = std::numeric_limits<double>::infinity();
      sol.lmi_min_eig = lmin_nom;
      return sol;
    }
    start = Vec(ph_out.z.begin(), ph_out.z.begin() + nvar);
    have_start = true;
  }

  detail::BarrierTerms bt;
  bt.Q = Mat(nvar, nvar);
  bt.q = Vec(nvar, 0.0);
  for (int i = 0; i < m; ++i) {
    bt.Q(i, i) = 2.0;
    bt.q[i] = -2.0 * prob.k_nom[i];
  }
  if (od) {
    bt.Q(m, m) = 2.0 * ppen;
    bt.q[m] = -2.0 * ppen * theta;
    bt.lower_bounds.push_back({m, theta});
  }
  bt.F0 = prob.lmi.A0;
  if (!od) bt.F0 += prob.lmi.B;
  bt.Fi = prob.lmi.Aj;
  if (od) bt.Fi.push_back(prob.lmi.B);

  const detail::BarrierOutcome out = detail::minimize_barrier(bt, start, cfg);

  sol.u = Vec(out.z.begin(), out.z.begin() + m);
  sol.omega = od ? out.z[m] : 1.0;
  sol.status = (out.centered && out.gap <= cfg.gap_tol) ? SolveStatus::optimal : SolveStatus::max_iter;
  sol.kkt_residual = std::max(out.dual_residual, out.gap);
  sol.lmi_min_eig = lambda_min(detail::filter_lmi_at(prob, sol.u, sol.omega));
  const Vec du = sub(sol.u, prob.k_nom);
  sol.objective = dot(du, du) + (od ? ppen * (sol.omega - theta) * (sol.omega - theta) : 0.0);
  return sol;
}

/// Exhaustive reference check for solve_qp_sdp on tiny problems: scans a
/// regular grid over u (and omega for decay problems), keeps the feasible
/// point (lambda_min >= -1e-9) of least objective. Deliberately naive.
struct GridOracleResult {
  bool found = false;
  Vec z;
  double objective = std::numeric_limits<double>::quiet_NaN();
};

inline GridOracleResult grid_oracle(const FilterProblem& prob, const std::vector<std::pair<double, double>>& bounds,
                                    const std::vector<int>& steps) {
  detail::validate_problem(prob);
  const bool od = prob.od.has_value();
  const int axes = prob.m + (od ? 1 : 0);
  if (static_cast<int>(bounds.size()) != axes || static_cast<int>(steps.size()) != axes)
    throw std::invalid_argument("grid_oracle: bounds/steps must match the variable count");
  for (int s : steps)
    if (s < 1) throw std::invalid_argument("grid_oracle: steps must be >= 1");

  GridOracleResult best;
  std::vector<int> idx(axes, 0);
  Vec z(axes, 0.0);
  const double theta = od ? prob.od->theta_d : 1.0;
  const double ppen = od ? prob.od->penalty_p : 0.0;

  while (true) {
    for (int a = 0; a < axes; ++a) {
      const auto& [lo, hi] = bounds[a];
      z[a] = steps[a] == 1 ? lo : lo + (hi - lo) * idx[a] / (steps[a] - 1);
    }
    const double omega = od ? z[prob.m] : 1.0;
    if (!od || omega >= theta - 1e-12) {
      SymMat f = prob.lmi.A0;
      for (int j = 0; j < prob.m; ++j) f.add_scaled(z[j], prob.lmi.Aj[j]);
      f.add_scaled(omega, prob.lmi.B);
      if (detail::lmin_small(f) >= -1e-9) {
        double obj = 0.0;
        for (int j = 0; j < prob.m; ++j) {
          const double d = z[j] - prob.k_nom[j];
          obj += d * d;
        }
        if (od) obj += ppen * (omega - theta) * (omega - theta);
        if (!best.found || obj < best.objective) {
          best.found = true;
          best.z = z;
          best.objective = obj;
        }
      }
    }
    int a = axes - 1;
    while (a >= 0 && ++idx[a] == steps[a]) idx[a--] = 0;
    if (a < 0) break;
  }
  return best;
}

}  // namespace homcbf
