#pragma once

// Recursive matrix barrier chains.
//
// Given a PSD-valued barrier field Psi_1 = H(x) and positive interior gains
// c_1 .. c_{r-1}, the chain is
//
//   Psi_{i+1} = L_f Psi_i + c_i Psi_i,   i = 1 .. r-1,
//
// and the enforced constraint at the top level is
//
//   L_f Psi_r + sum_j u_j L_{g_j} Psi_r + omega * alpha_r(Psi_r) >= 0 (PSD).
//
// Interior gains are linear on purpose: level values then close over the
// iterated drift derivatives D_k = L_f^k H with constant coefficients
// (products of gains summed over subsets), so level jets never need
// spectral derivatives. Only the terminal gain alpha_r may be a nonlinear
// scalar function, applied spectrally to the top-level value.
//
// The caller supplies jets of D_k for k = 0 .. r-1 (analytic where
// available); fd_chain_supplier synthesizes them by nested central
// differences when no analytic form exists.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sdp.hpp"
#include "system.hpp"

namespace homcbf {

struct ChainSpec {
  int r = 1;
  std::vector<double> interior_gains;  // c_1 .. c_{r-1}, all > 0
  ClassK terminal_alpha = ClassK::linear(1.0);
};

struct PsiChain {
  ChainSpec spec;
  ControlAffine sys;
  std::vector<MatrixFieldJet> lf_powers;  // D_k = L_f^k H, k = 0 .. r-1
  std::vector<MatrixFieldJet> levels;     // Psi_i, i = 1 .. r (levels[i-1])
};

/// k -> jet of L_f^k H (k = 0 returns H itself).
using JetSupplier = std::function<MatrixFieldJet(int)>;

/// Builds the D_k jets by repeated finite differencing: each D_{k+1} value
/// is the drift Lie derivative of the previous finite-difference jet.
inline JetSupplier fd_chain_supplier(std::function<SymMat(const Vec&)> h_value, int dim_p, const ControlAffine& sys,
                                     double step = 1e-5) {
  auto jets = std::make_shared<std::vector<MatrixFieldJet>>();
  jets->push_back(fd_jet(std::move(h_value), dim_p, step));
  return [jets, dim_p, sys, step](int k) {
    if (k < 0) throw std::out_of_range("fd_chain_supplier: negative level");
    while (static_cast<int>(jets->size()) <= k) {
      const MatrixFieldJet prev = jets->back();
      auto next_value = [prev, sys](const Vec& x) { return lie_f(prev, sys, x); };
      jets->push_back(fd_jet(next_value, dim_p, step));
    }
    return (*jets)[k];
  };
}

namespace detail {

inline void validate_chain_spec(const ChainSpec& spec) {
  if (spec.r < 1) throw std::invalid_argument("ChainSpec: r must be >= 1");
  if (static_cast<int>(spec.interior_gains.size()) != spec.r - 1)
    throw std::invalid_argument("ChainSpec: need exactly r-1 interior gains");
  for (double c : spec.interior_gains)
    if (!(c > 0.0)) throw std::invalid_argument("ChainSpec: interior gains must be positive");
  // Terminal gain sanity: zero at zero and increasing on a sample grid.
  if (std::fabs(spec.terminal_alpha(0.0)) > 1e-12)
    throw std::invalid_argument("ChainSpec: terminal_alpha(0) must be 0");
  const double samples[] = {-2.0, -1.0, -0.25, 0.25, 1.0, 2.0};
  double prev = spec.terminal_alpha(samples[0]);
  for (std::size_t i = 1; i < std::size(samples); ++i) {
    const double cur = spec.terminal_alpha(samples[i]);
    if (!(cur > prev)) throw std::invalid_argument("ChainSpec: terminal_alpha must be increasing");
    prev = cur;
  }
}

/// coeffs[i-1][k] = coefficient of D_k in Psi_i. Follows the recursion:
/// Psi_1 = D_0; Psi_{i+1} = (shift by one drift derivative) + c_i * Psi_i.
inline std::vector<std::vector<double>> level_coefficients(const ChainSpec& spec) {
  std::vector<std::vector<double>> coeffs(spec.r);
  coeffs[0] = {1.0};
  for (int i = 1; i < spec.r; ++i) {
    const double c = spec.interior_gains[i - 1];
    coeffs[i] = std::vector<double>(i + 1, 0.0);
    for (int k = 0; k < i; ++k) {
      coeffs[i][k + 1] += coeffs[i - 1][k];      // L_f D_k = D_{k+1}
      coeffs[i][k] += c * coeffs[i - 1][k];      // c_i * Psi_i term
    }
  }
  return coeffs;
}

inline MatrixFieldJet combine_jets(const std::vector<MatrixFieldJet>& base, const std::vector<double>& w) {
  MatrixFieldJet jet;
  jet.dim_p = base.front().dim_p;
  jet.provenance = JetProvenance::analytic;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (base[k].provenance == JetProvenance::finite_difference) {
      jet.provenance = JetProvenance::finite_difference;
      jet.fd_step = base[k].fd_step;
    }
  }
  jet.value = [base, w](const Vec& x) {
    SymMat acc(base.front().dim_p);
    for (std::size_t k = 0; k < w.size(); ++k) acc.add_scaled(w[k], base[k].value(x));
    return acc;
  };
  jet.partial = [base, w](const Vec& x, int j) {
    SymMat acc(base.front().dim_p);
    for (std::size_t k = 0; k < w.size(); ++k) acc.add_scaled(w[k], base[k].partial(x, j));
    return acc;
  };
  return jet;
}

}  // namespace detail

/// Assembles the chain from H and a supplier of higher drift-derivative
/// jets. The recursion identity Psi_{i+1} = L_f Psi_i + c_i Psi_i (which
/// encodes the supplier contract L_f D_k = D_{k+1}) is checked at every
/// probe state to 1e-8 relative; violations throw.
inline PsiChain build_chain(const MatrixFieldJet& h, const JetSupplier& higher, const ControlAffine& sys,
                            const ChainSpec& spec, const std::vector<Vec>& probes = {}) {
  detail::validate_chain_spec(spec);
  if (!h.value || !h.partial) throw std::invalid_argument("build_chain: H jet is incomplete");

  PsiChain chain;
  chain.spec = spec;
  chain.sys = sys;
  chain.lf_powers.push_back(h);
  for (int k = 1; k < spec.r; ++k) {
    if (!higher) throw std::invalid_argument("build_chain: level " + std::to_string(k) + " jet missing (no supplier)");
    MatrixFieldJet jet = higher(k);
    if (!jet.value || !jet.partial)
      throw std::invalid_argument("build_chain: level " + std::to_string(k) + " jet missing");
    if (jet.dim_p != h.dim_p) throw std::invalid_argument("build_chain: level jet dimension mismatch");
    chain.lf_powers.push_back(std::move(jet));
  }

  const auto coeffs = detail::level_coefficients(spec);
  for (int i = 0; i < spec.r; ++i) chain.levels.push_back(detail::combine_jets(chain.lf_powers, coeffs[i]));

  for (const Vec& x : probes) {
    for (int i = 1; i < spec.r; ++i) {
      const SymMat lhs = chain.levels[i].value(x);
      SymMat rhs = lie_f(chain.levels[i - 1], sys, x);
      rhs.add_scaled(spec.interior_gains[i - 1], chain.levels[i - 1].value(x));
      const SymMat diff = lhs - rhs;
      const double tol = 1e-8 * (1.0 + std::max(lhs.max_abs(), rhs.max_abs()));
      if (diff.max_abs() > tol)
        throw std::invalid_argument("build_chain: recursion check failed at level " + std::to_string(i + 1) +
                                    " (supplied drift-derivative jets are inconsistent)");
    }
  }
  return chain;
}

/// Value of Psi_level at x; level is 1-based (1 .. r).
inline SymMat eval_psi(const PsiChain& chain, int level, const Vec& x) {
  if (level < 1 || level > chain.spec.r) throw std::out_of_range("eval_psi: level out of range");
  return chain.levels[level - 1].value(x);
}

/// True when every chain level is PSD at x up to tol.
inline bool in_safe_intersection(const PsiChain& chain, const Vec& x, double tol) {
  for (int i = 1; i <= chain.spec.r; ++i)
    if (lambda_min(eval_psi(chain, i, x)) < -tol) return false;
  return true;
}

/// Constraint data of the top-level barrier at x:
///   A0 = L_f Psi_r,  Aj = L_{g_j} Psi_r,  B = alpha_r(Psi_r).
inline BarrierLMI barrier_lmi(const PsiChain& chain, const Vec& x) {
  const MatrixFieldJet& top = chain.levels.back();
  BarrierLMI lmi;
  lmi.A0 = lie_f(top, chain.sys, x);
  lmi.Aj.reserve(chain.sys.m);
  for (int j = 0; j < chain.sys.m; ++j) lmi.Aj.push_back(lie_g(top, chain.sys, x, j));
  lmi.B = apply_spectral(top.value(x), chain.spec.terminal_alpha);
  return lmi;
}

/// Certificate produced by the well-posedness / relative-degree checks.
struct RelDegReport {
  bool holds = false;
  std::optional<Vec> certificate_u;
  double margin = 0.0;           // optimal min-eig of the projected pencil over the unit ball
  bool lower_levels_zero = true; // input derivatives vanish below the top level
  int eigenspace_dim_q = 0;
};

namespace detail {

inline double margin_threshold(const std::vector<SymMat>& mats) {
  double scale = 0.0;
  for (const SymMat& m : mats) scale = std::max(scale, m.max_abs());
  return 1e-7 * (1.0 + scale);
}

}  // namespace detail

/// Well-posedness of a single barrier field under single-integrator inputs:
/// projects the state partials onto the minimal eigenspace of field(x) and
/// asks whether some unit direction u makes sum_j u_j V^T dPsi/dx_j V
/// positive definite. holds requires the optimal margin to clear
/// 1e-7 * (1 + scale).
inline RelDegReport check_wellposed(const MatrixFieldJet& field, const Vec& x, double cluster_tol) {
  const SymMat psi = field.value(x);
  const ClusterBasis cb = min_eigenspace(psi, cluster_tol);
  const int n = static_cast<int>(x.size());
  std::vector<SymMat> projected;
  projected.reserve(n);
  for (int j = 0; j < n; ++j) projected.push_back(congruence(cb.basis, field.partial(x, j)));

  const MinEigDirection dir = max_mineig_direction(projected);
  RelDegReport rep;
  rep.margin = dir.t;
  rep.eigenspace_dim_q = cb.q();
  rep.lower_levels_zero = true;
  rep.holds = dir.t > detail::margin_threshold(projected);
  if (rep.holds) rep.certificate_u = dir.z;
  return rep;
}

inline RelDegReport check_wellposed(const MatrixFieldJet& field, const Vec& x) {
  return check_wellposed(field, x, default_cluster_tol(field.value(x)));
}

enum class Definiteness { pos_definite, neg_definite, indefinite };

/// Sufficient single-input test: sign-definiteness of the projected input
/// derivative V^T L_{g_j} Psi_r V on the minimal eigenspace of Psi_r(x).
inline Definiteness check_reldeg_sufficient(const PsiChain& chain, const Vec& x, int j, double cluster_tol) {
  if (j < 0 || j >= chain.sys.m) throw std::out_of_range("check_reldeg_sufficient: input index out of range");
  const SymMat psi = eval_psi(chain, chain.spec.r, x);
  const ClusterBasis cb = min_eigenspace(psi, cluster_tol);
  const SymMat proj = congruence(cb.basis, lie_g(chain.levels.back(), chain.sys, x, j));
  const EigDecomp e = eig_sym(proj);
  const double tol = 1e-7 * (1.0 + proj.max_abs());
  if (e.values.front() > tol) return Definiteness::pos_definite;
  if (e.values.back() < -tol) return Definiteness::neg_definite;
  return Definiteness::indefinite;
}

/// Full relative-degree certificate at x:
///  (1) L_{g_j} L_f^k H vanishes (to 1e-8) for all inputs j and k <= r-2;
///  (2) some unit u makes the projected top-level input pencil positive
///      definite on the minimal eigenspace of Psi_r(x).
inline RelDegReport check_reldeg_lmi(const PsiChain& chain, const Vec& x, double cluster_tol) {
  RelDegReport rep;
  rep.lower_levels_zero = true;
  for (int k = 0; k + 1 < chain.spec.r; ++k) {
    for (int j = 0; j < chain.sys.m; ++j) {
      const SymMat lg = lie_g(chain.lf_powers[k], chain.sys, x, j);
      if (lg.max_abs() > 1e-8) {
        rep.lower_levels_zero = false;
        break;
      }
    }
    if (!rep.lower_levels_zero) break;
  }

  const SymMat psi = eval_psi(chain, chain.spec.r, x);
  const ClusterBasis cb = min_eigenspace(psi, cluster_tol);
  std::vector<SymMat> projected;
  projected.reserve(chain.sys.m);
  for (int j = 0; j < chain.sys.m; ++j)
    projected.push_back(congruence(cb.basis, lie_g(chain.levels.back(), chain.sys, x, j)));

  const MinEigDirection dir = max_mineig_direction(projected);
  rep.margin = dir.t;
  rep.eigenspace_dim_q = cb.q();
  rep.holds = rep.lower_levels_zero && dir.t > detail::margin_threshold(projected);
  if (dir.t > detail::margin_threshold(projected)) rep.certificate_u = dir.z;
  return rep;
}

inline RelDegReport check_reldeg_lmi(const PsiChain& chain, const Vec& x) {
  return check_reldeg_lmi(chain, x, default_cluster_tol(eval_psi(chain, chain.spec.r, x)));
}

/// Plain safety filter at x: omega fixed to 1.
inline FilterSolution solve_homcbf_filter(const PsiChain& chain, const Vec& x, const Vec& k_nom,
                                          const SolverConfig& cfg = {}) {
  FilterProblem prob;
  prob.m = chain.sys.m;
  prob.k_nom = k_nom;
  prob.lmi = barrier_lmi(chain, x);
  return solve_qp_sdp(prob, cfg);
}

/// Optimal-decay filter at x: omega free above theta_d with quadratic penalty.
inline FilterSolution solve_od_filter(const PsiChain& chain, const Vec& x, const Vec& k_nom, double theta_d,
                                      double penalty_p, const SolverConfig& cfg = {}) {
  FilterProblem prob;
  prob.m = chain.sys.m;
  prob.k_nom = k_nom;
  prob.lmi = barrier_lmi(chain, x);
  prob.od = OdSpec{theta_d, penalty_p};
  return solve_qp_sdp(prob, cfg);
}

}  // namespace homcbf
