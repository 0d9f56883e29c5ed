#pragma once

// Helpers shared between the solver unit tests and the acceptance harness.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <homcbf/sdp.hpp>

namespace testsup {

using homcbf::BarrierLMI;
using homcbf::FilterProblem;
using homcbf::GridOracleResult;
using homcbf::Mat;
using homcbf::OdSpec;
using homcbf::SplitMix64;
using homcbf::SymMat;
using homcbf::Vec;

inline SymMat rand_sym(int p, SplitMix64& rng, double scale = 1.0) {
  SymMat a(p);
  for (int i = 0; i < p; ++i)
    for (int j = i; j < p; ++j) a.set(i, j, scale * rng.uniform(-1.0, 1.0));
  return a;
}

inline SymMat rand_pd(int p, SplitMix64& rng, double floor = 0.5) {
  Mat g(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) g(i, j) = rng.uniform(-1.0, 1.0);
  SymMat a = SymMat::from_full(g.transpose() * g);
  a.add_scaled(floor, SymMat::identity(p));
  return a;
}

inline SymMat assemble_lmi(const FilterProblem& prob, const Vec& u, double omega) {
  SymMat f = prob.lmi.A0;
  for (int j = 0; j < prob.m; ++j) f.add_scaled(u[static_cast<std::size_t>(j)], prob.lmi.Aj[static_cast<std::size_t>(j)]);
  f.add_scaled(omega, prob.lmi.B);
  return f;
}

/// Random instance with a certified strictly feasible point z*. The z*
/// coordinates are chosen on the round-1 grid of refined_oracle (u axes
/// [-8,8] with 41 steps, omega axis [theta, theta+6] with 41 steps), so the
/// oracle is guaranteed to see at least one feasible point.
inline FilterProblem seeded_feasible(SplitMix64& rng, int m, int p, bool od) {
  FilterProblem prob;
  prob.m = m;
  for (int j = 0; j < m; ++j) prob.k_nom.push_back(rng.uniform(-2.0, 2.0));
  for (int j = 0; j < m; ++j) prob.lmi.Aj.push_back(rand_sym(p, rng));
  prob.lmi.B = rand_sym(p, rng);
  if (od) prob.od = OdSpec{1.0, 10.0};
  const double theta = od ? prob.od->theta_d : 1.0;

  Vec zstar;
  for (int j = 0; j < m; ++j) {
    const int k = 15 + static_cast<int>(rng.next() % 11);  // [-2.0, 2.4]
    zstar.push_back(-8.0 + (8.0 - -8.0) * k / 40);
  }
  const double omega_star = od ? theta + (theta + 6.0 - theta) * static_cast<int>(rng.next() % 11) / 40 : 1.0;

  SymMat a0 = rand_pd(p, rng);
  a0.add_scaled(-omega_star, prob.lmi.B);
  for (int j = 0; j < m; ++j) a0.add_scaled(-zstar[static_cast<std::size_t>(j)], prob.lmi.Aj[static_cast<std::size_t>(j)]);
  prob.lmi.A0 = a0;
  return prob;
}

struct OracleRun {
  GridOracleResult best;
  double slack = 0.0;  // Lipschitz bound x final grid pitch, summed over axes
};

/// Grid oracle with successive refinement around the incumbent. Refinement
/// can only raise the reported minimum relative to an exhaustive fine scan,
/// so "solver <= oracle + slack" stays a sound check. Slack reflects the
/// final grid pitch.
inline OracleRun refined_oracle(const FilterProblem& prob, int steps_per_axis = 41, int rounds = 3) {
  const bool od = prob.od.has_value();
  const int axes = prob.m + (od ? 1 : 0);
  const double theta = od ? prob.od->theta_d : 1.0;

  std::vector<std::pair<double, double>> bounds;
  for (int j = 0; j < prob.m; ++j) bounds.push_back({-8.0, 8.0});
  if (od) bounds.push_back({theta, theta + 6.0});
  const std::vector<int> steps(static_cast<std::size_t>(axes), steps_per_axis);

  OracleRun run;
  for (int round = 0; round < rounds; ++round) {
    run.best = homcbf::grid_oracle(prob, bounds, steps);
    if (!run.best.found) return run;
    for (int a = 0; a < axes; ++a) {
      const double h = (bounds[static_cast<std::size_t>(a)].second - bounds[static_cast<std::size_t>(a)].first) /
                       (steps_per_axis - 1);
      double lo = run.best.z[static_cast<std::size_t>(a)] - 2.0 * h;
      double hi = run.best.z[static_cast<std::size_t>(a)] + 2.0 * h;
      if (od && a == prob.m) lo = std::max(lo, theta);
      bounds[static_cast<std::size_t>(a)] = {lo, hi};
    }
  }

  for (int a = 0; a < axes; ++a) {
    const double h = (bounds[static_cast<std::size_t>(a)].second - bounds[static_cast<std::size_t>(a)].first) /
                     (steps_per_axis - 1);
    const double reach =
        std::fabs(run.best.z[static_cast<std::size_t>(a)]) +
        (a < prob.m ? std::fabs(prob.k_nom[static_cast<std::size_t>(a)]) : 6.0);
    const double lip = 2.0 * (reach + 1.0) * (a < prob.m ? 1.0 : prob.od->penalty_p);
    run.slack += lip * h;
  }
  return run;
}

/// Closed-form solution of the plain filter for a 1x1 LMI: one linear
/// constraint a0 + b + a.u >= 0, nearest-point projection onto its
/// feasible halfspace.
inline Vec closed_form_p1(const FilterProblem& prob) {
  const double a0 = prob.lmi.A0.at(0, 0), b = prob.lmi.B.at(0, 0);
  Vec a(static_cast<std::size_t>(prob.m));
  double a2 = 0.0, slack = a0 + b;
  for (int j = 0; j < prob.m; ++j) {
    a[static_cast<std::size_t>(j)] = prob.lmi.Aj[static_cast<std::size_t>(j)].at(0, 0);
    a2 += a[static_cast<std::size_t>(j)] * a[static_cast<std::size_t>(j)];
    slack += a[static_cast<std::size_t>(j)] * prob.k_nom[static_cast<std::size_t>(j)];
  }
  Vec u = prob.k_nom;
  if (slack < 0.0 && a2 > 0.0) {
    const double shift = -slack / a2;
    for (int j = 0; j < prob.m; ++j) u[static_cast<std::size_t>(j)] += shift * a[static_cast<std::size_t>(j)];
  }
  return u;
}

/// Instance with control authority only on the minimum eigendirection:
/// with the decay multiplier pinned the constraint is unsatisfiable on the
/// complementary eigendirection, while freeing it restores feasibility
/// (omega* = 3, u* = 0 once rate relaxation absorbs the deficit).
inline FilterProblem od_separation_instance(bool od) {
  FilterProblem prob;
  prob.m = 1;
  prob.k_nom = {0.0};
  SymMat a1(2);
  a1.set(0, 0, 1.0);
  prob.lmi.Aj = {a1};
  prob.lmi.A0 = SymMat::diag({0.0, -3.0});
  prob.lmi.B = SymMat::identity(2);
  if (od) prob.od = OdSpec{1.0, 10.0};
  return prob;
}

struct AlignedInstance {
  FilterProblem prob;
  Vec z_opt;          // (u1, u2, omega), each exactly on the 400x400x50 grid
  double objective;   // value at the true constrained optimum
};

/// m=2, p=2 decay instance whose exact constrained optimum lies on the
/// 400x400x50 grid over u in [-8,8]^2, omega in [1,7]. Built by picking
/// grid-aligned (u*, omega*) with both diagonal constraints active and
/// KKT-consistent multipliers, then applying a rotation congruence so the
/// LMI is dense while the feasible set is unchanged.
inline AlignedInstance aligned_optimum_instance(SplitMix64& rng) {
  const int kom = 2 + static_cast<int>(rng.next() % 4);
  const double omega = 1.0 + (7.0 - 1.0) * kom / 49;
  const int j1 = 150 + static_cast<int>(rng.next() % 100);
  const int j2 = 150 + static_cast<int>(rng.next() % 100);
  const double u1 = -8.0 + (8.0 - -8.0) * j1 / 399;
  const double u2 = -8.0 + (8.0 - -8.0) * j2 / 399;

  const double pull = 5.0 * (omega - 1.0);  // per-constraint multiplier / 2

  AlignedInstance inst;
  inst.prob.m = 2;
  inst.prob.k_nom = {u1 - pull, u2 - pull};
  inst.prob.od = OdSpec{1.0, 10.0};

  const double c = std::cos(0.7), s = std::sin(0.7);
  Mat q(2, 2);
  q(0, 0) = c;
  q(0, 1) = -s;
  q(1, 0) = s;
  q(1, 1) = c;
  auto rot = [&](const SymMat& a) { return SymMat::from_full(q.transpose() * a.to_full() * q); };
  inst.prob.lmi.A0 = rot(SymMat::diag({-u1 - omega, -u2 - omega}));
  inst.prob.lmi.Aj = {rot(SymMat::diag({1.0, 0.0})), rot(SymMat::diag({0.0, 1.0}))};
  inst.prob.lmi.B = rot(SymMat::identity(2));

  inst.z_opt = {u1, u2, omega};
  inst.objective = 2.0 * pull * pull + 10.0 * (omega - 1.0) * (omega - 1.0);
  return inst;
}

}  // namespace testsup
