#pragma once

// Control-affine dynamics and matrix-valued fields with first-order
// derivative information ("jets").
//
// A MatrixFieldJet bundles H(x) with its state partials dH/dx_j, either
// supplied analytically or synthesized by central differences. Lie
// derivatives of matrix fields are taken entrywise:
//   L_f H = sum_j dH/dx_j * f_j(x)
//   L_g H (column j) = sum_k dH/dx_k * g(x)(k, j)

#include <functional>
#include <stdexcept>
#include <utility>

#include "symmat.hpp"

namespace homcbf {

/// xdot = drift(x) + input_columns(x) * u, with x in R^n and u in R^m.
struct ControlAffine {
  int n = 0;
  int m = 0;
  std::function<Vec(const Vec&)> drift;           // R^n -> R^n
  std::function<Mat(const Vec&)> input_columns;   // R^n -> n x m

  ControlAffine() = default;
  ControlAffine(int n_, int m_, std::function<Vec(const Vec&)> f, std::function<Mat(const Vec&)> g)
      : n(n_), m(m_), drift(std::move(f)), input_columns(std::move(g)) {
    if (n < 1 || m < 1) throw std::invalid_argument("ControlAffine: n and m must be >= 1");
    if (!drift || !input_columns) throw std::invalid_argument("ControlAffine: missing field functions");
  }
};

enum class JetProvenance { analytic, finite_difference };

/// A symmetric-matrix field x -> H(x) together with its first partials.
/// partial(x, j) is dH/dx_j with j a 0-based state index.
struct MatrixFieldJet {
  int dim_p = 0;
  std::function<SymMat(const Vec&)> value;
  std::function<SymMat(const Vec&, int)> partial;
  JetProvenance provenance = JetProvenance::analytic;
  double fd_step = 0.0;  // recorded when provenance == finite_difference
};

/// Entrywise Lie derivative along the drift.
inline SymMat lie_f(const MatrixFieldJet& field, const ControlAffine& sys, const Vec& x) {
  if (static_cast<int>(x.size()) != sys.n) throw std::invalid_argument("lie_f: state dimension mismatch");
  const Vec f = sys.drift(x);
  SymMat acc(field.dim_p);
  for (int j = 0; j < sys.n; ++j) {
    if (f[j] == 0.0) continue;
    acc.add_scaled(f[j], field.partial(x, j));
  }
  return acc;
}

/// Entrywise Lie derivative along input column j (0-based, j < m).
inline SymMat lie_g(const MatrixFieldJet& field, const ControlAffine& sys, const Vec& x, int j) {
  if (static_cast<int>(x.size()) != sys.n) throw std::invalid_argument("lie_g: state dimension mismatch");
  if (j < 0 || j >= sys.m) throw std::out_of_range("lie_g: input index out of range");
  const Mat g = sys.input_columns(x);
  SymMat acc(field.dim_p);
  for (int k = 0; k < sys.n; ++k) {
    const double gkj = g(k, j);
    if (gkj == 0.0) continue;
    acc.add_scaled(gkj, field.partial(x, k));
  }
  return acc;
}

/// Jet with central-difference partials,
///   dH/dx_j ~ (H(x + h e_j) - H(x - h e_j)) / (2h),  h = step * (1 + |x_j|).
inline MatrixFieldJet fd_jet(std::function<SymMat(const Vec&)> value_fn, int dim_p, double step = 1e-5) {
  if (!(step > 0.0)) throw std::invalid_argument("fd_jet: step must be positive");
  if (!value_fn) throw std::invalid_argument("fd_jet: missing value function");
  MatrixFieldJet jet;
  jet.dim_p = dim_p;
  jet.value = value_fn;
  jet.provenance = JetProvenance::finite_difference;
  jet.fd_step = step;
  jet.partial = [value_fn, step](const Vec& x, int j) {
    if (j < 0 || j >= static_cast<int>(x.size())) throw std::out_of_range("fd_jet: partial index out of range");
    const double h = step * (1.0 + std::fabs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    SymMat d = value_fn(xp) - value_fn(xm);
    return (1.0 / (2.0 * h)) * d;
  };
  return jet;
}

/// d decoupled double integrators: state (pos, vel) in R^{2d}, u in R^d,
///   pdot = v, vdot = u.
inline ControlAffine double_integrator(int d) {
  if (d < 1) throw std::invalid_argument("double_integrator: d must be >= 1");
  const int n = 2 * d;
  return ControlAffine(
      n, d,
      [d, n](const Vec& x) {
        if (static_cast<int>(x.size()) != n) throw std::invalid_argument("double_integrator: bad state size");
        Vec f(n, 0.0);
        for (int i = 0; i < d; ++i) f[i] = x[d + i];
        return f;
      },
      [d, n](const Vec&) {
        Mat g(n, d);
        for (int i = 0; i < d; ++i) g(d + i, i) = 1.0;
        return g;
      });
}

/// xdot = u with u in R^n (zero drift, identity input map).
inline ControlAffine single_integrator(int n) {
  if (n < 1) throw std::invalid_argument("single_integrator: n must be >= 1");
  return ControlAffine(
      n, n, [n](const Vec&) { return Vec(n, 0.0); }, [n](const Vec&) { return Mat::identity(n); });
}

}  // namespace homcbf
