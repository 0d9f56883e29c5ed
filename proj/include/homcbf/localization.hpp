#pragma once

// Beacon localization: range/bearing measurement models, distance-dropout
// weighting, the Gauss-Newton information matrix with analytic position
// derivatives through second order, the information barrier field over
// double-integrator states, and the gradient-descent NLS estimator.
//
// The information matrix at zero residual is M(p) = 2 J(p)^T W(p) J(p)
// with J the measurement Jacobian and W = diag(w_k). Every derivative the
// r = 2 barrier chain needs (dM/dp and d^2M/dp^2) is assembled from
// per-beacon closed forms of the measurement's first three derivatives and
// the weight's first two, so the whole chain stays analytic.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "chain.hpp"
#include "symmat.hpp"
#include "system.hpp"

namespace homcbf {

enum class MeasModel { range, bearing };

struct BeaconArray {
  std::vector<std::array<double, 2>> positions;
};

enum class WeightKind { identity, dropout };

struct WeightSpec {
  WeightKind kind = WeightKind::identity;
  double dropout_offset = 10.0;
};

enum class SignConvention { minus, plus };

struct InfoBarrierSpec {
  double lambda_s = 1.0;
  SignConvention sign = SignConvention::minus;
  MeasModel model = MeasModel::range;
  BeaconArray beacons;
  WeightSpec weights;
};

struct NlsConfig {
  double step_size = 0.05;
  int max_iters = 5000;
  double grad_tol = 1e-9;
};

struct NlsResult {
  Vec estimate;
  int iterations = 0;
  double grad_norm = 0.0;
  double cost = 0.0;
};

namespace detail {

constexpr double kBeaconSingularity = 1e-18;  // squared-distance threshold
constexpr double kPi = 3.141592653589793238462643383279502884;

inline void check_beacons(const BeaconArray& beacons) {
  if (beacons.positions.empty()) throw std::invalid_argument("BeaconArray: need at least one beacon");
  for (const auto& b : beacons.positions)
    if (!std::isfinite(b[0]) || !std::isfinite(b[1]))
      throw std::invalid_argument("BeaconArray: non-finite beacon position");
}

inline void check_position(const Vec& pos) {
  if (pos.size() < 2) throw std::invalid_argument("localization: position needs two components");
  if (!std::isfinite(pos[0]) || !std::isfinite(pos[1]))
    throw std::invalid_argument("localization: non-finite position");
}

/// Measurement value and its first three position derivatives for one beacon.
struct BeaconDerivs {
  double m = 0.0;
  double G[2] = {0.0, 0.0};
  double Hm[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  double T[2][2][2] = {};
};

inline BeaconDerivs beacon_derivs(MeasModel model, const std::array<double, 2>& b, double px, double py) {
  const double rx = px - b[0];
  const double ry = py - b[1];
  const double d2 = rx * rx + ry * ry;
  if (d2 < kBeaconSingularity) throw std::domain_error("localization: measurement evaluated at a beacon");

  BeaconDerivs out;
  if (model == MeasModel::range) {
    const double d = std::sqrt(d2);
    const double d3 = d * d2;
    const double d5 = d3 * d2;
    const double r[2] = {rx, ry};
    out.m = d;
    out.G[0] = rx / d;
    out.G[1] = ry / d;
    out.Hm[0][0] = ry * ry / d3;
    out.Hm[0][1] = out.Hm[1][0] = -rx * ry / d3;
    out.Hm[1][1] = rx * rx / d3;
    for (int i = 0; i < 2; ++i)
      for (int l = 0; l < 2; ++l)
        for (int s = 0; s < 2; ++s) {
          double v = 3.0 * r[i] * r[l] * r[s] / d5;
          if (i == l) v -= r[s] / d3;
          if (i == s) v -= r[l] / d3;
          if (l == s) v -= r[i] / d3;
          out.T[i][l][s] = v;
        }
  } else {
    const double d4 = d2 * d2;
    const double d6 = d4 * d2;
    out.m = std::atan2(ry, rx);
    if (out.m == -kPi) out.m = -out.m;  // convention: range (-pi, pi]
    out.G[0] = -ry / d2;
    out.G[1] = rx / d2;
    out.Hm[0][0] = 2.0 * rx * ry / d4;
    out.Hm[0][1] = out.Hm[1][0] = (ry * ry - rx * rx) / d4;
    out.Hm[1][1] = -2.0 * rx * ry / d4;
    out.T[0][0][0] = 2.0 * ry * (ry * ry - 3.0 * rx * rx) / d6;
    out.T[0][0][1] = out.T[0][1][0] = out.T[1][0][0] = 2.0 * rx * (rx * rx - 3.0 * ry * ry) / d6;
    out.T[0][1][1] = out.T[1][0][1] = out.T[1][1][0] = 2.0 * ry * (3.0 * rx * rx - ry * ry) / d6;
    out.T[1][1][1] = 2.0 * rx * (3.0 * ry * ry - rx * rx) / d6;
  }
  return out;
}

/// Weight value and its first two derivatives in the measurement value.
struct WeightDerivs {
  double w = 1.0, dw = 0.0, d2w = 0.0;
};

inline WeightDerivs weight_derivs(const WeightSpec& spec, double m) {
  if (spec.kind == WeightKind::identity) return {1.0, 0.0, 0.0};
  const double w = 1.0 / (1.0 + std::exp(m - spec.dropout_offset));
  return {w, -w * (1.0 - w), w * (1.0 - w) * (1.0 - 2.0 * w)};
}

inline SymMat sym2(double a00, double a01, double a11) {
  SymMat s(2);
  s.set(0, 0, a00);
  s.set(0, 1, a01);
  s.set(1, 1, a11);
  return s;
}

/// a b^T + b a^T for 2-vectors.
inline SymMat sym_outer2(const double a[2], const double b[2]) {
  return sym2(2.0 * a[0] * b[0], a[0] * b[1] + a[1] * b[0], 2.0 * a[1] * b[1]);
}

inline double wrap_angle(double a) {
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r <= 0.0) r += 2.0 * kPi;
  return r - kPi;
}

}  // namespace detail

/// Per-beacon measurement vector at pos = (p_x, p_y).
inline Vec measure(MeasModel model, const BeaconArray& beacons, const Vec& pos) {
  detail::check_beacons(beacons);
  detail::check_position(pos);
  Vec y;
  y.reserve(beacons.positions.size());
  for (const auto& b : beacons.positions) y.push_back(detail::beacon_derivs(model, b, pos[0], pos[1]).m);
  return y;
}

/// k x 2 Jacobian of measure in the position.
inline Mat meas_jacobian(MeasModel model, const BeaconArray& beacons, const Vec& pos) {
  detail::check_beacons(beacons);
  detail::check_position(pos);
  Mat jac(static_cast<int>(beacons.positions.size()), 2);
  for (std::size_t k = 0; k < beacons.positions.size(); ++k) {
    const detail::BeaconDerivs bd = detail::beacon_derivs(model, beacons.positions[k], pos[0], pos[1]);
    jac(static_cast<int>(k), 0) = bd.G[0];
    jac(static_cast<int>(k), 1) = bd.G[1];
  }
  return jac;
}

/// Per-beacon confidence weights from the measurement values.
inline Vec weights(const WeightSpec& spec, const Vec& meas_values) {
  Vec w;
  w.reserve(meas_values.size());
  for (double m : meas_values) w.push_back(detail::weight_derivs(spec, m).w);
  return w;
}

/// Gauss-Newton information matrix M(pos) = 2 J^T diag(w) J.
inline SymMat info_matrix(const InfoBarrierSpec& spec, const Vec& pos) {
  detail::check_beacons(spec.beacons);
  detail::check_position(pos);
  SymMat m(2);
  for (const auto& b : spec.beacons.positions) {
    const detail::BeaconDerivs bd = detail::beacon_derivs(spec.model, b, pos[0], pos[1]);
    const double w = detail::weight_derivs(spec.weights, bd.m).w;
    m.add_scaled(2.0 * w, detail::sym2(bd.G[0] * bd.G[0], bd.G[0] * bd.G[1], bd.G[1] * bd.G[1]));
  }
  return m;
}

/// Information matrix with its first and second position derivatives.
struct InfoDerivs {
  SymMat M;
  std::array<SymMat, 2> dM;
  std::array<std::array<SymMat, 2>, 2> d2M;
  InfoDerivs() : M(2), dM{SymMat(2), SymMat(2)}, d2M{{{SymMat(2), SymMat(2)}, {SymMat(2), SymMat(2)}}} {}
};

inline InfoDerivs info_derivs(const InfoBarrierSpec& spec, const Vec& pos) {
  detail::check_beacons(spec.beacons);
  detail::check_position(pos);
  InfoDerivs out;
  for (const auto& b : spec.beacons.positions) {
    const detail::BeaconDerivs bd = detail::beacon_derivs(spec.model, b, pos[0], pos[1]);
    const detail::WeightDerivs wd = detail::weight_derivs(spec.weights, bd.m);

    const SymMat gg = detail::sym2(bd.G[0] * bd.G[0], bd.G[0] * bd.G[1], bd.G[1] * bd.G[1]);
    const double hcol[2][2] = {{bd.Hm[0][0], bd.Hm[1][0]}, {bd.Hm[0][1], bd.Hm[1][1]}};  // hcol[l] = dG/dp_l
    const double dwp[2] = {wd.dw * bd.G[0], wd.dw * bd.G[1]};                            // dw/dp_l

    out.M.add_scaled(2.0 * wd.w, gg);
    for (int l = 0; l < 2; ++l) {
      out.dM[l].add_scaled(2.0 * dwp[l], gg);
      out.dM[l].add_scaled(2.0 * wd.w, detail::sym_outer2(hcol[l], bd.G));
    }
    for (int l = 0; l < 2; ++l)
      for (int s = l; s < 2; ++s) {
        const double d2w = wd.d2w * bd.G[l] * bd.G[s] + wd.dw * bd.Hm[l][s];
        const double tcol[2] = {bd.T[0][l][s], bd.T[1][l][s]};
        SymMat acc(2);
        acc.add_scaled(d2w, gg);
        acc.add_scaled(dwp[l], detail::sym_outer2(hcol[s], bd.G));
        acc.add_scaled(dwp[s], detail::sym_outer2(hcol[l], bd.G));
        acc.add_scaled(wd.w, detail::sym_outer2(tcol, bd.G));
        acc.add_scaled(wd.w, detail::sym_outer2(hcol[l], hcol[s]));
        out.d2M[l][s].add_scaled(2.0, acc);
      }
  }
  out.d2M[1][0] = out.d2M[0][1];
  return out;
}

/// Jet of M over the 2-D position, with analytic partials cross-checked
/// against finite differences at the probe states.
inline MatrixFieldJet info_matrix_jet(const InfoBarrierSpec& spec, const std::vector<Vec>& probes) {
  detail::check_beacons(spec.beacons);
  MatrixFieldJet jet;
  jet.dim_p = 2;
  jet.provenance = JetProvenance::analytic;
  jet.value = [spec](const Vec& x) { return info_matrix(spec, x); };
  jet.partial = [spec](const Vec& x, int j) {
    if (j < 0 || j > 1) throw std::out_of_range("info_matrix_jet: partial index out of range");
    return info_derivs(spec, x).dM[static_cast<std::size_t>(j)];
  };

  const MatrixFieldJet fd = fd_jet(jet.value, 2, 1e-5);
  for (const Vec& x : probes) {
    for (int j = 0; j < 2; ++j) {
      const SymMat a = jet.partial(x, j);
      const SymMat diff = a - fd.partial(x, j);
      if (diff.max_abs() > 1e-4 * (1.0 + a.max_abs()))
        throw std::runtime_error("info_matrix_jet: analytic partial disagrees with finite differences");
    }
  }
  return jet;
}

inline MatrixFieldJet info_matrix_jet(const InfoBarrierSpec& spec) {
  detail::check_beacons(spec.beacons);
  double cx = 0.0, cy = 0.0;
  for (const auto& b : spec.beacons.positions) {
    cx += b[0];
    cy += b[1];
  }
  cx /= static_cast<double>(spec.beacons.positions.size());
  cy /= static_cast<double>(spec.beacons.positions.size());

  const double offs[][2] = {{0.0, 0.0}, {1.3, 0.4}, {-0.9, 1.1}, {0.5, -1.6}, {2.4, 2.1}, {-1.7, -2.2}};
  std::vector<Vec> probes;
  for (const auto& o : offs) {
    const Vec p = {cx + o[0], cy + o[1]};
    bool clear = true;
    for (const auto& b : spec.beacons.positions) {
      const double dx = p[0] - b[0], dy = p[1] - b[1];
      if (dx * dx + dy * dy < 0.25) clear = false;
    }
    if (clear) probes.push_back(p);
  }
  if (probes.empty()) probes.push_back({cx + 13.7, cy + 8.9});
  return info_matrix_jet(spec, probes);
}

/// Information barrier H = M -/+ lambda_s I, lifted to the double-integrator
/// state (p_x, p_y, v_x, v_y) with zero velocity partials.
inline MatrixFieldJet micbf_field(const InfoBarrierSpec& spec) {
  detail::check_beacons(spec.beacons);
  if (!(spec.lambda_s > 0.0)) throw std::invalid_argument("InfoBarrierSpec: lambda_s must be positive");
  const double shift = spec.sign == SignConvention::minus ? -spec.lambda_s : spec.lambda_s;
  MatrixFieldJet jet;
  jet.dim_p = 2;
  jet.provenance = JetProvenance::analytic;
  jet.value = [spec, shift](const Vec& x) {
    detail::check_position(x);
    SymMat h = info_matrix(spec, {x[0], x[1]});
    h.add_scaled(shift, SymMat::identity(2));
    return h;
  };
  jet.partial = [spec](const Vec& x, int j) {
    if (j < 0) throw std::out_of_range("micbf_field: partial index out of range");
    if (j > 1) return SymMat(2);
    detail::check_position(x);
    return info_derivs(spec, {x[0], x[1]}).dM[static_cast<std::size_t>(j)];
  };
  return jet;
}

/// Drift-derivative jets of the information barrier for the double
/// integrator: level 1 is dM/dp contracted with velocity. Levels past the
/// stored second position derivatives are unavailable.
inline JetSupplier micbf_chain_supplier(const InfoBarrierSpec& spec) {
  return [spec](int k) -> MatrixFieldJet {
    if (k == 0) return micbf_field(spec);
    if (k != 1)
      throw std::invalid_argument("micbf_chain_supplier: level " + std::to_string(k) +
                                  " jet missing (analytic derivatives stop at second order)");
    MatrixFieldJet jet;
    jet.dim_p = 2;
    jet.provenance = JetProvenance::analytic;
    jet.value = [spec](const Vec& x) {
      if (x.size() < 4) throw std::invalid_argument("micbf_chain_supplier: state needs four components");
      const InfoDerivs id = info_derivs(spec, {x[0], x[1]});
      SymMat out(2);
      out.add_scaled(x[2], id.dM[0]);
      out.add_scaled(x[3], id.dM[1]);
      return out;
    };
    jet.partial = [spec](const Vec& x, int j) {
      if (j < 0) throw std::out_of_range("micbf_chain_supplier: partial index out of range");
      if (x.size() < 4) throw std::invalid_argument("micbf_chain_supplier: state needs four components");
      if (j > 3) return SymMat(2);
      const InfoDerivs id = info_derivs(spec, {x[0], x[1]});
      if (j >= 2) return id.dM[static_cast<std::size_t>(j - 2)];
      SymMat out(2);
      out.add_scaled(x[2], id.d2M[0][static_cast<std::size_t>(j)]);
      out.add_scaled(x[3], id.d2M[1][static_cast<std::size_t>(j)]);
      return out;
    };
    return jet;
  };
}

/// Weighted NLS cost and its exact gradient (weight-derivative term included).
namespace detail {

struct NlsEval {
  double cost = 0.0;
  double grad[2] = {0.0, 0.0};
};

inline NlsEval nls_eval(const InfoBarrierSpec& spec, const Vec& y, const Vec& xi) {
  NlsEval ev;
  for (std::size_t k = 0; k < spec.beacons.positions.size(); ++k) {
    const BeaconDerivs bd = beacon_derivs(spec.model, spec.beacons.positions[k], xi[0], xi[1]);
    const WeightDerivs wd = weight_derivs(spec.weights, bd.m);
    double res = y[k] - bd.m;
    if (spec.model == MeasModel::bearing) res = wrap_angle(res);
    ev.cost += wd.w * res * res;
    const double c = wd.dw * res * res - 2.0 * wd.w * res;
    ev.grad[0] += c * bd.G[0];
    ev.grad[1] += c * bd.G[1];
  }
  return ev;
}

}  // namespace detail

/// Fixed-step gradient descent on J(xi) = sum_k w_k(xi) (y_k - m_k(xi))^2.
inline NlsResult nls_estimate(const InfoBarrierSpec& spec, const Vec& y, const Vec& x0, const NlsConfig& cfg = {}) {
  detail::check_beacons(spec.beacons);
  detail::check_position(x0);
  if (y.size() != spec.beacons.positions.size()) throw std::invalid_argument("nls_estimate: measurement size mismatch");
  if (!(cfg.step_size > 0.0)) throw std::invalid_argument("NlsConfig: step_size must be positive");

  Vec xi = {x0[0], x0[1]};
  NlsResult out;
  for (int iter = 0;; ++iter) {
    const detail::NlsEval ev = detail::nls_eval(spec, y, xi);
    const double gnorm = std::sqrt(ev.grad[0] * ev.grad[0] + ev.grad[1] * ev.grad[1]);
    if (gnorm <= cfg.grad_tol || iter >= cfg.max_iters) {
      out.estimate = xi;
      out.iterations = iter;
      out.grad_norm = gnorm;
      out.cost = ev.cost;
      return out;
    }
    xi[0] -= cfg.step_size * ev.grad[0];
    xi[1] -= cfg.step_size * ev.grad[1];
    if (xi[0] * xi[0] + xi[1] * xi[1] > 1e12) throw SolverError("nls_estimate: iterate diverged");
  }
}

}  // namespace homcbf
