#pragma once

// Symmetric-matrix value type and spectral operations.
//
// SymMat stores the upper triangle packed row-major, which makes symmetry a
// structural invariant instead of a numerical one. The eigensolver is a
// cyclic Jacobi sweep: for the dimensions this library targets (p <= 16) it
// is simple, accurate to near machine precision, and fully deterministic for
// identical input bits.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "linalg.hpp"

namespace homcbf {

class SymMat {
 public:
  SymMat() : p_(0) {}

  /// Zero matrix of dimension p.
  explicit SymMat(int p) : p_(p), tri_(packed_size(p), 0.0) {
    if (p < 1) throw std::invalid_argument("SymMat: dimension must be >= 1");
  }

  static SymMat identity(int p) {
    SymMat m(p);
    for (int i = 0; i < p; ++i) m.set(i, i, 1.0);
    return m;
  }

  static SymMat diag(const Vec& d) {
    SymMat m(static_cast<int>(d.size()));
    for (int i = 0; i < m.p_; ++i) {
      check_entry(d[i]);
      m.set(i, i, d[i]);
    }
    return m;
  }

  /// Builds from a full square matrix; off-diagonal pairs are averaged so a
  /// slightly asymmetric numerical result still yields its symmetric part.
  static SymMat from_full(const Mat& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("SymMat::from_full: not square");
    SymMat m(a.rows());
    for (int i = 0; i < a.rows(); ++i)
      for (int j = i; j < a.cols(); ++j) {
        const double v = 0.5 * (a(i, j) + a(j, i));
        check_entry(v);
        m.set(i, j, v);
      }
    return m;
  }

  int dim() const { return p_; }

  double at(int i, int j) const {
    bounds(i, j);
    return i <= j ? tri_[idx(i, j)] : tri_[idx(j, i)];
  }

  void set(int i, int j, double v) {
    bounds(i, j);
    check_entry(v);
    tri_[i <= j ? idx(i, j) : idx(j, i)] = v;
  }

  /// Largest absolute entry.
  double max_abs() const {
    double m = 0.0;
    for (double v : tri_) m = std::max(m, std::fabs(v));
    return m;
  }

  Mat to_full() const {
    Mat a(p_, p_);
    for (int i = 0; i < p_; ++i)
      for (int j = i; j < p_; ++j) a(i, j) = a(j, i) = tri_[idx(i, j)];
    return a;
  }

  SymMat operator+(const SymMat& o) const {
    same_dim(o);
    SymMat r = *this;
    for (std::size_t k = 0; k < tri_.size(); ++k) r.tri_[k] += o.tri_[k];
    return r;
  }

  SymMat operator-(const SymMat& o) const {
    same_dim(o);
    SymMat r = *this;
    for (std::size_t k = 0; k < tri_.size(); ++k) r.tri_[k] -= o.tri_[k];
    return r;
  }

  friend SymMat operator*(double c, const SymMat& a) {
    SymMat r = a;
    for (double& v : r.tri_) v *= c;
    return r;
  }

  SymMat& operator+=(const SymMat& o) {
    same_dim(o);
    for (std::size_t k = 0; k < tri_.size(); ++k) tri_[k] += o.tri_[k];
    return *this;
  }

  /// this += c * o, without temporaries; the workhorse of LMI assembly.
  SymMat& add_scaled(double c, const SymMat& o) {
    same_dim(o);
    for (std::size_t k = 0; k < tri_.size(); ++k) tri_[k] += c * o.tri_[k];
    return *this;
  }

  bool operator==(const SymMat& o) const { return p_ == o.p_ && tri_ == o.tri_; }

 private:
  static std::size_t packed_size(int p) { return static_cast<std::size_t>(p) * (p + 1) / 2; }
  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(i) * p_ - static_cast<std::size_t>(i) * (i - 1) / 2 + (j - i);
  }
  void bounds(int i, int j) const {
    if (i < 0 || j < 0 || i >= p_ || j >= p_) throw std::out_of_range("SymMat: index out of range");
  }
  void same_dim(const SymMat& o) const {
    if (p_ != o.p_) throw std::invalid_argument("SymMat: dimension mismatch");
  }
  static void check_entry(double v) {
    if (!std::isfinite(v)) throw std::invalid_argument("SymMat: non-finite entry");
  }

  int p_;
  std::vector<double> tri_;
};

/// Eigendecomposition result: values ascending, vectors(:,k) is the unit
/// eigenvector for values[k].
struct EigDecomp {
  Vec values;
  Mat vectors;
};

/// Full eigendecomposition by cyclic Jacobi rotations with a fixed
/// lexicographic sweep order, so results are deterministic for identical
/// input bits. Throws SolverError if the off-diagonal mass has not vanished
/// after max_sweeps sweeps.
inline EigDecomp eig_sym(const SymMat& a, int max_sweeps = 64) {
  const int p = a.dim();
  Mat d = a.to_full();
  Mat q = Mat::identity(p);
  const double scale = std::max(a.max_abs(), 1e-300);

  auto offdiag = [&]() {
    double s = 0.0;
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j) s += d(i, j) * d(i, j);
    return std::sqrt(s);
  };

  bool converged = (p == 1) || offdiag() <= 1e-15 * scale;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    for (int i = 0; i < p - 1; ++i) {
      for (int j = i + 1; j < p; ++j) {
        const double apq = d(i, j);
        if (std::fabs(apq) <= 1e-18 * scale) continue;
        const double theta = (d(j, j) - d(i, i)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // Rotate rows/columns i and j of d, accumulate the rotation in q.
        for (int k = 0; k < p; ++k) {
          const double dki = d(k, i), dkj = d(k, j);
          d(k, i) = c * dki - s * dkj;
          d(k, j) = s * dki + c * dkj;
        }
        for (int k = 0; k < p; ++k) {
          const double dik = d(i, k), djk = d(j, k);
          d(i, k) = c * dik - s * djk;
          d(j, k) = s * dik + c * djk;
        }
        for (int k = 0; k < p; ++k) {
          const double qki = q(k, i), qkj = q(k, j);
          q(k, i) = c * qki - s * qkj;
          q(k, j) = s * qki + c * qkj;
        }
      }
    }
    converged = offdiag() <= 1e-15 * scale;
  }
  if (!converged) throw SolverError("eig_sym: Jacobi sweeps did not converge");

  std::vector<int> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return d(x, x) < d(y, y); });

  EigDecomp e;
  e.values.resize(p);
  e.vectors = Mat(p, p);
  for (int k = 0; k < p; ++k) {
    e.values[k] = d(order[k], order[k]);
    for (int r = 0; r < p; ++r) e.vectors(r, k) = q(r, order[k]);
  }
  return e;
}

inline double lambda_min(const SymMat& a) { return eig_sym(a).values.front(); }

/// Default width used to decide which eigenvalues belong to the minimal
/// cluster: 1e-7 * (1 + ||A||_max).
inline double default_cluster_tol(const SymMat& a) { return 1e-7 * (1.0 + a.max_abs()); }

/// Orthonormal basis of the eigenspace cluster anchored at the smallest
/// eigenvalue: every eigenvalue within cluster_width of the anchor
/// contributes its eigenvector.
struct ClusterBasis {
  Mat basis;            // p x q, orthonormal columns
  double anchor_value;  // smallest eigenvalue
  double cluster_width;
  int q() const { return basis.cols(); }
};

inline ClusterBasis min_eigenspace(const SymMat& a, double cluster_tol) {
  if (!(cluster_tol >= 0.0)) throw std::invalid_argument("min_eigenspace: cluster_tol must be >= 0");
  const EigDecomp e = eig_sym(a);
  const double anchor = e.values.front();
  int q = 1;
  while (q < a.dim() && e.values[q] - anchor <= cluster_tol) ++q;
  ClusterBasis cb;
  cb.basis = Mat(a.dim(), q);
  for (int k = 0; k < q; ++k)
    for (int r = 0; r < a.dim(); ++r) cb.basis(r, k) = e.vectors(r, k);
  cb.anchor_value = anchor;
  cb.cluster_width = cluster_tol;
  return cb;
}

inline ClusterBasis min_eigenspace(const SymMat& a) { return min_eigenspace(a, default_cluster_tol(a)); }

/// Scalar gain function applied to barrier values. The linear case is kept
/// symbolic so spectral application can skip the eigendecomposition and
/// return c*A exactly (bit-for-bit); arbitrary monotone functions with
/// fn(0) = 0 go through the spectral path.
class ClassK {
 public:
  static ClassK linear(double gain) {
    if (!(gain > 0.0) || !std::isfinite(gain)) throw std::invalid_argument("ClassK::linear: gain must be positive");
    ClassK k;
    k.gain_ = gain;
    return k;
  }

  static ClassK custom(std::function<double(double)> fn) {
    if (!fn) throw std::invalid_argument("ClassK::custom: empty function");
    ClassK k;
    k.fn_ = std::move(fn);
    return k;
  }

  bool is_linear() const { return !fn_; }
  double gain() const {
    if (!is_linear()) throw std::logic_error("ClassK::gain: not a linear gain");
    return gain_;
  }

  double operator()(double s) const { return is_linear() ? gain_ * s : fn_(s); }

 private:
  double gain_ = 1.0;
  std::function<double(double)> fn_;
};

/// f(A) = Q f(Lambda) Q^T for any scalar function; throws std::domain_error
/// if fn is undefined (non-finite) at an eigenvalue of A.
template <typename Fn>
SymMat apply_spectral_fn(const SymMat& a, Fn&& fn) {
  const EigDecomp e = eig_sym(a);
  const int p = a.dim();
  Vec fv(p);
  for (int k = 0; k < p; ++k) {
    fv[k] = fn(e.values[k]);
    if (!std::isfinite(fv[k])) throw std::domain_error("apply_spectral: fn undefined at an eigenvalue");
  }
  Mat full(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = i; j < p; ++j) {
      double s = 0.0;
      for (int k = 0; k < p; ++k) s += fv[k] * e.vectors(i, k) * e.vectors(j, k);
      full(i, j) = full(j, i) = s;
    }
  return SymMat::from_full(full);
}

/// Spectral application of a ClassK gain. Linear gains short-circuit to an
/// exact entrywise scaling; everything else uses the generic spectral path.
inline SymMat apply_spectral(const SymMat& a, const ClassK& fn) {
  if (fn.is_linear()) return fn.gain() * a;
  return apply_spectral_fn(a, [&fn](double s) { return fn(s); });
}

/// V^T A V for V with orthonormal columns (p x q).
inline SymMat congruence(const Mat& v, const SymMat& a) {
  if (v.rows() != a.dim()) throw std::invalid_argument("congruence: dimension mismatch");
  if (v.cols() < 1 || v.cols() > v.rows()) throw std::invalid_argument("congruence: invalid basis width");
  const Mat full = a.to_full();
  const Mat av = full * v;
  Mat r(v.cols(), v.cols());
  for (int i = 0; i < v.cols(); ++i)
    for (int j = i; j < v.cols(); ++j) {
      double s = 0.0;
      for (int k = 0; k < v.rows(); ++k) s += v(k, i) * av(k, j);
      r(i, j) = r(j, i) = s;
    }
  return SymMat::from_full(r);
}

inline bool is_psd(const SymMat& a, double tol) { return lambda_min(a) >= -tol; }

/// Cholesky factorization A = L L^T. Returns false (leaving l unspecified)
/// if A is not positive definite; used as the strict-feasibility test in the
/// interior-point line search.
inline bool cholesky(const SymMat& a, Mat& l) {
  const int p = a.dim();
  l = Mat(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a.at(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(s > 0.0) || !std::isfinite(s)) return false;
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return true;
}

/// Solves L L^T x = b given the Cholesky factor L.
inline Vec chol_solve(const Mat& l, Vec b) {
  const int p = l.rows();
  for (int i = 0; i < p; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l(i, k) * b[k];
    b[i] = s / l(i, i);
  }
  for (int i = p - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < p; ++k) s -= l(k, i) * b[k];
    b[i] = s / l(i, i);
  }
  return b;
}

}  // namespace homcbf
