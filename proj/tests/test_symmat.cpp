#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <homcbf/symmat.hpp>

using namespace homcbf;

namespace {

SymMat random_sym(int p, SplitMix64& rng, double scale = 1.0) {
  SymMat a(p);
  for (int i = 0; i < p; ++i)
    for (int j = i; j < p; ++j) a.set(i, j, scale * rng.uniform(-1.0, 1.0));
  return a;
}

// Eigenvalues of A - tI counted by Sylvester inertia of an LDL^T sweep;
// zero pivots are dodged by nudging t (finitely many bad shifts exist).
int eigs_below(const SymMat& a, double t) {
  const int p = a.dim();
  for (int attempt = 0; attempt < 8; ++attempt) {
    Mat w(p, p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) w(i, j) = a.at(i, j) - (i == j ? t : 0.0);
    int neg = 0;
    bool ok = true;
    for (int k = 0; k < p && ok; ++k) {
      const double piv = w(k, k);
      if (std::fabs(piv) < 1e-14 * (1.0 + a.max_abs())) {
        ok = false;
        break;
      }
      if (piv < 0.0) ++neg;
      for (int i = k + 1; i < p; ++i) {
        const double f = w(i, k) / piv;
        for (int j = k; j < p; ++j) w(i, j) -= f * w(k, j);
      }
    }
    if (ok) return neg;
    t += 3e-11 * (1.0 + std::fabs(t));
  }
  FAIL("inertia oracle: could not find a clean shift");
  return -1;
}

// Index-k eigenvalue by bisection on the inertia count.
double oracle_eig(const SymMat& a, int k) {
  const int p = a.dim();
  double lo = a.at(0, 0), hi = a.at(0, 0);
  for (int i = 0; i < p; ++i) {
    double radius = 0.0;
    for (int j = 0; j < p; ++j)
      if (j != i) radius += std::fabs(a.at(i, j));
    lo = std::min(lo, a.at(i, i) - radius);
    hi = std::max(hi, a.at(i, i) + radius);
  }
  lo -= 1.0, hi += 1.0;
  for (int it = 0; it < 120; ++it) {
    const double mid = 0.5 * (lo + hi);
    (eigs_below(a, mid) >= k + 1 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("symmetric storage round trips", "[symmat]") {
  SymMat a(3);
  a.set(0, 2, 5.0);
  CHECK(a.at(2, 0) == 5.0);
  const Mat full = a.to_full();
  CHECK(full(0, 2) == 5.0);
  CHECK(full(2, 0) == 5.0);
  CHECK(SymMat::from_full(full) == a);
  CHECK(a.max_abs() == 5.0);

  CHECK_THROWS_AS(SymMat(0), std::invalid_argument);
  CHECK_THROWS_AS(a.set(0, 0, std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(SymMat::diag({1.0, std::numeric_limits<double>::infinity()}), std::invalid_argument);
}

TEST_CASE("eigendecomposition of stock matrices", "[symmat]") {
  const EigDecomp id = eig_sym(SymMat::identity(3));
  for (double v : id.values) CHECK_THAT(v, Catch::Matchers::WithinAbs(1.0, 1e-12));

  const EigDecomp d = eig_sym(SymMat::diag({3.0, -2.0}));
  CHECK_THAT(d.values[0], Catch::Matchers::WithinAbs(-2.0, 1e-12));
  CHECK_THAT(d.values[1], Catch::Matchers::WithinAbs(3.0, 1e-12));

  SymMat two(2);
  two.set(0, 0, 2.0), two.set(1, 1, 2.0), two.set(0, 1, 1.0);
  CHECK_THAT(lambda_min(two), Catch::Matchers::WithinAbs(1.0, 1e-12));

  CHECK_THAT(lambda_min(SymMat::diag({5.0, 0.0, -1.0})), Catch::Matchers::WithinAbs(-1.0, 1e-12));
}

TEST_CASE("eigendecomposition matches the inertia-bisection oracle", "[symmat]") {
  SplitMix64 rng(0xabcdef12);
  for (int trial = 0; trial < 25; ++trial) {
    const SymMat a = random_sym(4, rng, 3.0);
    const EigDecomp e = eig_sym(a);
    for (int k = 0; k < 4; ++k) CHECK_THAT(e.values[k], Catch::Matchers::WithinAbs(oracle_eig(a, k), 1e-8));
  }
}

TEST_CASE("eigendecomposition invariants on seeded input", "[symmat]") {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const int p = 1 + static_cast<int>(rng.uniform(0.0, 6.0));
    const SymMat a = random_sym(p, rng, 10.0);
    const EigDecomp e = eig_sym(a);

    for (int k = 1; k < p; ++k) CHECK(e.values[k] >= e.values[k - 1]);

    const Mat q = e.vectors;
    const Mat qtq = q.transpose() * q;
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) CHECK_THAT(qtq(i, j), Catch::Matchers::WithinAbs(i == j ? 1.0 : 0.0, 1e-10));

    Mat recon(p, p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) {
        double s = 0.0;
        for (int k = 0; k < p; ++k) s += q(i, k) * e.values[k] * q(j, k);
        recon(i, j) = s;
      }
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j)
        CHECK_THAT(recon(i, j), Catch::Matchers::WithinAbs(a.at(i, j), 1e-9 * (1.0 + a.max_abs())));
  }
}

TEST_CASE("eigendecomposition is deterministic and bounded by the sweep cap", "[symmat]") {
  SplitMix64 rng(5150);
  const SymMat a = random_sym(4, rng);
  const EigDecomp e1 = eig_sym(a), e2 = eig_sym(a);
  CHECK(e1.values == e2.values);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(e1.vectors(i, j) == e2.vectors(i, j));

  CHECK_THROWS_AS(eig_sym(a, 0), SolverError);
}

TEST_CASE("minimum eigenspace clustering", "[symmat]") {
  const ClusterBasis full = min_eigenspace(SymMat::identity(3), 1e-9);
  CHECK(full.q() == 3);
  CHECK_THAT(full.anchor_value, Catch::Matchers::WithinAbs(1.0, 1e-12));

  const ClusterBasis pair = min_eigenspace(SymMat::diag({0.0, 0.0, 7.0}), 1e-9);
  CHECK(pair.q() == 2);
  for (int c = 0; c < 2; ++c) CHECK_THAT(pair.basis(2, c), Catch::Matchers::WithinAbs(0.0, 1e-10));

  const ClusterBasis near = min_eigenspace(SymMat::diag({0.0, 1e-12, 7.0}), 1e-9);
  CHECK(near.q() == 2);
  CHECK(near.cluster_width <= 1e-9);

  CHECK_THAT(default_cluster_tol(SymMat::diag({3.0, -4.0})), Catch::Matchers::WithinAbs(5e-7, 1e-18));
}

TEST_CASE("minimum eigenspace projector property", "[symmat]") {
  SplitMix64 rng(31337);
  for (int trial = 0; trial < 30; ++trial) {
    const SymMat a = random_sym(4, rng, 5.0);
    const double tol = default_cluster_tol(a);
    const ClusterBasis cb = min_eigenspace(a, tol);
    REQUIRE(cb.q() >= 1);
    for (int c = 0; c < cb.q(); ++c) {
      Vec v(4), av(4, 0.0);
      for (int i = 0; i < 4; ++i) v[i] = cb.basis(i, c);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) av[i] += a.at(i, j) * v[j];
      for (int i = 0; i < 4; ++i)
        CHECK_THAT(av[i] - cb.anchor_value * v[i], Catch::Matchers::WithinAbs(0.0, tol + 1e-8 * a.max_abs()));
    }
  }
}

TEST_CASE("spectral application", "[symmat]") {
  SplitMix64 rng(808);
  const SymMat a = random_sym(3, rng, 2.0);

  SECTION("linear gains skip the decomposition and are exact") {
    const SymMat doubled = apply_spectral(a, ClassK::linear(2.0));
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j) CHECK(doubled.at(i, j) == 2.0 * a.at(i, j));
  }

  SECTION("cube on a diagonal matrix") {
    const SymMat cubed = apply_spectral_fn(SymMat::diag({1.0, -2.0}), [](double s) { return s * s * s; });
    CHECK_THAT(cubed.at(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(cubed.at(1, 1), Catch::Matchers::WithinAbs(-8.0, 1e-12));
    CHECK_THAT(cubed.at(0, 1), Catch::Matchers::WithinAbs(0.0, 1e-12));
  }

  SECTION("cube matches explicit reconstruction") {
    const SymMat cubed = apply_spectral_fn(a, [](double s) { return s * s * s; });
    const EigDecomp e = eig_sym(a);
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += e.vectors(i, k) * std::pow(e.values[k], 3) * e.vectors(j, k);
        CHECK_THAT(cubed.at(i, j), Catch::Matchers::WithinAbs(s, 1e-9));
      }
  }

  SECTION("function undefined on the spectrum is a domain error") {
    CHECK_THROWS_AS(apply_spectral_fn(SymMat::diag({-1.0, 1.0}), [](double s) { return std::sqrt(s); }),
                    std::domain_error);
  }
}

TEST_CASE("congruence transform", "[symmat]") {
  SplitMix64 rng(2718);
  const SymMat a = random_sym(4, rng, 3.0);

  const SymMat same = congruence(Mat::identity(4), a);
  CHECK(same == a);

  Mat e1(4, 1);
  e1(0, 0) = 1.0;
  const SymMat corner = congruence(e1, a);
  CHECK(corner.dim() == 1);
  CHECK(corner.at(0, 0) == a.at(0, 0));

  // Orthonormal 4x2 basis from Gram-Schmidt on random columns.
  Mat v(4, 2);
  for (int trial = 0; trial < 10; ++trial) {
    Vec c0(4), c1(4);
    for (int i = 0; i < 4; ++i) c0[i] = rng.uniform(-1.0, 1.0), c1[i] = rng.uniform(-1.0, 1.0);
    const double n0 = norm2(c0);
    for (int i = 0; i < 4; ++i) c0[i] /= n0;
    const double proj = dot(c0, c1);
    for (int i = 0; i < 4; ++i) c1[i] -= proj * c0[i];
    const double n1 = norm2(c1);
    if (n1 < 1e-6) continue;
    for (int i = 0; i < 4; ++i) v(i, 0) = c0[i], v(i, 1) = c1[i] / n1;

    const SymMat proj_a = congruence(v, a);
    const EigDecomp ea = eig_sym(a), ep = eig_sym(proj_a);
    CHECK(ep.values.front() >= ea.values.front() - 1e-9);
    CHECK(ep.values.back() <= ea.values.back() + 1e-9);
  }
}

TEST_CASE("positive semidefinite test", "[symmat]") {
  CHECK(is_psd(SymMat::identity(2), 0.0));
  CHECK_FALSE(is_psd(SymMat::diag({1.0, -1e-3}), 1e-6));

  SplitMix64 rng(1234);
  Mat g(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) g(i, j) = rng.uniform(-1.0, 1.0);
  const Mat gram = g.transpose() * g;
  CHECK(is_psd(SymMat::from_full(gram), 1e-10));
}

TEST_CASE("cholesky factorization and solve", "[symmat]") {
  SymMat spd(2);
  spd.set(0, 0, 4.0), spd.set(1, 1, 3.0), spd.set(0, 1, 1.0);
  Mat l;
  REQUIRE(cholesky(spd, l));
  const Vec x = chol_solve(l, {5.0, 4.0});
  CHECK_THAT(4.0 * x[0] + x[1], Catch::Matchers::WithinAbs(5.0, 1e-12));
  CHECK_THAT(x[0] + 3.0 * x[1], Catch::Matchers::WithinAbs(4.0, 1e-12));

  Mat li;
  CHECK_FALSE(cholesky(SymMat::diag({1.0, -1.0}), li));
}
