#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <homcbf/linalg.hpp>

using namespace homcbf;

TEST_CASE("vector helpers", "[linalg]") {
  const Vec a = {1.0, 2.0, 3.0};
  const Vec b = {-1.0, 0.5, 2.0};
  CHECK(dot(a, b) == 6.0);
  CHECK(norm2({3.0, 4.0}) == 5.0);
  CHECK(max_abs(Vec{-7.0, 2.0}) == 7.0);
  const Vec s = axpy(a, 2.0, b);
  CHECK(s[0] == -1.0);
  CHECK(s[1] == 3.0);
  CHECK(s[2] == 7.0);
  const Vec d = sub(a, b);
  CHECK(d[0] == 2.0);
  CHECK(scaled(a, -1.0)[2] == -3.0);
}

TEST_CASE("matrix product and transpose", "[linalg]") {
  Mat a(2, 3);
  a(0, 0) = 1.0, a(0, 1) = 2.0, a(0, 2) = 3.0;
  a(1, 0) = 4.0, a(1, 1) = 5.0, a(1, 2) = 6.0;
  const Vec v = {1.0, 0.0, -1.0};
  const Vec av = a.mul(v);
  CHECK(av[0] == -2.0);
  CHECK(av[1] == -2.0);

  const Mat at = a.transpose();
  CHECK(at.rows() == 3);
  CHECK(at(2, 1) == 6.0);

  const Mat ata = at * a;
  CHECK(ata(0, 0) == 17.0);
  CHECK(ata(0, 2) == ata(2, 0));
}

TEST_CASE("solve_linear recovers a known solution", "[linalg]") {
  Mat a(3, 3);
  a(0, 0) = 2.0, a(0, 1) = 1.0, a(0, 2) = 0.0;
  a(1, 0) = 1.0, a(1, 1) = 3.0, a(1, 2) = 1.0;
  a(2, 0) = 0.0, a(2, 1) = 1.0, a(2, 2) = 4.0;
  const Vec x_true = {1.0, -2.0, 0.5};
  const Vec x = solve_linear(a, a.mul(x_true));
  for (int i = 0; i < 3; ++i) CHECK_THAT(x[i], Catch::Matchers::WithinAbs(x_true[i], 1e-13));

  Mat sing(2, 2);
  sing(0, 0) = 1.0, sing(0, 1) = 2.0;
  sing(1, 0) = 2.0, sing(1, 1) = 4.0;
  CHECK_THROWS_AS(solve_linear(sing, {1.0, 1.0}), SolverError);
}

TEST_CASE("splitmix64 streams are deterministic and bounded", "[linalg]") {
  SplitMix64 a(42), b(42), c(43);
  bool same = true, differ = false;
  for (int i = 0; i < 64; ++i) {
    const double va = a.uniform();
    same = same && va == b.uniform();
    differ = differ || va != c.uniform();
    CHECK(va >= 0.0);
    CHECK(va < 1.0);
  }
  CHECK(same);
  CHECK(differ);

  SplitMix64 r(7);
  for (int i = 0; i < 64; ++i) {
    const double v = r.uniform(-2.0, 5.0);
    CHECK(v >= -2.0);
    CHECK(v < 5.0);
    CHECK(std::isfinite(r.normal()));
  }
}
