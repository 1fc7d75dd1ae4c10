// SPDX-License-Identifier: Apache-2.0
//
// Numeric foundations: matrices against a brute-force oracle, the counter
// RNG, softmax forward/backward, dropout semantics, the finite-difference
// checker itself, and the hashing helpers.

#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "sira/grad_check.hpp"
#include "sira/hash.hpp"
#include "sira/matrix.hpp"
#include "sira/ops.hpp"
#include "sira/rng.hpp"

namespace {

using namespace sira;

// Independent matmul: plain i-j-k accumulation, no zero skipping.
Matrix brute_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

Matrix random_matrix(std::size_t r, std::size_t c, RngState& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.data) v = scale * rng.next_gaussian();
  return m;
}

}  // namespace

TEST_CASE("matmul matches a hand-frozen product") {
  Matrix a(2, 2);
  a.at(0, 0) = 1; a.at(0, 1) = 2; a.at(1, 0) = 3; a.at(1, 1) = 4;
  Matrix b(2, 1);
  b.at(0, 0) = 5; b.at(1, 0) = 6;
  Matrix c = matmul(a, b);
  CHECK(c.rows == 2);
  CHECK(c.cols == 1);
  CHECK(c.at(0, 0) == 17.0);
  CHECK(c.at(1, 0) == 39.0);
}

TEST_CASE("matmul matches the brute-force oracle on random shapes") {
  RngState rng{11, 0};
  for (int it = 0; it < 30; ++it) {
    const std::size_t m = 1 + rng.next_below(6);
    const std::size_t k = 1 + rng.next_below(6);
    const std::size_t n = 1 + rng.next_below(6);
    Matrix a = random_matrix(m, k, rng);
    Matrix b = random_matrix(k, n, rng);
    // Sparsity in the left operand exercises the zero-skip path.
    if (it % 3 == 0)
      for (std::size_t i = 0; i < a.data.size(); i += 2) a.data[i] = 0.0;
    Matrix got = matmul(a, b);
    Matrix want = brute_matmul(a, b);
    CHECK(max_abs_diff(got, want) < 1e-13);
  }
}

TEST_CASE("matmul rejects mismatched shapes") {
  Matrix a(2, 3), b(2, 3);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("transpose, hadamard, dot and column helpers") {
  RngState rng{12, 0};
  Matrix a = random_matrix(3, 4, rng);
  Matrix t = transpose(a);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) CHECK(t.at(j, i) == a.at(i, j));

  Matrix b = random_matrix(3, 4, rng);
  Matrix h = hadamard(a, b);
  double want_dot = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    CHECK(h.data[i] == a.data[i] * b.data[i]);
    want_dot += a.data[i] * b.data[i];
  }
  CHECK(dot(a, b) == doctest::Approx(want_dot).epsilon(1e-12));

  Matrix c2 = a.col(2);
  CHECK(c2.rows == 3);
  CHECK(c2.cols == 1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(c2.at(i, 0) == a.at(i, 2));
  Matrix acc = a;
  acc.add_col(1, c2, 2.0);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(acc.at(i, 1) == a.at(i, 1) + 2.0 * a.at(i, 2));

  Matrix s = col_slice(a, 1, 2);
  CHECK(s.cols == 2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(s.at(i, j) == a.at(i, j + 1));
  Matrix joined = hcat({a.col(0), a.col(1), a.col(2), a.col(3)});
  CHECK(max_abs_diff(joined, a) == 0.0);
}

TEST_CASE("identity and finiteness helpers") {
  Matrix i3 = Matrix::identity(3);
  RngState rng{13, 0};
  Matrix a = random_matrix(3, 3, rng);
  CHECK(max_abs_diff(matmul(i3, a), a) == 0.0);
  CHECK(all_finite(a));
  a.at(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(all_finite(a));
}

TEST_CASE("rng streams are deterministic and position-based") {
  RngState a{42, 0};
  RngState b{42, 0};
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(a.position == 100);

  // The draw at position p depends only on (seed, p), not on history.
  RngState c{42, 50};
  RngState d{42, 0};
  for (int i = 0; i < 50; ++i) d.next_u64();
  CHECK(c.next_u64() == d.next_u64());

  RngState e{43, 0};
  CHECK(RngState{42, 0}.next_u64() != e.next_u64());
}

TEST_CASE("rng split produces decorrelated independent streams") {
  RngState root{7, 0};
  RngState s1 = root.split(1);
  RngState s2 = root.split(2);
  CHECK(s1.seed != s2.seed);
  CHECK(s1.position == 0);
  CHECK(root.position == 0);  // splitting never consumes draws
  CHECK(s1.next_u64() != s2.next_u64());
  // Splitting is a pure function of (seed, tag).
  CHECK(root.split(1).seed == RngState{7, 0}.split(1).seed);
}

TEST_CASE("rng uniform and gaussian have sane moments") {
  RngState rng{99, 0};
  double sum = 0.0, mn = 1.0, mx = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double u = rng.next_uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    mn = std::min(mn, u);
    mx = std::max(mx, u);
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
  CHECK(mn < 0.01);
  CHECK(mx > 0.99);

  double gsum = 0.0, gsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double g = rng.next_gaussian();
    gsum += g;
    gsq += g * g;
  }
  CHECK(gsum / n == doctest::Approx(0.0).epsilon(0.05));
  CHECK(gsq / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("next_below stays within its bound and covers it") {
  RngState rng{3, 0};
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) ++hits[rng.next_below(5)];
  for (int h : hits) CHECK(h > 800);
  CHECK(rng.next_below(1) == 0);
}

TEST_CASE("softmax matches a frozen two-entry case and sums to one") {
  Matrix logits(2, 1);
  logits.at(0, 0) = 0.0;
  logits.at(1, 0) = std::log(3.0);
  Matrix p = softmax_columns(logits);
  CHECK(p.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p.at(1, 0) == doctest::Approx(0.75).epsilon(1e-12));

  RngState rng{21, 0};
  Matrix big = random_matrix(7, 5, rng, 3.0);
  Matrix q = softmax_columns(big);
  for (std::size_t j = 0; j < q.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.rows; ++i) {
      CHECK(q.at(i, j) > 0.0);
      s += q.at(i, j);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax is shift-invariant and stable for huge logits") {
  RngState rng{22, 0};
  Matrix logits = random_matrix(4, 3, rng);
  Matrix shifted = logits;
  for (auto& v : shifted.data) v += 1000.0;
  CHECK(max_abs_diff(softmax_columns(logits), softmax_columns(shifted)) < 1e-12);

  Matrix huge(3, 1);
  huge.at(0, 0) = 1e4; huge.at(1, 0) = -1e4; huge.at(2, 0) = 0.0;
  Matrix p = softmax_columns(huge);
  CHECK(all_finite(p));
  CHECK(p.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax backward agrees with finite differences") {
  RngState rng{23, 0};
  Matrix logits = random_matrix(5, 2, rng);
  Matrix upstream = random_matrix(5, 2, rng);
  Matrix p = softmax_columns(logits);
  Matrix analytic = softmax_backward_columns(p, upstream);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    double keep = logits.data[i];
    logits.data[i] = keep + eps;
    double up = dot(upstream, softmax_columns(logits));
    logits.data[i] = keep - eps;
    double dn = dot(upstream, softmax_columns(logits));
    logits.data[i] = keep;
    CHECK(analytic.data[i] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-5));
  }
}

TEST_CASE("dropout is inverted, masked, and silent when disabled") {
  RngState rng{31, 0};
  Matrix v = random_matrix(4, 6, rng);

  RngState off{5, 0};
  DropoutResult none = dropout(v, 0.0, off, true);
  CHECK(off.position == 0);  // rate 0 consumes no randomness
  CHECK(max_abs_diff(none.value, v) == 0.0);

  RngState infer{5, 0};
  DropoutResult inf_r = dropout(v, 0.5, infer, false);
  CHECK(infer.position == 0);
  CHECK(max_abs_diff(inf_r.value, v) == 0.0);

  RngState on{5, 0};
  DropoutResult r = dropout(v, 0.5, on, true);
  CHECK(on.position == v.data.size());  // one uniform per entry
  int zeros = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    CHECK((r.mask.data[i] == 0.0 || r.mask.data[i] == 2.0));
    CHECK(r.value.data[i] == v.data[i] * r.mask.data[i]);
    if (r.mask.data[i] == 0.0) ++zeros;
  }
  CHECK(zeros > 0);
  CHECK(zeros < static_cast<int>(v.data.size()));

  CHECK_THROWS_AS(dropout(v, 1.0, on, true), std::invalid_argument);
  CHECK_THROWS_AS(dropout(v, -0.1, on, true), std::invalid_argument);
}

TEST_CASE("dropout keeps the expectation approximately unchanged") {
  RngState rng{33, 0};
  Matrix v(1, 20000, 1.0);
  DropoutResult r = dropout(v, 0.3, rng, true);
  double mean = 0.0;
  for (double x : r.value.data) mean += x;
  mean /= static_cast<double>(r.value.data.size());
  CHECK(mean == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("grad_check accepts a correct gradient and flags a wrong one") {
  Matrix x(2, 2);
  x.at(0, 0) = 1.0; x.at(0, 1) = -2.0; x.at(1, 0) = 0.5; x.at(1, 1) = 3.0;
  auto loss = [&]() {
    double s = 0.0;
    for (double v : x.data) s += v * v;
    return s;
  };
  Matrix good(2, 2);
  for (std::size_t i = 0; i < 4; ++i) good.data[i] = 2.0 * x.data[i];
  CHECK(grad_check(loss, {&x}, {&good}) < 1e-9);

  // One analytic entry off by 0.1 on a slope of 6: error 0.1 / 6.1.
  Matrix bad = good;
  bad.at(1, 1) = 6.1;
  CHECK(grad_check(loss, {&x}, {&bad}) ==
        doctest::Approx(0.1 / 6.1).epsilon(1e-6));
}

TEST_CASE("fnv hashing separates values and is stable") {
  CHECK(fnv1a64_str("") == kFnvOffset);
  CHECK(fnv1a64_str("abc") == fnv1a64_str("abc"));
  CHECK(fnv1a64_str("abc") != fnv1a64_str("abd"));

  RngState rng{44, 0};
  Matrix a = random_matrix(3, 3, rng);
  Matrix b = a;
  CHECK(hash_matrix(a) == hash_matrix(b));
  b.at(2, 2) += 1e-15;
  CHECK(hash_matrix(a) != hash_matrix(b));
  // Shape participates in the digest even when the payload is empty-equal.
  Matrix flat(1, 9);
  Matrix tall(9, 1);
  CHECK(hash_matrix(flat) != hash_matrix(tall));
}
