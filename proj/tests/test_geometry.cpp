#include <doctest.h>

#include <cmath>

#include "fvi/geometry.hpp"
#include "oracles.hpp"

using namespace fvi;

namespace {

Retraction sinh_retraction(int n) {
  auto tau = [](auto q, auto Q) {
    using T = std::remove_cvref_t<decltype(q[0])>;
    std::vector<T> out;
    out.reserve(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) out.push_back(sinh(Q[i] - q[i]));
    return out;
  };
  auto d1 = [](ConstSpan q, ConstSpan Q) {
    Mat m(q.size(), q.size());
    for (std::size_t i = 0; i < q.size(); ++i)
      m(i, i) = -std::cosh(Q[i] - q[i]);
    return m;
  };
  auto d2 = [](ConstSpan q, ConstSpan Q) {
    Mat m(q.size(), q.size());
    for (std::size_t i = 0; i < q.size(); ++i)
      m(i, i) = std::cosh(Q[i] - q[i]);
    return m;
  };
  return make_retraction(n, "sinh", tau, d1, d2);
}

}  // namespace

TEST_CASE("euclidean retraction values") {
  Chart chart(2);
  Retraction r = euclidean_retraction(chart);
  CHECK(norm_inf(r.tau(Vec{1.0, 2.0}, Vec{1.0, 2.0})) == 0.0);
  Vec t = r.tau(Vec{0.0, 0.0}, Vec{3.0, -1.0});
  CHECK(t[0] == 3.0);
  CHECK(t[1] == -1.0);
  Mat d2 = r.d2_tau(Vec{0.3, -0.4}, Vec{5.0, 2.0});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(d2(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("retraction axioms pass for euclidean and sinh") {
  oracles::Rng rng(7);
  std::vector<Vec> samples;
  for (int i = 0; i < 20; ++i) samples.push_back(rng.vec(3, -2.0, 2.0));

  Chart chart(3);
  RetractionReport rep =
      check_retraction_axioms(euclidean_retraction(chart), samples, 1e-12);
  CHECK(rep.tau_defect == 0.0);
  CHECK(rep.cancel_defect == 0.0);

  rep = check_retraction_axioms(sinh_retraction(3), samples, 1e-12);
  CHECK(rep.tau_defect <= 1e-14);
  CHECK(rep.d1_defect <= 1e-14);
  CHECK(rep.d2_defect <= 1e-14);
}

TEST_CASE("scaled difference map violates the derivative axiom") {
  auto tau = [](auto q, auto Q) {
    using T = std::remove_cvref_t<decltype(q[0])>;
    std::vector<T> out;
    for (std::size_t i = 0; i < q.size(); ++i)
      out.push_back(2.0 * (Q[i] - q[i]));
    return out;
  };
  auto d1 = [](ConstSpan q, ConstSpan) {
    Mat m = Mat::identity(q.size());
    m.scale(-2.0);
    return m;
  };
  auto d2 = [](ConstSpan q, ConstSpan) {
    Mat m = Mat::identity(q.size());
    m.scale(2.0);
    return m;
  };
  Retraction r = make_retraction(2, "doubled_difference", tau, d1, d2);
  std::vector<Vec> samples = {{0.5, -1.0}};
  try {
    check_retraction_axioms(r, samples, 1e-12);
    FAIL("expected a violation");
  } catch (const ViolationFound& v) {
    CHECK(v.symbol == "d2_tau");
    CHECK(v.magnitude == doctest::Approx(1.0));
  }
}

TEST_CASE("inconsistent closed-form derivatives are caught against AD") {
  Chart chart(2);
  Retraction r = euclidean_retraction(chart);
  r.d2_tau = [](ConstSpan q, ConstSpan) {
    Mat m = Mat::identity(q.size());
    m(0, 1) = 0.5;  // wrong on purpose
    return m;
  };
  std::vector<Vec> samples = {{1.0, 2.0}};
  CHECK_THROWS_AS(check_retraction_axioms(r, samples, 1e-12), ViolationFound);
}

TEST_CASE("chart wrapping touches only periodic coordinates") {
  Chart chart(2, {true, false});
  Vec w = chart.wrap(Vec{7.0, 7.0});
  CHECK(w[0] == doctest::Approx(7.0 - 2.0 * std::numbers::pi));
  CHECK(w[1] == 7.0);
  CHECK_THROWS_AS(Chart(0), Error);
}
