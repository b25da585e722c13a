#include <cmath>
#include <random>

#include "doctest.h"
#include "polyrec/baselines.hpp"
#include "polyrec/recurrence.hpp"
#include "test_util.hpp"

using namespace polyrec;

namespace {

CoefficientSchedule random_schedule(int d, std::mt19937_64& rng, double spread = 1.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  CoefficientSchedule s;
  for (int k = 0; k < d; ++k) s.steps.push_back({u(rng), u(rng), u(rng), u(rng), u(rng)});
  return s;
}

}  // namespace

TEST_CASE("init_state examples") {
  auto st = init_state_dense(DenseMatrix::diagonal({2.0}));
  CHECK(st.A(0, 0) == 1.0);
  CHECK(st.B(0, 0) == 1.0);
  CHECK(st.C(0, 0) == 2.0);

  auto id = SparseOperator::from_diagonal({1, 1, 1});
  auto v = init_state(id, {1, 0, 0});
  CHECK(v.C == Vector{1, 0, 0});

  auto g = init_state_diagonal({1, 3}, {1, 1});
  CHECK(g.C == Vector{1, 3});
  CHECK(g.log_scale == 0.0);
}

TEST_CASE("apply_transition examples") {
  VectorState st{{1}, {1}, {2}, 0.0};
  apply_transition_diagonal(st, {2}, {0, 0, 0, 0, 1}, false);
  CHECK(st.A == Vector{1});
  CHECK(st.B == Vector{2});
  CHECK(st.C == Vector{4});

  // T_2 from (C_0 = 1, C_1 = x)
  double x = 0.3;
  VectorState t{{1}, {1}, {x}, 0.0};
  apply_transition_diagonal(t, {x}, {0, 0, -1, 0, 2}, false);
  CHECK(t.C[0] == doctest::Approx(2 * x * x - 1));

  VectorState z{{0}, {0}, {0.5}, 0.0};
  CHECK_THROWS_AS(apply_transition_diagonal(z, {1}, {0, 0, 0, 0, 0}, true), StateCollapse);
}

TEST_CASE("normalized state has unit max-abs") {
  std::mt19937_64 rng(1);
  auto s = random_schedule(8, rng, 3.0);
  auto lam = testutil::random_vector(20, rng, 0.1, 4.0);
  auto st = init_state_diagonal(lam, Vector(20, 1.0));
  for (int k = 0; k < 7; ++k) {
    apply_transition_diagonal(st, lam, s.steps[k], true);
    double m = std::max({max_abs(st.A), max_abs(st.B), max_abs(st.C)});
    CHECK(std::abs(m - 1.0) <= 1e-12);
    CHECK(std::isfinite(st.log_scale));
  }
}

TEST_CASE("apply_readout examples") {
  VectorState st{{1.5}, {2.5}, {2}, 0.0};
  CHECK(apply_readout_diagonal(st, {3}, {0, 1, 0, 0, 0}) == Vector{1.5});
  CHECK(apply_readout_diagonal(st, {3}, {0, 0, 1, 0, 0}) == Vector{2.5});
  CHECK(apply_readout_diagonal(st, {3}, {0, 0, 0, 0, 1}) == Vector{6});
}

TEST_CASE("run_recurrence examples") {
  auto t5 = chebyshev_schedule(5);
  auto r = run_recurrence_diagonal(t5, {0.5}, {1.0}).value();
  CHECK(r[0] == doctest::Approx(0.5).epsilon(1e-14));

  auto d = SparseOperator::from_diagonal({1, 2, 3});
  CoefficientSchedule one{{{0, 0, 0, 0, 1}}};
  auto y = run_recurrence(one, d, {1, 1, 1}).value();
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[2] == doctest::Approx(9.0));  // readout beta applies X to C = Xz

  std::mt19937_64 rng(2);
  auto s = random_schedule(3, rng);
  auto c = to_poly_coefficients(s);
  for (double x : {-1.5, -0.2, 0.7, 1.9}) {
    double v = evaluate_polynomial(s, {x})[0];
    CHECK(testutil::rel_err(v, horner(c, x)) <= 1e-12);
  }
}

TEST_CASE("to_poly_coefficients examples") {
  auto c = to_poly_coefficients(chebyshev_schedule(3));
  REQUIRE(c.size() == 4);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == -3.0);
  CHECK(c[2] == 0.0);
  CHECK(c[3] == 4.0);

  // gamma_1 = 5 with everything else zero, d = 2: C_1 = 5, readout picks C
  CoefficientSchedule g{{{0, 5, 0, 0, 0}, {0, 0, 0, 1, 0}}};
  CHECK(to_poly_coefficients(g)[0] == 5.0);

  // rho-only accumulation: A = 1 + 2x
  CoefficientSchedule acc{{{2, 0, 0, 0, 1}, {0, 1, 0, 0, 0}}};
  auto a = to_poly_coefficients(acc);
  CHECK(a[0] == 1.0);
  CHECK(a[1] == 2.0);
  CHECK(a[2] == 0.0);
}

TEST_CASE("to_poly_coefficients matches recurrence for d <= 21") {
  std::mt19937_64 rng(3);
  for (int d = 1; d <= 21; ++d) {
    auto s = random_schedule(d, rng, 0.8);
    auto c = to_poly_coefficients(s);
    for (double x : {-2.0, -1.1, -0.3, 0.0, 0.45, 1.3, 2.0}) {
      double v = evaluate_polynomial(s, {x})[0];
      double h = horner(c, x);
      // relative to the magnitude of the terms, which bounds Horner's rounding
      double mag = 0;
      for (std::size_t i = 0; i < c.size(); ++i) mag += std::abs(c[i]) * std::pow(std::abs(x), i);
      CHECK(std::abs(v - h) <= 1e-10 * std::max({std::abs(h), mag * 1e-3, 1e-300}));
    }
  }
}

TEST_CASE("leading_coefficient") {
  auto l3 = leading_coefficient(chebyshev_schedule(3));
  CHECK(l3.degree == 3);
  CHECK(l3.value == 4.0);
  CHECK_FALSE(l3.annihilated);

  CoefficientSchedule ones;
  for (int k = 0; k < 4; ++k) ones.steps.push_back({0, 0, 0, 0, 1});
  auto l = leading_coefficient(ones);
  CHECK(l.value == 1.0);
  CHECK(l.degree == 5);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_schedule(1 + trial % 12, rng);
    auto c = to_poly_coefficients(s);
    auto lc = leading_coefficient(s);
    CHECK(lc.degree + 1 == static_cast<int>(c.size()));
    CHECK(testutil::rel_err(lc.value, c.back()) <= 1e-12 * std::max(1.0, std::abs(c.back())));
  }

  CoefficientSchedule dead{{{0, 1, 0, 0, 0}, {0, 1, 0, 0, 0}}};
  CHECK(leading_coefficient(dead).annihilated);
}

TEST_CASE("scale invariance of the normalized run") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = random_schedule(2 + trial % 10, rng, 2.0);
    auto lam = testutil::random_vector(15, rng, -2.0, 2.0);
    auto z = testutil::random_vector(15, rng);
    auto a = run_recurrence_diagonal(s, lam, z, true).value();
    auto b = run_recurrence_diagonal(s, lam, z, false).value();
    double m = max_abs(b);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-8 * m);
  }
}

TEST_CASE("Prop. 1: rho = 0 gives the affine three-term recurrence") {
  std::mt19937_64 rng(6);
  for (int d = 2; d <= 10; ++d) {
    auto s = random_schedule(d, rng);
    for (auto& st : s.steps) st.rho = 0.0;
    double x = std::uniform_real_distribution<double>(-1.5, 1.5)(rng);
    // brute-force: C_0 = 1, C_1 = x, C_{k+1} = g + e C_{k-1} + a C_k + b x C_k
    double cm = 1.0, c = x;
    VectorState st = init_state_diagonal({x}, {1.0});
    for (int k = 0; k + 1 < d; ++k) {
      const auto& t = s.steps[k];
      double cn = t.gamma + t.eta * cm + t.alpha * c + t.beta * x * c;
      cm = c;
      c = cn;
      apply_transition_diagonal(st, {x}, t, false);
      CHECK(std::abs(st.C[0] - c) <= 1e-12 * std::max(1.0, std::abs(c)));
      CHECK(st.A[0] == 1.0);
    }
  }
}

TEST_CASE("Prop. 2: gamma = 0 and accumulator readout") {
  std::mt19937_64 rng(7);
  for (int d = 2; d <= 10; ++d) {
    auto s = random_schedule(d, rng);
    for (int k = 0; k + 1 < d; ++k) s.steps[k].gamma = 0.0;
    double gd = s.steps.back().gamma;
    s.steps.back() = {0, gd, 0, 0, 0};
    double x = std::uniform_real_distribution<double>(-1.5, 1.5)(rng);
    double cm = 1.0, c = x, sum = 1.0;
    for (int k = 0; k + 1 < d; ++k) {
      const auto& t = s.steps[k];
      sum += t.rho * c;
      double cn = t.eta * cm + t.alpha * c + t.beta * x * c;
      cm = c;
      c = cn;
    }
    double expect = gd * sum;
    double got = run_recurrence_diagonal(s, {x}, {1.0}, false).value()[0];
    CHECK(std::abs(got - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
  }
}

TEST_CASE("spectral commutation and matvec budget") {
  std::mt19937_64 rng(8);
  auto lam = testutil::random_vector(25, rng, 0.1, 2.0);
  auto op = SparseOperator::from_diagonal(lam);
  for (int d = 1; d <= 12; ++d) {
    auto s = random_schedule(d, rng);
    auto z = testutil::random_vector(25, rng);
    CountingOperator counter(op);
    auto v = run_recurrence(s, counter, z);
    CHECK(counter.count() == static_cast<std::size_t>(d + 1));
    auto g = run_recurrence_diagonal(s, lam, z);
    CHECK(v.log_scale == doctest::Approx(g.log_scale).epsilon(1e-12));
    auto vv = v.value(), gv = g.value();
    for (std::size_t i = 0; i < 25; ++i) CHECK(std::abs(vv[i] - gv[i]) <= 1e-12 * std::max(1.0, max_abs(gv)));
  }
}

TEST_CASE("dense mode agrees with vector mode") {
  std::mt19937_64 rng(9);
  auto m = testutil::random_symmetric(8, rng);
  auto s = random_schedule(6, rng);
  auto dr = run_recurrence_dense(s, m).value();
  DenseOperator op(m);
  for (std::size_t j = 0; j < 8; ++j) {
    Vector e(8, 0.0);
    e[j] = 1.0;
    auto col = run_recurrence(s, op, e).value();
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(col[i] - dr(i, j)) <= 1e-10 * std::max(1.0, max_abs(col)));
  }
}

TEST_CASE("rescale_schedule") {
  std::mt19937_64 rng(10);
  for (int d = 1; d <= 8; ++d) {
    auto s = random_schedule(d, rng);
    auto r = rescale_schedule(s, 3.7, 0.25);
    for (double x : {0.2, 1.0, 2.9}) {
      double expect = 0.25 * evaluate_polynomial(s, {x / 3.7})[0];
      CHECK(testutil::rel_err(evaluate_polynomial(r, {x})[0], expect) <= 1e-12);
    }
  }
}

TEST_CASE("schedule JSON round trip is bitwise") {
  std::mt19937_64 rng(11);
  auto s = random_schedule(7, rng);
  auto back = schedule_from_json(nlohmann::json::parse(schedule_to_json(s).dump()));
  CHECK(back == s);
  CHECK_THROWS(schedule_from_json(nlohmann::json::parse(R"({"degree":2,"steps":[[1,2,3,4,5]]})")));
}
