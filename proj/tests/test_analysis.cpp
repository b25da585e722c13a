#include <cmath>
#include <random>

#include "doctest.h"
#include "polyrec/analysis.hpp"
#include "polyrec/baselines.hpp"
#include "polyrec/training.hpp"
#include "test_util.hpp"

using namespace polyrec;

namespace {

CoefficientSchedule random_schedule(int d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  CoefficientSchedule s;
  for (int k = 0; k < d; ++k) s.steps.push_back({u(rng), u(rng), u(rng), u(rng), u(rng)});
  return s;
}

double rosenbrock(const Vector& v) {
  return 100.0 * (v[1] - v[0] * v[0]) * (v[1] - v[0] * v[0]) + (1.0 - v[0]) * (1.0 - v[0]);
}

}  // namespace

TEST_CASE("nelder_mead") {
  auto sphere = nelder_mead([](const Vector& v) { return v[0] * v[0] + v[1] * v[1]; }, {1.0, 1.0});
  CHECK(sphere.value <= 1e-8);
  CHECK(std::abs(sphere.x[0]) <= 1e-4);

  auto rb = nelder_mead(rosenbrock, {-1.2, 1.0});
  CHECK(std::abs(rb.x[0] - 1.0) <= 1e-4);
  CHECK(std::abs(rb.x[1] - 1.0) <= 1e-4);
  CHECK(rb.evals <= 2000 + 2);

  auto flat = nelder_mead([](const Vector&) { return 3.0; }, {0.25, -2.0});
  CHECK(flat.x == Vector{0.25, -2.0});
  CHECK(flat.value == 3.0);

  // eval budget
  NelderMeadConfig tight;
  tight.max_evals = 30;
  auto capped = nelder_mead(rosenbrock, {-1.2, 1.0}, tight);
  CHECK(capped.evals <= 30 + 2);
  CHECK(capped.value <= rosenbrock({-1.2, 1.0}));

  // the trace never increases
  for (std::size_t i = 1; i < rb.trace.size(); ++i) CHECK(rb.trace[i] <= rb.trace[i - 1]);

  // NaN is treated as +inf
  auto guarded = nelder_mead([](const Vector& v) { return v[0] < 0 ? std::nan("") : (v[0] - 1) * (v[0] - 1); }, {0.5});
  CHECK(guarded.x[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("monomial_schedule") {
  std::mt19937_64 rng(8);
  for (int d : {1, 2, 5, 21}) {
    auto c = testutil::random_vector(d + 1, rng);
    auto s = monomial_schedule(c);
    auto back = to_poly_coefficients(s);
    for (int i = 0; i <= d; ++i) CHECK(back[i] == doctest::Approx(c[i]).epsilon(1e-12));
    for (double x : {-1.3, 0.0, 0.7}) CHECK(evaluate_polynomial(s, {x})[0] == doctest::Approx(horner(c, x)).epsilon(1e-10));
  }
  CHECK_THROWS(monomial_schedule({1.0}));
}

TEST_CASE("minimax objective matches a brute-force expansion") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_schedule(1 + trial % 7, rng);
    auto c = to_poly_coefficients(s);
    while (c.size() > 1 && c.back() == 0.0) c.pop_back();
    const int deg = int(c.size()) - 1;
    double c1 = std::exp(testutil::random_vector(1, rng, -2, 2)[0]), c2 = testutil::random_vector(1, rng)[0];
    double mx = 0.0;
    const double pi = std::acos(-1.0);
    for (int j = 0; j < 256; ++j) mx = std::max(mx, std::abs(horner(c, c1 * std::cos(pi * j / 255.0) + c2)));
    double oracle = mx / std::abs(c.back() * std::pow(c1, deg));
    CHECK(std::exp(minimax_log_objective(s, c1, c2, 256)) == doctest::Approx(oracle).epsilon(1e-9));
  }
  CHECK(std::isinf(minimax_log_objective(chebyshev_schedule(3), 0.0, 0.0)));
  CHECK(std::isinf(minimax_log_objective(chebyshev_schedule(3), -1.0, 0.0)));
}

TEST_CASE("minimax_gap on Chebyshev polynomials") {
  auto r5 = minimax_gap(chebyshev_schedule(5));
  CHECK(r5.degree == 5);
  CHECK(r5.bound == 0.0625);
  CHECK(std::abs(r5.L - 0.0625) <= 1e-6);
  CHECK(r5.c1 == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(std::abs(r5.c2) <= 1e-4);

  auto r21 = minimax_gap(chebyshev_schedule(21));
  CHECK(r21.degree == 21);
  CHECK(std::abs(r21.L / std::pow(2.0, -20) - 1.0) <= 1e-3);
  CHECK(r21.L <= std::pow(2.0, -20) * (1 + 1e-4));
  CHECK(r21.L <= r21.grid_best);
  CHECK(r21.gap == r21.L);

  // a Chebyshev filter on [a, b] has its window at ((b - a)/2, (a + b)/2)
  auto f = cheb_eigen_filter(11, {0.2, 0.9, "test"});
  auto rf = minimax_gap(f);
  CHECK(rf.L / std::pow(2.0, -10) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(rf.c1 == doctest::Approx(0.35).epsilon(1e-3));
  CHECK(rf.c2 == doctest::Approx(0.55).epsilon(1e-3));

  auto j = minimax_to_json(r5);
  CHECK(j["L"].get<double>() == r5.L);
  CHECK(j["grid"]["samples"].get<int>() == 2048);
}

TEST_CASE("minimax_gap scale invariance and random schedules") {
  auto base = cheb_eigen_filter(9, {0.1, 0.8, "test"});
  MinimaxGrid coarse;
  coarse.c1_points = coarse.c2_points = 21;
  auto r0 = minimax_gap(base, coarse);
  for (double c : {1e-3, 5.0, 1e6}) {
    auto r = minimax_gap(rescale_schedule(base, 1.0, c), coarse);
    CHECK(std::abs(r.L - r0.L) <= 1e-10 * r0.L);
  }
  auto neg = base;
  for (auto* v : {&neg.steps.back().gamma, &neg.steps.back().eta, &neg.steps.back().alpha, &neg.steps.back().beta})
    *v = -*v;
  CHECK(std::abs(minimax_gap(neg, coarse).L - r0.L) <= 1e-10 * r0.L);

  // random monomial coefficients sit far above the bound
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (int t = 0; t < 3; ++t) {
    std::vector<double> c(22);
    for (double& v : c) v = g(rng);
    auto r = minimax_gap(monomial_schedule(c));
    CHECK(r.degree == 21);
    CHECK(r.L >= 0.1);
  }
  // random recurrence scalars still respect the monic lower bound
  for (int t = 0; t < 2; ++t) {
    auto r = minimax_gap(random_schedule(21, rng), coarse);
    CHECK(r.L >= r.bound * (1 - 1e-4));
  }

  CoefficientSchedule dead;
  dead.steps.push_back({0, 1, 0, 0, 0});
  CHECK_THROWS(minimax_gap(dead));
}

TEST_CASE("estimate_condition") {
  Vector d(100);
  for (int i = 0; i < 100; ++i) d[i] = i + 1.0;
  DiagonalOperator x(d);
  auto e = estimate_condition(x);
  CHECK(e.cond == doctest::Approx(100.0).epsilon(0.05));
  CHECK_FALSE(e.indefinite);

  DiagonalOperator id(Vector(50, 1.0));
  CHECK(estimate_condition(id).cond == doctest::Approx(1.0).epsilon(1e-12));

  DiagonalOperator indef(Vector{-1.0, 2.0, 3.0});
  CHECK(estimate_condition(indef).indefinite);

  // the exact inverse interpolant makes P(X) X the identity on the spectrum
  Vector small{1, 2, 4, 8, 16};
  DiagonalOperator xs(small);
  Vector inv;
  for (double v : small) inv.push_back(1.0 / v);
  auto p = interpolation_schedule(small, inv);
  CHECK(estimate_condition(composed_operator(xs, p)).cond == doctest::Approx(1.0).epsilon(1e-8));

  // a Chebyshev preconditioner shrinks the condition number
  Vector wide(400);
  for (int i = 0; i < 400; ++i) wide[i] = 1.0 + 9999.0 * i / 399.0;
  DiagonalOperator xw(wide);
  auto cheb = cheb_system_precond(11, {1.0, 10000.0 * 1.02, "test"});
  auto pre = estimate_condition(composed_operator(xw, cheb));
  CHECK(pre.cond < estimate_condition(xw).cond / 20.0);
  // oracle: direct evaluation of lambda P(lambda) on the spectrum
  Vector pv = evaluate_polynomial(cheb, wide);
  double lo = 1e300, hi = 0;
  for (int i = 0; i < 400; ++i) lo = std::min(lo, wide[i] * pv[i]), hi = std::max(hi, wide[i] * pv[i]);
  CHECK(pre.cond == doctest::Approx(hi / lo).epsilon(0.05));
}

TEST_CASE("rho_log_report delegates") {
  CHECK(*rho_log_report(0.5, 0.5) == doctest::Approx(1.0));
  CHECK(*rho_log_report(0.25, 0.5) == doctest::Approx(2.0));
  CHECK(rho_log_report(0.25, 0.5) == rho_log(0.25, 0.5));
  CHECK(rho_log_report(0.3, 1.0) == rho_log(0.3, 1.0));
}

TEST_CASE("poly_plot_data") {
  auto t3 = chebyshev_schedule(3);
  auto d = poly_plot_data(t3, -1.0, 1.0, 3, false);
  CHECK(d.p[0] == doctest::Approx(-1.0));
  CHECK(std::abs(d.p[1]) <= 1e-15);
  CHECK(d.p[2] == doctest::Approx(1.0));
  CHECK_FALSE(d.fit);

  for (int n : {3, 6, 11}) {
    auto self = poly_plot_data(chebyshev_schedule(n), -1.0, 1.0, 401);
    REQUIRE(self.fit);
    CHECK(std::abs(self.fit->a - 1.0) <= 1e-8);
    CHECK(std::abs(self.fit->b - 1.0) <= 1e-8);
    CHECK(std::abs(self.fit->c) <= 1e-8);
    CHECK(std::abs(self.fit->d0) <= 1e-8);
  }

  // an affinely distorted Chebyshev filter fits exactly; random polynomials do not
  auto filt = poly_plot_data(rescale_schedule(cheb_eigen_filter(8, {0.5, 3.0, "test"}), 1.0, 4.0), 0.0, 3.5, 301);
  std::mt19937_64 rng(5);
  auto rnd = poly_plot_data(random_schedule(8, rng), 0.0, 3.5, 301);
  REQUIRE(filt.fit);
  REQUIRE(rnd.fit);
  CHECK(filt.fit->residual <= 1e-8);
  CHECK(rnd.fit->residual > 10 * filt.fit->residual);
  CHECK(rnd.fit->residual > 1e-3);

  auto csv = plot_csv(d);
  CHECK(csv.rfind("x,p\n", 0) == 0);
  CHECK_THROWS(poly_plot_data(t3, 1.0, 1.0, 10));
  CHECK_THROWS(poly_plot_data(t3, 0.0, INFINITY, 10));
}
