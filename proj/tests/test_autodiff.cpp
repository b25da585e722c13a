#include <cmath>
#include <random>

#include "doctest.h"
#include "polyrec/autodiff.hpp"
#include "test_util.hpp"

using namespace polyrec;
using namespace polyrec::ad;

TEST_CASE("spec examples") {
  Tape t;
  Var x = t.leaf(3.0);
  Var y = x * x;
  t.backward(y);
  CHECK(t.grad(x)[0] == 6.0);

  Tape t2;
  Var a = t2.leaf(0.5);
  Var c = clamp_below(a, 1.0);
  t2.backward(c);
  CHECK(c.scalar() == 1.0);
  CHECK(t2.grad(a)[0] == 0.0);

  Tape t3;
  Var v = t3.leaf(Vector{2, 1, 3});
  t3.backward(min_reduce(v));
  CHECK(t3.grad(v) == Vector{0, 1, 0});

  Tape t4;
  Var w = t4.leaf(Vector{4, 5, 6});
  Var lonely = t4.leaf(Vector{1, 2});
  t4.backward(sum(w));
  CHECK(t4.grad(w) == Vector{1, 1, 1});
  CHECK(t4.grad(lonely) == Vector{0, 0});
}

TEST_CASE("errors") {
  Tape t;
  Var v = t.leaf(Vector{1, -1});
  CHECK_THROWS_AS(log(v), std::domain_error);
  CHECK_THROWS_AS(sqrt(v), std::domain_error);
  CHECK_THROWS_AS(log(t.leaf(0.0)), std::domain_error);
  CHECK_THROWS_AS(t.backward(v), DimensionError);
  Tape other;
  CHECK_THROWS(add(v, other.leaf(1.0)));
  CHECK_THROWS_AS(add(v, t.leaf(Vector{1, 2, 3})), DimensionError);
}

TEST_CASE("subgradient conventions") {
  Tape t;
  Var v = t.leaf(Vector{1, 3, 3, 0});
  t.backward(max_reduce(v) + kth_largest(v, 2) + sum(abs(v)));
  // max goes to first 3, second-largest to the other 3, |0| gets 0
  CHECK(t.grad(v) == Vector{1, 2, 2, 0});

  Tape t2;
  Var s = t2.leaf(Vector{0.5, -2, 1});
  Var sorted = sort_desc(s);
  CHECK(sorted.value() == Vector{1, 0.5, -2});
  t2.backward(sum(t2.constant(Vector{10, 20, 30}) * sorted));
  CHECK(t2.grad(s) == Vector{20, 30, 10});
}

namespace {
std::vector<std::pair<const char*, TapeProgram>> primitive_programs() {
  return {
      {"add", [](Tape&, Var x) { return sum(x + slice(concat({slice(x, 1, x.size() - 1), slice(x, 0, 1)}), 0, x.size())); }},
      {"sub", [](Tape& t, Var x) { return sum(x - t.constant(Vector(x.size(), 0.3)) * x * x); }},
      {"mul", [](Tape&, Var x) { return sum(x * x * element(x, 0)); }},
      {"div", [](Tape&, Var x) { return sum(element(x, 1) / (x * x + 1.0)); }},
      {"neg_scale", [](Tape&, Var x) { return sum(scale(-x * x, 2.5)); }},
      {"abs", [](Tape&, Var x) { return sum(abs(x) * x); }},
      {"exp", [](Tape&, Var x) { return sum(exp(x)); }},
      {"log", [](Tape&, Var x) { return sum(log(x * x + 0.1)); }},
      {"sqrt", [](Tape&, Var x) { return sum(sqrt(x * x + 0.5)); }},
      {"clamp", [](Tape&, Var x) { return sum(clamp_below(x, 0.0) * x); }},
      {"min_max", [](Tape&, Var x) { return min_reduce(x * x) * max_reduce(x); }},
      {"kth", [](Tape&, Var x) { return kth_largest(x, 3) * element(x, 2); }},
      {"sort", [](Tape& t, Var x) {
         Vector w(x.size());
         for (std::size_t i = 0; i < w.size(); ++i) w[i] = i + 1.0;
         return sum(t.constant(w) * sort_desc(x * x));
       }},
      {"gelu", [](Tape&, Var x) { return sum(gelu(x) * x); }},
      {"matvec", [](Tape&, Var x) {
         // x holds a 3x2 matrix then a 3-vector
         Var w = slice(x, 0, 6), v = slice(x, 6, 3);
         return sum(gelu(matvec_t(w, v, 3, 2)));
       }},
      {"mean", [](Tape&, Var x) { return mean(x * x) * mean(x); }},
  };
}

// true when x sits at least `gap` away from every kink of the primitives above
bool separated(const Vector& x, double gap) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) < gap) return false;
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(x[i] - x[j]) < gap || std::abs(std::abs(x[i]) - std::abs(x[j])) < gap) return false;
  }
  return true;
}
}  // namespace

TEST_CASE("every primitive matches central differences on 100 random points") {
  std::mt19937_64 rng(7);
  for (auto& [name, f] : primitive_programs()) {
    int tried = 0;
    double worst = 0;
    while (tried < 100) {
      auto x = testutil::random_vector(9, rng, -2, 2);
      if (!separated(x, 1e-3)) continue;
      ++tried;
      auto rep = gradcheck(f, x, 1e-5, 1e-5);
      worst = std::max(worst, rep.max_rel_error);
    }
    INFO(name);
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("gradcheck") {
  std::mt19937_64 rng(3);
  auto x = testutil::random_vector(6, rng);
  auto norm = gradcheck([](Tape&, Var v) { return sum(v * v); }, x, 1e-5, 1e-6);
  CHECK(norm.passed);
  CHECK(norm.excluded.empty());

  auto kink = gradcheck([](Tape&, Var v) { return sum(abs(v)); }, Vector{0.0, 0.7}, 1e-5, 1e-6);
  CHECK(kink.excluded == std::vector<std::size_t>{0});
  CHECK(kink.passed);
}

TEST_CASE("backward visits every node once") {
  Tape t;
  Var x = t.leaf(Vector{1, 2, 3});
  Var y = sum(gelu(x) * x + exp(x));
  t.backward(y);
  CHECK(t.visited() == t.size());
  // a second backward resets and recounts
  t.backward(y);
  CHECK(t.visited() == t.size());
}

TEST_CASE("gelu is the exact Gaussian CDF form") {
  CHECK(gelu_value(0.0) == 0.0);
  CHECK(gelu_value(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-15));
  CHECK(gelu_value(-1.0) == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
  for (double x : {-3.0, -0.2, 0.4, 2.0}) CHECK(gelu_value(x) - gelu_value(-x) == doctest::Approx(x).epsilon(1e-14));
}
